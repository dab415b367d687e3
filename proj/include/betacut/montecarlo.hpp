#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

#include "asymptotics.hpp"
#include "equilibrium.hpp"
#include "parallel.hpp"
#include "potential.hpp"

namespace betacut {

struct MCConfig {
  int N = 100;
  double beta = 2.0;
  long sweeps = 20000;  // total, burn-in included
  long burn_in = 2000;
  double step = 0.0;  // proposal half-width; 0 = from the support width
  int chains = 1;
  std::uint64_t seed = 1;
  int thin = 1;  // keep every thin-th post-burn-in sweep

  void check() const {
    if (N < 1) throw std::invalid_argument("mc: N must be >= 1");
    if (!(beta > 0)) throw std::invalid_argument("mc: beta must be positive");
    if (!(sweeps > burn_in) || burn_in < 0) throw std::invalid_argument("mc: need sweeps > burn_in >= 0");
    if (chains < 1 || thin < 1) throw std::invalid_argument("mc: chains and thin must be >= 1");
  }
};

struct MCEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double n_eff = 0.0;
};

struct MCEstimateC {
  cplx value = 0.0;
  double std_error = 0.0;
  double n_eff = 0.0;
};

struct MCRun {
  MCConfig cfg;
  Poly V;  // the N-resummed potential actually sampled
  EdgeConfig edges;
  std::vector<std::vector<double>> configs;
  std::vector<long> sweep_index;
  std::vector<int> chain_index;
  double acceptance = 0.0;
  double step = 0.0;

  std::size_t size() const { return configs.size(); }
};

// per-sweep generator keyed by (seed, chain, sweep)
inline std::mt19937_64 sweep_rng(std::uint64_t seed, int chain, long sweep) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(chain), static_cast<std::uint32_t>(sweep),
                   static_cast<std::uint32_t>(static_cast<std::uint64_t>(sweep) >> 32)};
  return std::mt19937_64(sq);
}

// change of log density when lambda_i moves to y
inline double log_weight_delta(const std::vector<double>& lam, std::size_t i, double y, const Poly& V, double beta) {
  const int N = static_cast<int>(lam.size());
  const double x = lam[i];
  double d = -0.5 * N * beta * (poly_eval(V, y) - poly_eval(V, x));
  double num = 1.0, den = 1.0, acc = 0.0;
  int c = 0;
  for (int j = 0; j < N; ++j) {
    if (static_cast<std::size_t>(j) == i) continue;
    num *= std::abs(y - lam[j]);
    den *= std::abs(x - lam[j]);
    if (++c == 8) {
      acc += std::log(num / den);
      num = den = 1.0;
      c = 0;
    }
  }
  acc += std::log(num / den);
  return d + beta * acc;
}

inline double log_weight(const std::vector<double>& lam, const Poly& V, double beta) {
  const int N = static_cast<int>(lam.size());
  double r = 0.0;
  for (int i = 0; i < N; ++i) {
    r -= 0.5 * N * beta * poly_eval(V, lam[i]);
    for (int j = i + 1; j < N; ++j) r += beta * std::log(std::abs(lam[i] - lam[j]));
  }
  return r;
}

inline double reflect(double y, double a, double b) {
  for (int it = 0; it < 64 && (y < a || y > b); ++it) y = y > b ? 2.0 * b - y : 2.0 * a - y;
  return std::clamp(y, a, b);
}

// one Metropolis sweep in site order; returns accepted moves
inline int metropolis_sweep(std::vector<double>& lam, const Poly& V, double beta, double a, double b, double step,
                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0), U01(0.0, 1.0);
  int acc = 0;
  for (std::size_t i = 0; i < lam.size(); ++i) {
    double y = reflect(lam[i] + step * U(rng), a, b);
    double d = log_weight_delta(lam, i, y, V, beta);
    if (d >= 0.0 || U01(rng) < std::exp(d)) {
      lam[i] = y;
      ++acc;
    }
  }
  return acc;
}

inline MCRun run_chain(const Poly& V, const EdgeConfig& e, const MCConfig& cfg, double am, double ap) {
  cfg.check();
  e.check();
  const double a = e.a_minus, b = e.a_plus;
  MCRun run;
  run.cfg = cfg;
  run.V = V;
  run.edges = e;
  struct Out {
    std::vector<std::vector<double>> configs;
    std::vector<long> idx;
    long acc = 0, prop = 0;
    double step = 0.0;
  };
  std::vector<Out> outs(cfg.chains);
  parallel_for(cfg.chains, [&](std::size_t c) {
    const int N = cfg.N;
    std::vector<double> lam(N);
    for (int i = 0; i < N; ++i) lam[i] = am + (ap - am) * (i + 0.5) / N;
    double step = cfg.step > 0 ? cfg.step : 2.0 * (ap - am) / N;
    step = std::min(step, 0.5 * (b - a));
    Out& o = outs[c];
    long win_acc = 0, win_prop = 0;
    for (long s = 0; s < cfg.sweeps; ++s) {
      auto rng = sweep_rng(cfg.seed, static_cast<int>(c), s);
      int k = metropolis_sweep(lam, V, cfg.beta, a, b, step, rng);
      if (s < cfg.burn_in) {
        win_acc += k;
        win_prop += N;
        if (win_prop >= 50L * N) {
          double r = static_cast<double>(win_acc) / win_prop;
          if (r > 0.5) step = std::min(step * 1.25, 0.5 * (b - a));
          if (r < 0.3) step /= 1.25;
          win_acc = win_prop = 0;
        }
        continue;
      }
      o.acc += k;
      o.prop += N;
      if ((s - cfg.burn_in) % cfg.thin == 0) {
        o.configs.push_back(lam);
        o.idx.push_back(s);
      }
    }
    o.step = step;
  });
  long acc = 0, prop = 0;
  for (int c = 0; c < cfg.chains; ++c) {
    auto& o = outs[c];
    acc += o.acc;
    prop += o.prop;
    for (std::size_t t = 0; t < o.configs.size(); ++t) {
      run.configs.push_back(std::move(o.configs[t]));
      run.sweep_index.push_back(o.idx[t]);
      run.chain_index.push_back(c);
    }
    run.step = o.step;
  }
  run.acceptance = prop ? static_cast<double>(acc) / prop : 0.0;
  if (run.acceptance <= 0.0) throw NumericalFailure("step tuning failed");
  return run;
}

inline MCRun sample_chain(const PotentialSpec& spec, const EdgeConfig& e, const MCConfig& cfg) {
  if (!std::isfinite(e.a_minus) || !std::isfinite(e.a_plus))
    throw std::invalid_argument("sample_chain: finite working interval required");
  Poly V = resum(spec, cfg.N);
  double am = e.a_minus, ap = e.a_plus;
  try {
    auto eq = solve_equilibrium(spec.orders.at(0), e);
    am = eq.support.alpha_minus;
    ap = eq.support.alpha_plus;
  } catch (const std::exception&) {
  }
  return run_chain(V, e, cfg, am, ap);
}

inline void write_chain_csv(std::ostream& os, const MCRun& run) {
  os << "# sweep index, then the N eigenvalues of that sweep\n";
  os.precision(17);
  for (std::size_t t = 0; t < run.size(); ++t) {
    os << run.sweep_index[t];
    for (double v : run.configs[t]) os << "," << v;
    os << "\n";
  }
}

// ---- batch means ----------------------------------------------------------

inline MCEstimate batch_means(const std::vector<double>& x, int B = 32) {
  const std::size_t n = x.size();
  if (n < static_cast<std::size_t>(2 * B)) throw std::runtime_error("insufficient effective samples");
  MCEstimate e;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  e.value = mean;
  const std::size_t len = n / B;
  double var_b = 0.0;
  for (int b = 0; b < B; ++b) {
    double m = 0.0;
    for (std::size_t t = b * len; t < (b + 1) * len; ++t) m += x[t];
    m /= len;
    var_b += (m - mean) * (m - mean);
  }
  var_b /= (B - 1);
  e.std_error = std::sqrt(var_b / B);
  double s2 = 0.0;
  for (double v : x) s2 += (v - mean) * (v - mean);
  s2 /= (n - 1);
  e.n_eff = e.std_error > 0 ? s2 / (e.std_error * e.std_error) : static_cast<double>(n);
  return e;
}

// nonlinear functional F(range) of the series, error from its spread over batches
template <class F>
MCEstimate batch_functional(std::size_t n, F&& f, int B = 32) {
  if (n < static_cast<std::size_t>(2 * B)) throw std::runtime_error("insufficient effective samples");
  MCEstimate e;
  e.value = f(std::size_t{0}, n);
  const std::size_t len = n / B;
  std::vector<double> v(B);
  double m = 0.0;
  for (int b = 0; b < B; ++b) m += (v[b] = f(b * len, (b + 1) * len));
  m /= B;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  e.std_error = std::sqrt(s / (B - 1) / B);
  e.n_eff = static_cast<double>(n);
  return e;
}

// ---- Stein control variates ----------------------------------------------
//
// For psi vanishing at both ends of the box, E[sum psi' - (N beta/2) sum V' psi
// + (beta/2) sum_{i != j} (psi_i - psi_j)/(lambda_i - lambda_j)] = 0 exactly.

struct SteinBasis {
  double mid = 0.0, half = 1.0;  // u = (lambda - mid) / half
  std::vector<Poly> psi;         // in u
  Poly vprime_u;                 // V'(mid + half u)
  int cross = 0;                 // also psi_i = phi(lambda_i) sum_j u_j^b, b = 1..cross
  int degree = 0;                // max degree over all needed power sums
  int N = 1;
  double beta = 2.0;
};

inline Poly poly_compose_affine(const Poly& p, double mid, double half) {
  Poly r, pw{1.0};
  for (std::size_t k = 0; k < p.size(); ++k) {
    r = poly_add(r, pw, 1.0, p[k]);
    pw = poly_mul(pw, Poly{mid, half});
  }
  return r;
}

inline SteinBasis stein_basis(const MCRun& run, int count, int cross = 0) {
  SteinBasis sb;
  sb.cross = cross;
  const auto& e = run.edges;
  sb.mid = 0.5 * (e.a_minus + e.a_plus);
  sb.half = 0.5 * (e.a_plus - e.a_minus);
  sb.N = run.cfg.N;
  sb.beta = run.cfg.beta;
  // box edges at u = -1, 1; T_m(u / s) keeps the basis well conditioned on the bulk
  double s = 1.0;
  {
    double lo = 1e300, hi = -1e300;
    for (auto& c : run.configs)
      for (double x : c) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    if (hi > lo) s = std::max(std::abs((lo - sb.mid) / sb.half), std::abs((hi - sb.mid) / sb.half));
  }
  Poly l2{-1.0, 0.0, 1.0};
  Poly t0{1.0}, t1{0.0, 1.0 / s};
  for (int m = 0; m < count; ++m) {
    sb.psi.push_back(poly_mul(l2, t0));
    Poly t2 = poly_add(poly_mul(Poly{0.0, 2.0 / s}, t1), t0, 1.0, -1.0);
    t0 = t1;
    t1 = t2;
  }
  sb.vprime_u = poly_compose_affine(poly_derivative(run.V), sb.mid, sb.half);
  int dv = std::max(poly_degree(sb.vprime_u), 0);
  sb.degree = std::max(count + 2 + dv, count + 1 + cross);
  return sb;
}

inline std::vector<double> stein_statistics(const SteinBasis& sb, const std::vector<double>& lam) {
  const int D = sb.degree;
  std::vector<double> P(D + 1, 0.0);
  for (double x : lam) {
    double u = (x - sb.mid) / sb.half, p = 1.0;
    for (int k = 0; k <= D; ++k) {
      P[k] += p;
      p *= u;
    }
  }
  auto psum = [&](const Poly& q) {
    double r = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) r += q[k] * P[k];
    return r;
  };
  std::vector<double> out;
  for (const auto& psi : sb.psi) {
    double d1 = psum(poly_derivative(psi)) / sb.half;
    double vp = psum(poly_mul(sb.vprime_u, psi));
    double pair = 0.0;  // sum_{i != j} (psi_i - psi_j) / (lambda_i - lambda_j)
    for (std::size_t p = 1; p < psi.size(); ++p) {
      double s = 0.0;
      for (std::size_t a = 0; a < p; ++a) s += P[a] * P[p - 1 - a];
      pair += psi[p] * (s - static_cast<double>(p) * P[p - 1]);
    }
    pair /= sb.half;
    out.push_back(d1 - 0.5 * sb.N * sb.beta * vp + 0.5 * sb.beta * pair);
  }
  // d/d lambda_i of sum_j u_j^b is b u_i^{b-1} / half
  const std::size_t lin = out.size();
  for (int b = 1; b <= sb.cross; ++b)
    for (std::size_t m = 0; m < lin; ++m) {
      Poly mono(b, 0.0);
      mono[b - 1] = b / sb.half;
      Poly q = poly_mul(sb.psi[m], mono);
      out.push_back(P[b] * out[m] + psum(q));
    }
  return out;
}

// mean of f with the optimal linear combination of the Stein statistics removed
inline MCEstimate cv_mean(const std::vector<double>& f, const std::vector<std::vector<double>>& A, int B = 32) {
  const std::size_t n = f.size();
  const int m = A.empty() ? 0 : static_cast<int>(A[0].size());
  if (m == 0) return batch_means(f, B);
  Eigen::MatrixXd X(n, m);
  Eigen::VectorXd y(n);
  for (std::size_t t = 0; t < n; ++t) {
    y(t) = f[t];
    for (int k = 0; k < m; ++k) X(t, k) = A[t][k];
  }
  Eigen::RowVectorXd xm = X.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - xm;
  Eigen::VectorXd yc = y.array() - y.mean();
  Eigen::VectorXd c = Xc.colPivHouseholderQr().solve(yc);
  std::vector<double> g(n);
  for (std::size_t t = 0; t < n; ++t) g[t] = f[t] - X.row(t).dot(c);
  return batch_means(g, B);
}

// ---- estimators -----------------------------------------------------------

struct EstimatorOptions {
  int batches = 32;
  int cv_count = 0;  // Stein control variates for one-point quantities, 0 = off
  int cv_cross = 0;
};

// joint cumulants of sum_i 1/(x - lambda_i) at points[0..n-1], n = 1..nmax
inline std::map<int, MCEstimateC> estimate_correlators(const MCRun& run, const std::vector<cplx>& points, int nmax,
                                                       const EstimatorOptions& o = {}) {
  if (nmax < 1 || nmax > 3) throw std::invalid_argument("estimate_correlators: 1 <= nmax <= 3");
  if (static_cast<int>(points.size()) < nmax) throw std::invalid_argument("estimate_correlators: too few points");
  const std::size_t n = run.size();
  std::vector<std::vector<cplx>> f(nmax, std::vector<cplx>(n));
  for (std::size_t t = 0; t < n; ++t)
    for (int k = 0; k < nmax; ++k) {
      cplx s = 0.0;
      for (double x : run.configs[t]) s += 1.0 / (points[k] - x);
      f[k][t] = s;
    }
  std::map<int, MCEstimateC> out;
  {
    std::vector<double> re(n), im(n);
    for (std::size_t t = 0; t < n; ++t) {
      re[t] = f[0][t].real();
      im[t] = f[0][t].imag();
    }
    MCEstimate er, ei;
    if (o.cv_count > 0) {
      auto sb = stein_basis(run, o.cv_count, o.cv_cross);
      std::vector<std::vector<double>> A(n);
      for (std::size_t t = 0; t < n; ++t) A[t] = stein_statistics(sb, run.configs[t]);
      er = cv_mean(re, A, o.batches);
      ei = cv_mean(im, A, o.batches);
    } else {
      er = batch_means(re, o.batches);
      ei = batch_means(im, o.batches);
    }
    out[1] = {cplx(er.value, ei.value), std::hypot(er.std_error, ei.std_error), std::min(er.n_eff, ei.n_eff)};
  }
  auto cumulant = [&](int order, std::size_t b, std::size_t e) {
    std::vector<cplx> m(order, 0.0);
    const double len = static_cast<double>(e - b);
    for (int k = 0; k < order; ++k) {
      for (std::size_t t = b; t < e; ++t) m[k] += f[k][t];
      m[k] /= len;
    }
    cplx s = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      cplx p = 1.0;
      for (int k = 0; k < order; ++k) p *= f[k][t] - m[k];
      s += p;
    }
    return s / len;
  };
  for (int order = 2; order <= nmax; ++order) {
    auto re = batch_functional(n, [&](std::size_t b, std::size_t e) { return cumulant(order, b, e).real(); },
                               o.batches);
    auto im = batch_functional(n, [&](std::size_t b, std::size_t e) { return cumulant(order, b, e).imag(); },
                               o.batches);
    out[order] = {cplx(re.value, im.value), std::hypot(re.std_error, im.std_error), re.n_eff};
  }
  return out;
}

struct LinearStatistic {
  MCEstimate mean, var, kurtosis;
};

// sum h(lambda_i) - N \int h d mu_eq
inline LinearStatistic estimate_linear_statistic(const MCRun& run, const Poly& h, const EquilibriumData& eq,
                                                 const EstimatorOptions& o = {}) {
  const double mu = oint_poly(h, eq.w1m1).real();
  const std::size_t n = run.size();
  std::vector<double> s(n);
  for (std::size_t t = 0; t < n; ++t) {
    double v = 0.0;
    for (double x : run.configs[t]) v += poly_eval(h, x);
    s[t] = v - run.cfg.N * mu;
  }
  LinearStatistic r;
  if (o.cv_count > 0) {
    auto sb = stein_basis(run, o.cv_count, o.cv_cross);
    std::vector<std::vector<double>> A(n);
    for (std::size_t t = 0; t < n; ++t) A[t] = stein_statistics(sb, run.configs[t]);
    r.mean = cv_mean(s, A, o.batches);
  } else {
    r.mean = batch_means(s, o.batches);
  }
  auto moment = [&](int p, std::size_t b, std::size_t e) {
    double m = 0.0;
    for (std::size_t t = b; t < e; ++t) m += s[t];
    m /= static_cast<double>(e - b);
    double c2 = 0.0, cp = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      double d = s[t] - m;
      c2 += d * d;
      cp += std::pow(d, p);
    }
    c2 /= static_cast<double>(e - b);
    cp /= static_cast<double>(e - b);
    return p == 2 ? c2 * (e - b) / (e - b - 1.0) : (c2 > 0 ? cp / (c2 * c2) : 0.0);
  };
  r.var = batch_functional(n, [&](std::size_t b, std::size_t e) { return moment(2, b, e); }, o.batches);
  r.kurtosis = batch_functional(n, [&](std::size_t b, std::size_t e) { return moment(4, b, e); }, o.batches);
  return r;
}

// ln Z by integrating -(N beta/2) E_s[sum (V_N - V_G)] over the path from the same-support Gaussian
struct ThermoOptions {
  int s_nodes = 8;
  int cv_count = 6;
  int cv_cross = 0;
  int batches = 32;
};

inline MCEstimate thermodynamic_lnZ(const PotentialSpec& spec, const EdgeConfig& e, const MCConfig& cfg,
                                    const ThermoOptions& o = {}) {
  if (e.minus != Nature::Soft || e.plus != Nature::Soft)
    throw std::invalid_argument("thermodynamic_lnZ: needs a soft/soft reference");
  auto eq = solve_equilibrium(spec.orders.at(0), e);
  const double am = eq.support.alpha_minus, ap = eq.support.alpha_plus;
  const Poly VG = gaussian_reference(am, ap).orders[0];
  const Poly VN = resum(spec, cfg.N);
  const Poly dV = poly_add(VN, VG, 1.0, -1.0);
  auto q = gauss_legendre(o.s_nodes);
  const double pref = -0.5 * cfg.N * cfg.beta;
  double total = gaussian_lnZ(cfg.N, cfg.beta, am, ap), var = 0.0, neff = 1e300;
  for (int i = 0; i < o.s_nodes; ++i) {
    Poly Vs = poly_add(VG, dV, 1.0, q.nodes[i]);
    MCConfig c = cfg;
    c.seed = cfg.seed + 1000003ULL * (i + 1);
    auto run = run_chain(Vs, e, c, am, ap);
    const std::size_t n = run.size();
    std::vector<double> f(n);
    for (std::size_t t = 0; t < n; ++t) {
      double v = 0.0;
      for (double x : run.configs[t]) v += poly_eval(dV, x);
      f[t] = v;
    }
    MCEstimate m;
    if (o.cv_count > 0) {
      auto sb = stein_basis(run, o.cv_count, o.cv_cross);
      std::vector<std::vector<double>> A(n);
      for (std::size_t t = 0; t < n; ++t) A[t] = stein_statistics(sb, run.configs[t]);
      m = cv_mean(f, A, o.batches);
    } else {
      m = batch_means(f, o.batches);
    }
    total += pref * q.weights[i] * m.value;
    var += std::pow(pref * q.weights[i] * m.std_error, 2);
    neff = std::min(neff, m.n_eff);
  }
  return {total, std::sqrt(var), neff};
}

// ---- extreme eigenvalue tail ----------------------------------------------

namespace detail {

struct Nodes {
  std::vector<double> x, w;
  void add_gl(double a, double b, const SQuadrature& q) {
    if (!(b > a)) return;
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      x.push_back(a + (b - a) * q.nodes[k]);
      w.push_back((b - a) * q.weights[k]);
    }
  }
  // panels growing geometrically away from `from` toward `to`
  void add_graded(double from, double to, double h, const SQuadrature& q) {
    double d = to - from, sgn = d > 0 ? 1.0 : -1.0, L = std::abs(d), pos = 0.0;
    while (pos < L) {
      double nx = std::min(L, pos + h);
      double a = from + sgn * pos, b = from + sgn * nx;
      add_gl(std::min(a, b), std::max(a, b), q);
      pos = nx;
      h *= 2.0;
    }
  }
};

inline double log_q(const std::vector<double>& lam, const Poly& V, double beta, double x) {
  const int N = static_cast<int>(lam.size());
  double r = -0.5 * N * beta * poly_eval(V, x), prod = 1.0;
  int c = 0;
  for (double l : lam) {
    prod *= std::abs(x - l);
    if (++c == 8) {
      r += beta * std::log(prod);
      prod = 1.0;
      c = 0;
    }
  }
  return r + beta * std::log(prod);
}

}  // namespace detail

// P(lambda_max >= alpha_+ + eps), averaged conditional laws of each eigenvalue given the others
inline MCEstimate tail_probability(const MCRun& run, const EquilibriumData& eq, double eps, int batches = 32) {
  if (!(eps > 0)) throw std::invalid_argument("tail_probability: eps must be positive");
  const double t = eq.support.alpha_plus + eps;
  const double a = run.edges.a_minus, b = run.edges.a_plus;
  const std::size_t n = run.size();
  if (t >= b) return {0.0, 0.0, static_cast<double>(n)};
  const double beta = run.cfg.beta;
  const int N = run.cfg.N;
  const auto q8 = gauss_legendre(8);
  const double h0 = (b - a) / (8.0 * N);
  std::vector<double> est(n);
  parallel_for(n, [&](std::size_t idx) {
    std::vector<double> s = run.configs[idx];
    std::sort(s.begin(), s.end());
    detail::Nodes all;
    all.add_graded(s.front(), a, h0, q8);
    for (int k = 0; k + 1 < N; ++k) all.add_gl(s[k], s[k + 1], q8);
    all.add_graded(s.back(), b, h0, q8);
    const double Ltop = N >= 2 ? std::max(t, s[N - 2]) : t, Lrest = std::max(t, s.back());
    detail::Nodes tail_top, tail_rest;
    if (N >= 2 && Ltop < s.back()) {
      tail_top.add_gl(Ltop, s.back(), q8);
      tail_top.add_graded(s.back(), b, h0, q8);
    } else {
      tail_top.add_graded(Ltop, b, h0, q8);
    }
    tail_rest.add_graded(Lrest, b, h0, q8);
    auto logs = [&](const detail::Nodes& nd) {
      std::vector<double> r(nd.x.size());
      for (std::size_t k = 0; k < nd.x.size(); ++k) r[k] = detail::log_q(s, run.V, beta, nd.x[k]);
      return r;
    };
    auto la = logs(all), lt = logs(tail_top), lr = logs(tail_rest);
    double ref = -1e300;
    for (double v : la) ref = std::max(ref, v);
    double total = 0.0;
    for (int r = 0; r < N; ++r) {
      auto integral = [&](const detail::Nodes& nd, const std::vector<double>& lg) {
        double acc = 0.0;
        for (std::size_t k = 0; k < nd.x.size(); ++k) {
          double d = std::abs(nd.x[k] - s[r]);
          if (d <= 0.0) continue;
          acc += nd.w[k] * std::exp(lg[k] - beta * std::log(d) - ref);
        }
        return acc;
      };
      double Z = integral(all, la);
      double T = r == N - 1 ? integral(tail_top, lt) : integral(tail_rest, lr);
      if (Z > 0) total += T / Z;
    }
    est[idx] = total;
  });
  return batch_means(est, batches);
}

}  // namespace betacut
