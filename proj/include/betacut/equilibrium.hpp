#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "analytic_kernel.hpp"
#include "potential.hpp"

namespace betacut {

struct Support {
  double alpha_minus = -1.0, alpha_plus = 1.0;
  Nature minus = Nature::Soft, plus = Nature::Soft;
};

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lhat = prod_{hard -}(x - alpha-) * prod_{hard +}(alpha+ - x); positive on the cut
inline cplx lhat_x(const Support& s, cplx x) {
  cplx r = 1.0;
  if (s.minus == Nature::Hard) r *= (x - s.alpha_minus);
  if (s.plus == Nature::Hard) r *= (s.alpha_plus - x);
  return r;
}

struct EquilibriumData {
  Support support;
  JoukowskiFrame frame;
  EdgeConfig edges;          // working interval
  Poly v0;                   // V^{0}
  std::vector<double> P;     // P_m, m = 0..D, of V0'(x) Lhat / 2
  std::vector<double> A;     // antisymmetric part, A_m for m = 0..D
  std::vector<double> S;     // S_m, m = 0..D-1 : S = S_0 + sum S_m (z^m + z^-m)
  std::vector<double> moments;  // m_k = \int cos(k theta) dmu, k = 0..
  double constant_C = 0.0;
  double energy = 0.0;
  double r_S = std::numeric_limits<double>::infinity();  // |z| of the nearest S zero
  int hard = 0;
  double sL = 1.0;
  SeriesFn w1m1;

  cplx lhat(cplx x) const { return lhat_x(support, x); }

  // S at any complex x (Chebyshev form in w = (x-c)/(2 gamma))
  cplx S_x(cplx x) const {
    cplx w = (x - frame.c) / (2.0 * frame.gamma);
    cplx t0 = 1.0, t1 = w, r = S.empty() ? 0.0 : S[0];
    for (std::size_t m = 1; m < S.size(); ++m) {
      r += 2.0 * S[m] * t1;
      cplx t2 = 2.0 * w * t1 - t0;
      t0 = t1;
      t1 = t2;
    }
    return r;
  }
  cplx S_z(cplx z) const {
    cplx r = S.empty() ? 0.0 : S[0], zp = z, zm = 1.0 / z, pp = zp, pm = zm;
    for (std::size_t m = 1; m < S.size(); ++m) {
      r += S[m] * (pp + pm);
      pp *= zp;
      pm *= zm;
    }
    return r;
  }
  cplx y_z(cplx z) const { return S_z(z) * frame.sigma(z) / lhat(frame.x_of(z)); }
  // W_1^{-1} from the Laurent polynomial P - A, exact cancellation of growing terms
  cplx w_z(cplx z) const {
    int D = static_cast<int>(P.size()) - 1;
    cplx s = 0.0;
    for (int m = -D; m <= std::min(D, hard - 1); ++m) {
      int a = std::abs(m);
      double pm = P[a];
      double am = (m >= 0 ? 1.0 : -1.0) * A[a];
      s += (pm - am) * std::pow(z, m);
    }
    return s / lhat(frame.x_of(z));
  }
  cplx w_x(cplx x) const { return w_z(inverse_map(frame, x)); }
};

namespace detail {

inline std::vector<double> laurent_symmetric(const std::function<cplx(cplx)>& F, int D) {
  int m = 4 * (D + 4);
  auto z = circle_nodes(1.0, m);
  std::vector<double> c(D + 1, 0.0);
  for (int k = 0; k < m; ++k) {
    cplx v = F(z[k]);
    cplx zi = 1.0 / z[k], p = 1.0;
    for (int j = 0; j <= D; ++j) {
      c[j] += (v * p).real();
      p *= zi;
    }
  }
  for (auto& x : c) x /= m;
  return c;
}

inline std::vector<double> compute_P(const Poly& v0, const Support& s, int D) {
  JoukowskiFrame fr = frame_from_support(s.alpha_minus, s.alpha_plus);
  Poly dv = poly_derivative(v0);
  return laurent_symmetric(
      [&](cplx z) {
        cplx x = fr.x_of(z);
        return 0.5 * poly_eval(dv, x) * lhat_x(s, x);
      },
      D);
}

inline int p_degree(const Poly& v0, const Support& s) {
  int d = std::max(poly_degree(poly_derivative(v0)), 0);
  int h = (s.minus == Nature::Hard) + (s.plus == Nature::Hard);
  return d + h + 1;
}

inline double sign_L(const Support& s) { return s.plus == Nature::Hard ? -1.0 : 1.0; }

inline std::vector<double> conditions(const Poly& v0, const Support& s) {
  int h = (s.minus == Nature::Hard) + (s.plus == Nature::Hard);
  auto P = compute_P(v0, s, p_degree(v0, s));
  double g = 0.25 * (s.alpha_plus - s.alpha_minus);
  if (h == 0) return {P[0], 2.0 * g * P[1] - 1.0};
  if (h == 1) return {P[0] - sign_L(s)};
  return {};
}

}  // namespace detail

struct SolveOptions {
  double tol = 1e-12;
  int max_iter = 100;
};

inline Support solve_support(const Poly& v0, const EdgeConfig& e, const SolveOptions& o = {}) {
  e.check();
  Support s;
  s.minus = e.minus;
  s.plus = e.plus;
  s.alpha_minus = e.a_minus;
  s.alpha_plus = e.a_plus;
  int h = e.hard_count();
  if (h == 2) return s;

  // initial guess from the quadratic truncation
  Poly v = v0;
  v.resize(std::max<std::size_t>(v.size(), 3), 0.0);
  double a1 = v[1], a2 = v[2];
  double width = e.a_plus - e.a_minus;
  if (a2 > 0) {
    double m = -a1 / (2.0 * a2), half = std::sqrt(2.0 / a2);
    if (h == 0) {
      s.alpha_minus = m - half;
      s.alpha_plus = m + half;
    } else if (e.minus == Nature::Hard) {
      s.alpha_plus = std::max(m + half, e.a_minus + 0.25 * width);
    } else {
      s.alpha_minus = std::min(m - half, e.a_plus - 0.25 * width);
    }
  } else {
    if (e.minus == Nature::Soft) s.alpha_minus = e.a_minus + 0.25 * width;
    if (e.plus == Nature::Soft) s.alpha_plus = e.a_plus - 0.25 * width;
  }
  auto clamp_inside = [&](Support& t) {
    double eps = 1e-3 * width;
    if (t.minus == Nature::Soft) t.alpha_minus = std::max(t.alpha_minus, e.a_minus + eps);
    if (t.plus == Nature::Soft) t.alpha_plus = std::min(t.alpha_plus, e.a_plus - eps);
  };
  clamp_inside(s);

  int n = 2 - h;
  auto norm = [](const std::vector<double>& f) {
    double r = 0;
    for (double x : f) r = std::max(r, std::abs(x));
    return r;
  };
  auto F = detail::conditions(v0, s);
  for (int it = 0; it < o.max_iter; ++it) {
    if (norm(F) < o.tol) break;
    Eigen::MatrixXd J(n, n);
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r[i] = F[i];
    auto unknowns = [&](Support& t) {
      std::vector<double*> u;
      if (e.minus == Nature::Soft) u.push_back(&t.alpha_minus);
      if (e.plus == Nature::Soft) u.push_back(&t.alpha_plus);
      return u;
    };
    for (int j = 0; j < n; ++j) {
      Support t = s;
      double* pj = unknowns(t)[j];
      double hstep = 1e-7 * std::max(1.0, std::abs(*pj));
      *pj += hstep;
      auto Fp = detail::conditions(v0, t);
      *pj -= 2 * hstep;
      auto Fm = detail::conditions(v0, t);
      for (int i = 0; i < n; ++i) J(i, j) = (Fp[i] - Fm[i]) / (2 * hstep);
    }
    Eigen::VectorXd d = J.fullPivLu().solve(-r);
    if (!d.allFinite()) throw NumericalFailure("newton diverged");
    double lam = 1.0, f0 = norm(F);
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      Support t = s;
      auto tu = unknowns(t);
      for (int i = 0; i < n; ++i) *tu[i] += lam * d[i];
      if (t.alpha_minus < t.alpha_plus) {
        auto Ft = detail::conditions(v0, t);
        if (norm(Ft) < f0 || norm(Ft) < o.tol) {
          s = t;
          F = Ft;
          ok = true;
          break;
        }
      }
      lam *= 0.5;
    }
    if (!ok) throw NumericalFailure("newton diverged");
  }
  if (!(norm(F) < 1e3 * o.tol)) throw NumericalFailure("newton diverged");
  const double slack = 1e-12 * width;
  if (s.alpha_minus < e.a_minus - slack || s.alpha_plus > e.a_plus + slack)
    throw NumericalFailure("soft endpoint escaped interval");
  return s;
}

namespace detail {

inline std::vector<double> theta_moments(const EquilibriumData& eq, int K) {
  const auto& fr = eq.frame;
  int m = 4 * (K + static_cast<int>(eq.S.size()) + 8);
  std::vector<double> mk(K + 1, 0.0);
  for (int j = 0; j < m; ++j) {
    double th = 2.0 * kPi * j / m;
    cplx z = std::polar(1.0, th);
    double sv = eq.S_z(z).real();
    double w;
    if (eq.hard == 0)
      w = 4.0 * fr.gamma * fr.gamma * std::sin(th) * std::sin(th);
    else if (eq.hard == 2)
      w = 1.0;
    else if (eq.support.minus == Nature::Hard)
      w = 2.0 * fr.gamma * (1.0 - std::cos(th));
    else
      w = 2.0 * fr.gamma * (1.0 + std::cos(th));
    double g = sv * w / kPi;
    for (int k = 0; k <= K; ++k) mk[k] += g * std::cos(k * th);
  }
  // \int_0^pi = (1/2) \int_0^{2 pi}
  for (auto& v : mk) v *= kPi / m;
  return mk;
}

inline double s_zero_radius(const std::vector<double>& S) {
  int D1 = static_cast<int>(S.size()) - 1;  // max |m|
  while (D1 > 0 && std::abs(S[D1]) < 1e-15 * std::abs(S[0])) --D1;
  if (D1 <= 0) return std::numeric_limits<double>::infinity();
  int deg = 2 * D1;
  // z^{D1} S(z) = sum_{q=0}^{deg} a_q z^q, a_q = S_{|q - D1|}
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(deg, deg);
  double lead = S[D1];
  for (int q = 0; q < deg; ++q) C(0, deg - 1 - q) = -S[std::abs(q - D1)] / lead;
  for (int i = 1; i < deg; ++i) C(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(C);
  double r = std::numeric_limits<double>::infinity();
  for (int i = 0; i < deg; ++i) {
    double a = std::abs(es.eigenvalues()[i]);
    if (a > 0) r = std::min(r, std::max(a, 1.0 / a));
  }
  return r;
}

}  // namespace detail

// \int ln|x - xi| dmu(xi), x anywhere on the real line or off it
inline double log_potential(const EquilibriumData& eq, cplx x) {
  const auto& fr = eq.frame;
  cplx z0;
  cplx w = (x - fr.c) / (2.0 * fr.gamma);
  if (std::abs(x.imag()) < 1e-300 && std::abs(w.real()) <= 1.0)
    z0 = cplx(w.real(), std::sqrt(std::max(0.0, 1.0 - w.real() * w.real())));
  else
    z0 = inverse_map(fr, x);
  double r = std::log(fr.gamma) + std::log(std::abs(z0));
  cplx u = 1.0 / z0, p = u;
  for (std::size_t k = 1; k < eq.moments.size(); ++k) {
    r -= 2.0 * p.real() * eq.moments[k] / static_cast<double>(k);
    p *= u;
  }
  return r;
}

inline EquilibriumData build_equilibrium(const Poly& v0, const EdgeConfig& e, const Support& s) {
  EquilibriumData eq;
  eq.support = s;
  eq.frame = frame_from_support(s.alpha_minus, s.alpha_plus);
  eq.edges = e;
  eq.v0 = v0;
  eq.hard = (s.minus == Nature::Hard) + (s.plus == Nature::Hard);
  eq.sL = detail::sign_L(s);
  int D = detail::p_degree(v0, s);
  eq.P = detail::compute_P(v0, s, D);
  eq.A.assign(D + 1, 0.0);
  for (int m = 1; m <= D; ++m) eq.A[m] = eq.P[m];
  if (eq.hard == 2) eq.A[1] = eq.P[1] - eq.sL * eq.frame.gamma;
  while (D > 1 && std::abs(eq.A[D]) < 1e-15 && std::abs(eq.P[D]) < 1e-15) --D;
  eq.P.resize(D + 1);
  eq.A.resize(D + 1);
  eq.S.assign(std::max(D, 1), 0.0);
  {
    std::vector<double> Sx(D + 2, 0.0);
    double g = eq.frame.gamma;
    for (int m = D; m >= 1; --m) Sx[m - 1] = eq.A[m] / g + Sx[m + 1];
    for (int m = 0; m < D; ++m) eq.S[m] = Sx[m];
  }
  eq.r_S = detail::s_zero_radius(eq.S);
  int K = static_cast<int>(eq.S.size()) + 4;
  eq.moments = detail::theta_moments(eq, K);

  // C from the midpoint, energy from the moments
  eq.constant_C = 2.0 * log_potential(eq, cplx(eq.frame.c, 0.0)) - poly_eval(v0, eq.frame.c);
  {
    int m = 512;
    double iv = 0.0;
    for (int j = 0; j < m; ++j) {
      double th = 2.0 * kPi * j / m;
      cplx z = std::polar(1.0, th);
      double xv = eq.frame.c + 2.0 * eq.frame.gamma * std::cos(th);
      double wv;
      const auto& fr = eq.frame;
      if (eq.hard == 0)
        wv = 4.0 * fr.gamma * fr.gamma * std::sin(th) * std::sin(th);
      else if (eq.hard == 2)
        wv = 1.0;
      else if (s.minus == Nature::Hard)
        wv = 2.0 * fr.gamma * (1.0 - std::cos(th));
      else
        wv = 2.0 * fr.gamma * (1.0 + std::cos(th));
      iv += poly_eval(v0, xv) * eq.S_z(z).real() * wv / kPi;
    }
    iv *= kPi / m;
    double logen = std::log(eq.frame.gamma);
    for (std::size_t k = 1; k < eq.moments.size(); ++k) logen -= 2.0 * eq.moments[k] * eq.moments[k] / k;
    eq.energy = iv - logen;
  }
  eq.w1m1 = series_from_function(eq.frame, [&](cplx z) { return eq.w_z(z); });
  return eq;
}

// S must stay positive on the support; an interior zero means the one-cut ansatz breaks
inline void check_density_sign(const EquilibriumData& eq) {
  const int n = 512;
  std::vector<double> sv(n);
  double mx = 0.0;
  for (int i = 0; i < n; ++i) {
    double w = std::cos(kPi * (i + 0.5) / n);
    sv[i] = eq.S_x(cplx(eq.frame.c + 2.0 * eq.frame.gamma * w, 0.0)).real();
    mx = std::max(mx, std::abs(sv[i]));
  }
  for (double v : sv)
    if (v < 1e-9 * mx) throw NumericalFailure("one-cut violated");
}

inline EquilibriumData solve_equilibrium(const Poly& v0, const EdgeConfig& e, const SolveOptions& o = {}) {
  Support s = solve_support(v0, e, o);
  EquilibriumData eq = build_equilibrium(v0, e, s);
  check_density_sign(eq);
  return eq;
}

inline cplx stieltjes_leading(const EquilibriumData& eq, cplx x) { return eq.w_x(x); }

inline double density(const EquilibriumData& eq, double x) {
  double am = eq.support.alpha_minus, ap = eq.support.alpha_plus;
  if (!(x > am && x < ap)) throw std::domain_error("density: outside support");
  double sv = eq.S_x(cplx(x, 0.0)).real();
  double r = std::sqrt((x - am) * (ap - x)) / lhat_x(eq.support, x).real();
  return sv * r / kPi;
}

inline cplx s_function(const EquilibriumData& eq, cplx x) { return eq.S_x(x); }

inline double rate_function(const EquilibriumData& eq, double x) {
  if (x > eq.support.alpha_minus && x < eq.support.alpha_plus)
    throw std::domain_error("rate_function: inside support");
  return 0.5 * poly_eval(eq.v0, x) - log_potential(eq, cplx(x, 0.0)) + 0.5 * eq.constant_C;
}

inline double equilibrium_energy(const EquilibriumData& eq) { return eq.energy; }

struct OffcriticalReport {
  bool ok = true;
  double minS = 0.0;
  cplx argmin = 0.0;
  double min_abs_contour = 0.0;
};

inline OffcriticalReport check_offcritical(const EquilibriumData& eq, const ContourFamily& cf = {},
                                           int n_contours = 4, double tol = 1e-6) {
  OffcriticalReport r;
  r.minS = std::numeric_limits<double>::infinity();
  const int n = 2048;
  bool pos = false, neg = false;
  for (int i = 0; i <= n; ++i) {
    double x = eq.edges.a_minus + (eq.edges.a_plus - eq.edges.a_minus) * i / n;
    double v = eq.S_x(cplx(x, 0.0)).real();
    if (v < r.minS) {
      r.minS = v;
      r.argmin = x;
    }
    (v > 0 ? pos : neg) = true;
  }
  r.min_abs_contour = std::numeric_limits<double>::infinity();
  for (int l = 0; l < n_contours; ++l)
    for (auto z : circle_nodes(cf.radius(l), cf.nodes))
      r.min_abs_contour = std::min(r.min_abs_contour, std::abs(eq.S_z(z)));
  r.ok = r.minS > tol && !(pos && neg);
  return r;
}

struct HypothesisReport {
  bool confinement = true, one_cut = true, offcritical = true, large_deviation = true, edges_consistent = true;
  std::string message;
  bool all() const { return confinement && one_cut && offcritical && large_deviation && edges_consistent; }
};

inline HypothesisReport validate_hypotheses(const PotentialSpec& spec, const EdgeConfig& e) {
  HypothesisReport r;
  r.confinement = confining(spec);
  EquilibriumData eq;
  try {
    Support s = solve_support(spec.orders.at(0), e);
    eq = build_equilibrium(spec.orders.at(0), e, s);
  } catch (const std::exception& ex) {
    r.one_cut = false;
    r.message = ex.what();
    return r;
  }
  try {
    check_density_sign(eq);
  } catch (const std::exception& ex) {
    r.one_cut = false;
    r.message = ex.what();
  }
  // S must stay positive up to each hard edge, otherwise the declared nature is wrong
  for (double xe : {eq.support.alpha_minus, eq.support.alpha_plus})
    if (eq.S_x(cplx(xe, 0.0)).real() <= 0.0) {
      r.edges_consistent = false;
      r.message = "edge-nature inconsistency";
    }
  auto oc = check_offcritical(eq);
  r.offcritical = oc.ok;
  const int n = 400;
  for (int i = 0; i <= n; ++i) {
    double x = e.a_minus + (e.a_plus - e.a_minus) * i / n;
    double d = std::max(eq.support.alpha_minus - x, x - eq.support.alpha_plus);
    if (d < 0.1) continue;
    if (!(rate_function(eq, x) > 0.0)) r.large_deviation = false;
  }
  return r;
}

inline EdgeConfig select_working_interval(const PotentialSpec& spec, Nature nm, Nature np, double margin,
                                          double box = 40.0) {
  EdgeConfig prov;
  prov.minus = nm;
  prov.plus = np;
  prov.a_minus = std::isfinite(spec.b_minus) ? spec.b_minus : -box;
  prov.a_plus = std::isfinite(spec.b_plus) ? spec.b_plus : box;
  if (nm == Nature::Hard && np == Nature::Hard) return prov;
  if (!(margin > 0.0)) throw std::invalid_argument("working interval: margin must be positive");
  Support s = solve_support(spec.orders.at(0), prov);
  EdgeConfig e = prov;
  if (nm == Nature::Soft) e.a_minus = std::max(s.alpha_minus - margin, prov.a_minus);
  if (np == Nature::Soft) e.a_plus = std::min(s.alpha_plus + margin, prov.a_plus);
  EquilibriumData eq = build_equilibrium(spec.orders.at(0), e, s);
  for (int i = 0; i <= 1000; ++i) {
    double x = e.a_minus + (e.a_plus - e.a_minus) * i / 1000;
    if (eq.S_x(cplx(x, 0.0)).real() <= 0.0) throw NumericalFailure("working interval reaches a zero of S");
  }
  return e;
}

}  // namespace betacut
