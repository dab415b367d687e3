// One line per acceptance criterion. Usage: acceptance [criterion ids...]
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>

#include "betacut/asymptotics.hpp"
#include "betacut/montecarlo.hpp"

using namespace betacut;

namespace {

// ---- tolerances -----------------------------------------------------------
constexpr double kOracleTol = 1e-8;         // 1
constexpr double kOracleSeconds = 1.0;      // 1
constexpr double kRoundtripTol = 1e-8;      // 2
constexpr double kRadiusTol = 1e-8;         // 2
constexpr double kLeadingLoopTol = 1e-8;    // 3
constexpr double kZeroW10Tol = 1e-10;       // 4
constexpr double kZeroFTol = 1e-7;          // 4
constexpr double kUniversalTol = 1e-8;      // 5
constexpr double kResidualTol = 1e-6;       // 6
constexpr double kSparseTol = 1e-12;        // 7, relative to the size of the source terms
constexpr double kReassembleTol = 1e-7;     // 7
constexpr double kSlopeTol = 0.5;           // 8
constexpr double kCltSigmas = 3.0;          // 9
constexpr double kCltExactTol = 1e-10;      // 9
constexpr double kSmallNRelTol = 1e-2;      // 10
constexpr double kFreeEnergySigmas = 3.0;   // 10
constexpr double kTailFactor = 2.0;         // 11

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int p = 3) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*e", p, v);
  return b;
}

EdgeConfig edges(double a, double b, Nature m, Nature p) {
  EdgeConfig e;
  e.a_minus = a;
  e.a_plus = b;
  e.minus = m;
  e.plus = p;
  return e;
}
PotentialSpec spec_of(const Poly& v, double bm = -std::numeric_limits<double>::infinity(),
                      double bp = std::numeric_limits<double>::infinity()) {
  PotentialSpec s;
  s.orders = {v};
  s.b_minus = bm;
  s.b_plus = bp;
  return s;
}
const Poly kGauss{0, 0, 0.5};
const Poly kQuartic{0, 0, 0.5, 0, 0.1};
EdgeConfig soft4() { return edges(-4, 4, Nature::Soft, Nature::Soft); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 --------------------------------------------------------------------
Outcome c1() {
  double worst = 0.0, slowest = 0.0;
  auto t0 = std::chrono::steady_clock::now();
  auto sc = solve_equilibrium(kGauss, edges(-3, 3, Nature::Soft, Nature::Soft));
  worst = std::max({worst, std::abs(sc.support.alpha_minus + 2), std::abs(sc.support.alpha_plus - 2),
                    std::abs(density(sc, 0.0) - 1 / kPi)});
  slowest = std::max(slowest, seconds_since(t0));
  t0 = std::chrono::steady_clock::now();
  auto as = solve_equilibrium(Poly{0}, edges(-1, 1, Nature::Hard, Nature::Hard));
  worst = std::max({worst, std::abs(density(as, 0.0) - 1 / kPi), std::abs(as.energy - std::log(2.0))});
  slowest = std::max(slowest, seconds_since(t0));
  t0 = std::chrono::steady_clock::now();
  auto mp = solve_equilibrium(Poly{0, 1}, edges(0, 6, Nature::Hard, Nature::Soft));
  worst = std::max(worst, std::abs(mp.support.alpha_plus - 4));
  for (double x : {-1.0, 0.3, 2.0, 3.9, 5.5}) worst = std::max(worst, std::abs(s_function(mp, x) - 0.5));
  slowest = std::max(slowest, seconds_since(t0));
  return {worst <= kOracleTol && slowest < kOracleSeconds,
          "max error " + fmt(worst) + " (tol " + fmt(kOracleTol, 0) + "), slowest " + fmt(slowest, 2) + " s"};
}

// ---- 2 --------------------------------------------------------------------
double sup_diff(const SeriesFn& a, const SeriesFn& b, double rho) {
  return sup_norm([&](cplx z) { return a.eval_z(z) - b.eval_z(z); }, rho, 256);
}

Outcome c2() {
  struct Case {
    const char* name;
    Poly v;
    EdgeConfig e;
  };
  std::vector<Case> cases{{"soft/soft", kQuartic, soft4()},
                          {"soft/hard", kGauss, edges(-4, 1, Nature::Soft, Nature::Hard)},
                          {"hard/hard", kGauss, edges(-1, 1, Nature::Hard, Nature::Hard)}};
  double w1 = 0, w2 = 0, w3 = 0;
  const double rho = 1.65;
  for (auto& c : cases) {
    auto eq = solve_equilibrium(c.v, c.e);
    auto ed = hard_edge_data(eq.edges);
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 100; ++t) {
      auto f = random_h2(rng, eq.frame);
      auto g = apply_K(eq, ed, f);
      auto r = apply_K_inverse(eq, ed, g);
      w1 = std::max(w1, sup_diff(r.f, f, rho) / sup_norm(f, rho));
      // K K^{-1} on an admissible g = K f2
      auto g2 = apply_K(eq, ed, random_h2(rng, eq.frame));
      auto back = apply_K(eq, ed, apply_K_inverse(eq, ed, g2).f);
      w2 = std::max(w2, sup_diff(back, g2, rho) / sup_norm(g2, rho));
    }
    auto g = apply_K(eq, ed, random_h2(rng, eq.frame));
    // second circle: the automatic one, between the target circle and the nearest zero of S
    OperatorOptions a, b;
    a.rho_outer = 1.3;
    auto fa = apply_K_inverse(eq, ed, g, a).f, fb = apply_K_inverse(eq, ed, g, b).f;
    w3 = std::max(w3, sup_diff(fa, fb, rho) / sup_norm(fa, rho));
  }
  return {w1 <= kRoundtripTol && w2 <= kRoundtripTol && w3 <= kRadiusTol,
          "K^-1 K " + fmt(w1) + ", K K^-1 " + fmt(w2) + ", radius change " + fmt(w3) + " (tol 1e-08)"};
}

// ---- 3 --------------------------------------------------------------------
// L (W^2 - V' W) is a polynomial; residual of that statement on Gamma_1
double leading_loop_residual(const Poly& v, const EdgeConfig& e) {
  auto eq = solve_equilibrium(v, e);
  auto ed = hard_edge_data(eq.edges);
  const auto& fr = eq.frame;
  Poly dv = poly_derivative(v);
  auto G = [&](cplx z) {
    cplx x = fr.x_of(z), w = eq.w1m1.eval_z(z);
    return poly_eval(ed.L, x) * (w * w - poly_eval(dv, x) * w);
  };
  const int D = std::max(0, poly_degree(dv)) + 3;
  const int m = 256;
  auto zb = circle_nodes(4.0, m);
  std::vector<cplx> g(D + 1, 0.0);
  for (auto z : zb) {
    cplx x = fr.x_of(z), gx = G(z) * fr.sigma(z) / x;
    for (int j = 0; j <= D; ++j) {
      g[j] += gx / static_cast<double>(m);
      gx /= x;
    }
  }
  ContourFamily cf;
  double worst = 0.0, scale = 1.0;
  for (auto z : circle_nodes(cf.radius(1), m, 0.5)) {
    cplx x = fr.x_of(z), p = 0.0, xp = 1.0;
    for (int j = 0; j <= D; ++j) {
      p += g[j] * xp;
      xp *= x;
    }
    cplx gz = G(z);
    worst = std::max(worst, std::abs(gz - p));
    scale = std::max(scale, std::abs(gz));
  }
  return worst / scale;
}

Outcome c3() {
  double a = leading_loop_residual(kGauss, edges(-3, 3, Nature::Soft, Nature::Soft));
  double b = leading_loop_residual(Poly{0}, edges(-1, 1, Nature::Hard, Nature::Hard));
  double c = leading_loop_residual(Poly{0, 1}, edges(0, 6, Nature::Hard, Nature::Soft));
  double w = std::max({a, b, c});
  return {w <= kLeadingLoopTol,
          "semicircle " + fmt(a) + ", arcsine " + fmt(b) + ", Marchenko-Pastur " + fmt(c) + " (tol 1e-08)"};
}

// ---- 4 --------------------------------------------------------------------
Outcome c4() {
  // exact-zero snapping off: the cancellation itself is measured
  RecursionOptions ro;
  ro.zero_tol = 0.0;
  double w10 = 0.0;
  for (const auto& v : {kGauss, kQuartic}) {
    auto eq = solve_equilibrium(v, soft4());
    auto W = w1_subleading(eq, hard_edge_data(eq.edges), 2.0, {}, ro);
    w10 = std::max(w10, sup_norm(series_of(W), 1.3));
  }
  FreeEnergyOptions fo;
  fo.rec.zero_tol = 0.0;
  auto fe = free_energy_coeffs(spec_of(kQuartic), soft4(), 2.0, 1, fo);
  double fm1 = std::abs(fe.coeffs.at(-1)), f1 = std::abs(fe.coeffs.at(1));
  return {w10 <= kZeroW10Tol && fm1 <= kZeroFTol && f1 <= kZeroFTol,
          "sup |W_1^0| " + fmt(w10) + " (tol 1e-10), |F^-1| " + fmt(fm1) + ", |F^1| " + fmt(f1) + " (tol 1e-07)"};
}

// ---- 5 --------------------------------------------------------------------
cplx w20_closed(const JoukowskiFrame& fr, double beta, cplx x1, cplx x2) {
  cplx z1 = inverse_map(fr, x1), z2 = inverse_map(fr, x2);
  double g = fr.gamma;
  return (2.0 / beta) / ((z1 * z2 - 1.0) * (z1 * z2 - 1.0) * g * g * (1.0 - 1.0 / (z1 * z1)) * (1.0 - 1.0 / (z2 * z2)));
}

Outcome c5() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(-5, 5);
  auto point = [&] {
    cplx x;
    do x = cplx(u(rng), u(rng));
    while (std::abs(x.imag()) < 0.5 && std::abs(x.real()) < 4.0);
    return x;
  };
  double worst = 0.0, special = 0.0;
  for (const auto& v : {kGauss, kQuartic})
    for (double beta : {1.0, 2.0, 4.0}) {
      auto eq = solve_equilibrium(v, soft4());
      auto ex = expand_all(eq, hard_edge_data(eq.edges), spec_of(v), beta, 0);
      const auto& W = ex.terms.at({2, 0});
      for (int i = 0; i < 10; ++i) {
        cplx a = point(), b = point(), want = w20_closed(eq.frame, beta, a, b);
        worst = std::max(worst, std::abs(W({a, b}) - want) / std::abs(want));
      }
      if (v == kGauss && beta == 2.0) special = std::abs(W({3.0, -3.0}) - 1.0 / 45.0);
    }
  return {worst <= kUniversalTol && special <= kUniversalTol,
          "max relative error " + fmt(worst) + ", |W_2^0(3,-3) - 1/45| " + fmt(special) + " (tol 1e-08)"};
}

// ---- 6 --------------------------------------------------------------------
Outcome c6() {
  auto eq = solve_equilibrium(kQuartic, soft4());
  auto ex = expand_all(eq, hard_edge_data(eq.edges), spec_of(kQuartic), 1.0, 2);
  double worst = 0.0;
  std::string at;
  for (auto& [k, r] : ex.residuals)
    if (r >= worst) {
      worst = r;
      at = "(" + std::to_string(k.first) + "," + std::to_string(k.second) + ")";
    }
  return {worst <= kResidualTol && ex.residuals.size() == ex.terms.size(),
          std::to_string(ex.residuals.size()) + " orders, max residual " + fmt(worst) + " at " + at + " (tol 1e-06)"};
}

// ---- 7 --------------------------------------------------------------------
Outcome c7() {
  auto eq = solve_equilibrium(kQuartic, soft4());
  auto ed = hard_edge_data(eq.edges);
  std::map<double, Expansion> ex;
  for (double b : {1.0, 2.0, 3.0, 4.0}) ex.emplace(b, expand_all(eq, ed, spec_of(kQuartic), b, 1));
  // scheduled term set is the triangle n <= k + 2
  bool shape = true;
  for (auto& [k, t] : ex.at(1.0).terms) shape = shape && k.first <= k.second + 2;
  shape = shape && ex.at(1.0).terms.size() == 6;
  // sources of W_3^0 and W_4^1 assembled from the computed terms vanish
  double sparse = 0.0;
  std::vector<cplx> zl{cplx(1.4, 0.3), cplx(-0.9, 1.3), cplx(0.2, -1.6)};
  for (auto nk : {std::pair{3, -1}, std::pair{4, 0}})
    for (double b : {1.0, 3.0}) {
      std::vector<cplx> zs;
      for (int i = 1; i < nk.first; ++i) zs.push_back(std::polar(1.7, 0.9 * i));
      auto E = assemble_E(ex.at(b), nk.first, nk.second, zl, zs);
      double scale = 0.0;
      for (auto& [k, t] : ex.at(b).terms) scale = std::max(scale, t.max_abs());
      for (auto v : E) sparse = std::max(sparse, std::abs(v) / scale);
    }
  double reas = 0.0;
  for (auto nk : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 1}, std::pair{3, 1}}) {
    auto d = beta_decompose({&ex.at(1.0), &ex.at(2.0)}, nk.first, nk.second);
    for (double held : {3.0, 4.0}) {
      auto r = d.reassemble(held);
      const auto& direct = ex.at(held).terms.at(nk);
      std::vector<cplx> x(nk.first);
      for (int i = 0; i < nk.first; ++i) x[i] = cplx(2.5 + i, 0.5 - i);
      cplx a = r(x), b = direct(x);
      reas = std::max(reas, std::abs(a - b) / std::max(1.0, std::abs(b)));
    }
  }
  return {shape && sparse <= kSparseTol && reas <= kReassembleTol,
          std::string("triangle ") + (shape ? "ok" : "wrong") + ", sources of W_3^0 and W_4^1 " + fmt(sparse) +
              " (tol 1e-12), reassembly at beta 3 and 4 " + fmt(reas) + " (tol 1e-07)"};
}

// ---- 8 --------------------------------------------------------------------
double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

Outcome c8() {
  const double x0 = 3.0, beta = 1.0;
  auto s = spec_of(kQuartic);
  auto eq = solve_equilibrium(kQuartic, soft4());
  auto ex = expand_one_point(eq, hard_edge_data(eq.edges), s, beta, 2);
  std::vector<double> W;
  for (int k = -1; k <= 1; ++k) W.push_back(ex.terms.at({1, k})({cplx(x0)}).real());
  std::vector<double> lx, r0, r1;
  std::string d;
  for (int N : {40, 80, 160, 320}) {
    MCConfig c;
    c.N = N;
    c.beta = beta;
    c.sweeps = 100000;
    c.burn_in = 10000;
    c.thin = std::max(1, N / 40);
    c.seed = 8000 + N;
    auto run = sample_chain(s, soft4(), c);
    EstimatorOptions o;
    o.cv_count = 12;
    o.cv_cross = 4;
    auto est = estimate_correlators(run, {cplx(x0)}, 1, o).at(1);
    double res0 = est.value.real() - N * W[0] - W[1];
    double res1 = res0 - W[2] / N;
    lx.push_back(std::log(N));
    r0.push_back(std::log(std::abs(res0)));
    r1.push_back(std::log(std::abs(res1)));
    d += " N=" + std::to_string(N) + ": " + fmt(res0, 2) + "/" + fmt(res1, 2) + " se " + fmt(est.std_error, 1) + ";";
  }
  double s0 = ols_slope(lx, r0), s1 = ols_slope(lx, r1);
  return {std::abs(s0 + 1.0) <= kSlopeTol && std::abs(s1 + 2.0) <= kSlopeTol,
          "slope K=0 " + fmt(s0, 2) + " (want -1), K=1 " + fmt(s1, 2) + " (want -2), tol 0.5;" + d};
}

// ---- 9 --------------------------------------------------------------------
Outcome c9() {
  bool ok = true;
  int checks = 0, passed = 0;
  double worst_z = 0.0;
  std::string d;
  std::uint64_t seed = 900;
  for (const auto& v : {kGauss, kQuartic})
    for (double beta : {1.0, 2.0, 4.0}) {
      auto eq = solve_equilibrium(v, soft4());
      auto ed = hard_edge_data(eq.edges);
      MCConfig c;
      c.N = 200;
      c.beta = beta;
      c.sweeps = 220000;
      c.burn_in = 20000;
      c.thin = 5;
      c.seed = ++seed;
      auto run = sample_chain(spec_of(v), soft4(), c);
      for (const Poly& h : {Poly{0, 1}, Poly{0, 0, 1}}) {
        double m = clt_mean(eq, ed, beta, h), C = clt_covariance(eq, ed, beta, h);
        auto ls = estimate_linear_statistic(run, h, eq);
        double zm = std::abs(ls.mean.value - m) / ls.mean.std_error;
        double zv = std::abs(ls.var.value - C) / ls.var.std_error;
        checks += 2;
        passed += (zm <= kCltSigmas) + (zv <= kCltSigmas);
        worst_z = std::max({worst_z, zm, zv});
        if (zm > kCltSigmas || zv > kCltSigmas) {
          ok = false;
          d += std::string(" miss: ") + (v == kGauss ? "gauss" : "quartic") + " beta " + fmt(beta, 0) + " h deg " +
               std::to_string(poly_degree(h)) + " z " + fmt(zm, 1) + "/" + fmt(zv, 1) + ";";
        }
      }
    }
  auto eg = solve_equilibrium(kGauss, soft4());
  double cx = clt_covariance(eg, hard_edge_data(eg.edges), 2.0, Poly{0, 1});
  bool exact = std::abs(cx - 1.0) <= kCltExactTol;
  return {ok && exact, std::to_string(passed) + "/" + std::to_string(checks) + " within 3 se (worst " +
                           fmt(worst_z, 2) + " se), C[x] at beta 2 Gaussian = " + fmt(cx, 12) + ";" + d};
}

// ---- 10 -------------------------------------------------------------------
Outcome c10() {
  const double beta = 1.0;
  auto s = spec_of(kQuartic);
  // N = 2: ln \int\int exp(-V(x) - V(y)) |x - y| over the box, on the triangle y < x
  auto q = gauss_legendre(160);
  const double a = -4, b = 4;
  double Z = 0.0;
  for (int i = 0; i < 160; ++i) {
    double x = a + (b - a) * q.nodes[i], inner = 0.0;
    for (int j = 0; j < 160; ++j) {
      double y = a + (x - a) * q.nodes[j];
      inner += q.weights[j] * (x - a) * std::exp(-poly_eval(kQuartic, y)) * (x - y);
    }
    Z += q.weights[i] * (b - a) * std::exp(-poly_eval(kQuartic, x)) * inner;
  }
  double lnZ2 = std::log(2.0 * Z);
  MCConfig c2;
  c2.N = 2;
  c2.beta = beta;
  c2.sweeps = 200000;
  c2.burn_in = 10000;
  c2.seed = 1002;
  auto m2 = thermodynamic_lnZ(s, soft4(), c2);
  double rel2 = std::abs(m2.value - lnZ2) / std::abs(lnZ2);
  bool ok = rel2 <= kSmallNRelTol;
  std::string d = "N=2: MC " + fmt(m2.value, 6) + " vs quadrature " + fmt(lnZ2, 6) + " rel " + fmt(rel2, 1) + ";";

  auto fe = free_energy_coeffs(s, soft4(), beta, 2);
  for (int N : {64, 128}) {
    MCConfig c;
    c.N = N;
    c.beta = beta;
    c.sweeps = 30000;
    c.burn_in = 3000;
    c.thin = std::max(1, N / 40);
    c.seed = 10000 + N;
    ThermoOptions o;
    o.s_nodes = 8;
    o.cv_count = 12;
    o.cv_cross = 4;
    auto m = thermodynamic_lnZ(s, soft4(), c, o);
    double res0 = m.value - lnZ_prediction(fe, N, 0), res1 = m.value - lnZ_prediction(fe, N, 1);
    // next term of the series stands in for the truncation error
    double comb = std::hypot(m.std_error, std::abs(fe.coeffs.at(2)) / (double(N) * N));
    bool agree = std::abs(res1) <= kFreeEnergySigmas * comb, shrink = std::abs(res1) < std::abs(res0);
    ok = ok && agree && shrink;
    d += " N=" + std::to_string(N) + ": res maxK=0 " + fmt(res0, 2) + ", maxK=1 " + fmt(res1, 2) + " (3 x combined " +
         fmt(kFreeEnergySigmas * comb, 2) + ", se " + fmt(m.std_error, 1) + ")" + (agree ? "" : " disagree") +
         (shrink ? "" : " no shrink") + ";";
  }
  return {ok, d};
}

// ---- 11 -------------------------------------------------------------------
Outcome c11() {
  const double beta = 2.0, eps = 0.3;
  auto eq = solve_equilibrium(kGauss, soft4());
  const double target = beta * rate_function(eq, eq.support.alpha_plus + eps);
  std::vector<double> rate;
  std::string d;
  for (int N : {25, 50, 100}) {
    MCConfig c;
    c.N = N;
    c.beta = beta;
    c.sweeps = 40000;
    c.burn_in = 4000;
    c.thin = 5;
    c.seed = 1100 + N;
    auto run = sample_chain(spec_of(kGauss), soft4(), c);
    auto p = tail_probability(run, eq, eps);
    rate.push_back(-std::log(p.value) / N);
    d += " N=" + std::to_string(N) + ": P " + fmt(p.value, 3) + " +- " + fmt(p.std_error, 1) + ", -lnP/N " +
         fmt(rate.back(), 4) + ";";
  }
  bool increasing = rate[0] < rate[1] && rate[1] < rate[2];
  double ratio = rate[2] / target;
  bool order = ratio <= kTailFactor && ratio >= 1.0 / kTailFactor;
  return {increasing && order, std::string("increasing with N: ") + (increasing ? "yes" : "no") +
                                   ", ratio to beta J at N=100 " + fmt(ratio, 3) + " (beta J " + fmt(target, 5) +
                                   ", factor <= 2: " + (order ? "yes" : "no") + ");" + d};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::pair<const char*, std::function<Outcome()>>> all{
      {"equilibrium oracles", c1},
      {"operator battery", c2},
      {"leading loop equation", c3},
      {"beta = 2 structural zeros", c4},
      {"universal two-point function", c5},
      {"loop residuals, quartic beta = 1, k <= 2", c6},
      {"sparsity and beta structure", c7},
      {"Monte Carlo correlator convergence", c8},
      {"central limit theorem", c9},
      {"free energy", c10},
      {"large-deviation tail", c11},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", all[i].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
