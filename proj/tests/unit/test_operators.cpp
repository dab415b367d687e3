#include "doctest.h"

#include <random>

#include "betacut/operators.hpp"

using namespace betacut;

namespace {
EdgeConfig edges(double a, double b, Nature m, Nature p) {
  EdgeConfig e;
  e.a_minus = a;
  e.a_plus = b;
  e.minus = m;
  e.plus = p;
  return e;
}
const Poly kGauss{0, 0, 0.5};
const Poly kQuartic{0, 0, 0.5, 0, 0.1};

double sup_diff(const SeriesFn& a, const SeriesFn& b, double rho) {
  return sup_norm([&](cplx z) { return a.eval_z(z) - b.eval_z(z); }, rho, 256);
}
}  // namespace

TEST_CASE("N_g on elementary inputs") {
  auto fr = frame_from_support(-2, 2);
  SeriesFn f = series_from_function(fr, [&](cplx z) { cplx x = fr.x_of(z); return 1.0 / (x * x); });
  auto n = apply_N(EdgeData{}, Poly{0, 1}, f);
  for (double x : {2.5, 4.0, -3.0}) CHECK(std::abs(n(cplx(x)) - 1.0 / x) < 1e-12);
  // with L = x - 2 and c: N_x f = x f - ([L x f]_+ - c (L x f)_{-1}) / L
  EdgeData ed{Poly{-2, 1}, 0.25};
  auto n2 = apply_N(ed, Poly{0, 1}, f);
  for (double x : {2.5, 4.0, -3.0}) {
    // L x / x^2 = 1 - 2/x : polar part 1, residue -2
    double want = 1.0 / x - (1.0 - 0.25 * -2.0) / (x - 2.0);
    CHECK(std::abs(n2(cplx(x)) - want) < 1e-12);
  }
}

TEST_CASE("K agrees with its contour definition") {
  for (auto [v, e] : {std::pair{kQuartic, edges(-4, 4, Nature::Soft, Nature::Soft)},
                      std::pair{kGauss, edges(-1, 1, Nature::Hard, Nature::Hard)},
                      std::pair{kGauss, edges(-4, 1, Nature::Soft, Nature::Hard)}}) {
    auto eq = solve_equilibrium(v, e);
    auto ed = hard_edge_data(eq.edges);
    std::mt19937_64 rng(7);
    auto f = random_h2(rng, eq.frame);
    auto k = apply_K(eq, ed, f);
    for (double rho : {1.5, 2.2}) {
      for (auto z : circle_nodes(rho, 7, 0.3)) {
        cplx x = eq.frame.x_of(z);
        CHECK(std::abs(k(x) - apply_K_direct(eq, ed, f, x)) < 1e-10 * (1 + std::abs(k(x))));
      }
    }
  }
}

TEST_CASE("K^{-1} K = id on random H^(2) elements") {
  struct Case { Poly v; EdgeConfig e; };
  std::vector<Case> cases{{kQuartic, edges(-4, 4, Nature::Soft, Nature::Soft)},
                          {kGauss, edges(-4, 1, Nature::Soft, Nature::Hard)},
                          {kGauss, edges(-1, 1, Nature::Hard, Nature::Hard)}};
  for (auto& c : cases) {
    auto eq = solve_equilibrium(c.v, c.e);
    auto ed = hard_edge_data(eq.edges);
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      auto f = random_h2(rng, eq.frame);
      auto g = apply_K(eq, ed, f);
      auto r = apply_K_inverse(eq, ed, g);
      worst = std::max(worst, sup_diff(r.f, f, 1.65) / sup_norm(f, 1.65));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("K^{-1} does not depend on the outer circle") {
  auto eq = solve_equilibrium(kQuartic, edges(-4, 4, Nature::Soft, Nature::Soft));
  auto ed = hard_edge_data(eq.edges);
  std::mt19937_64 rng(3);
  auto g = apply_K(eq, ed, random_h2(rng, eq.frame));
  OperatorOptions a, b;
  a.rho_outer = 1.6;
  b.rho_outer = 2.1;
  auto fa = apply_K_inverse(eq, ed, g, a).f, fb = apply_K_inverse(eq, ed, g, b).f;
  CHECK(sup_diff(fa, fb, 1.65) < 1e-11 * sup_norm(fa, 1.65));
}

TEST_CASE("Gaussian K^{-1} of W' against direct quadrature") {
  auto eq = solve_equilibrium(kGauss, edges(-3, 3, Nature::Soft, Nature::Soft));
  auto ed = hard_edge_data(eq.edges);
  auto dw = derivative_series(eq.w1m1);
  auto r = apply_K_inverse(eq, ed, dw);
  auto gz = [&](cplx z) { return dw.eval_z(z); };
  for (double x : {2.5, 3.0, 5.0}) {
    cplx d = kinv_direct(eq, gz, cplx(x));
    CHECK(std::abs(r.f(cplx(x)) - d) < 1e-10);
  }
  // Gaussian closed form: K f = -2 y f for f in H^(2) with y = sigma/2, so K^{-1} W' = -W'/sigma
  for (double x : {2.5, 4.0}) {
    cplx s = eq.frame.sigma(inverse_map(eq.frame, cplx(x)));
    CHECK(std::abs(r.f(cplx(x)) + dw(cplx(x)) / s) < 1e-11);
  }
}

TEST_CASE("hard/hard: generic inputs are outside Im K") {
  auto eq = solve_equilibrium(kGauss, edges(-1, 1, Nature::Hard, Nature::Hard));
  auto ed = hard_edge_data(eq.edges);
  std::mt19937_64 rng(5);
  auto g = random_h2(rng, eq.frame);
  CHECK_THROWS_AS(apply_K_inverse(eq, ed, g), NotInImage);
  CHECK_THROWS_AS(apply_K(eq, ed, eq.w1m1), std::domain_error);
}

TEST_CASE("operator norm diagnostic is finite") {
  auto eq = solve_equilibrium(kQuartic, edges(-4, 4, Nature::Soft, Nature::Soft));
  double n = operator_norm_diagnostic(eq, hard_edge_data(eq.edges), 1.65, 10);
  CHECK(n > 0);
  CHECK(n < 1e3);
}
