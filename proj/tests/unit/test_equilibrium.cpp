#include "doctest.h"

#include <random>

#include "betacut/equilibrium.hpp"

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
}  // namespace

TEST_CASE("semicircle oracle") {
  auto eq = solve_equilibrium(kGauss, edges(-3, 3, Nature::Soft, Nature::Soft));
  CHECK(std::abs(eq.support.alpha_minus + 2) < 1e-10);
  CHECK(std::abs(eq.support.alpha_plus - 2) < 1e-10);
  CHECK(std::abs(density(eq, 0.0) - 1.0 / kPi) < 1e-10);
  CHECK(std::abs(stieltjes_leading(eq, 3.0) - 0.5 * (3.0 - std::sqrt(5.0))) < 1e-12);
  CHECK(std::abs(s_function(eq, 0.7) - 0.5) < 1e-12);
  CHECK(std::abs(equilibrium_energy(eq) - 0.75) < 1e-10);
  CHECK(std::abs(eq.constant_C + 1.0) < 1e-10);
  double x = 3.0;
  double ref = x * std::sqrt(x * x - 4) / 4 - std::acosh(x / 2);
  CHECK(std::abs(rate_function(eq, 3.0) - ref) < 1e-10);
  CHECK(std::abs(rate_function(eq, 2.0)) < 1e-10);
  CHECK(std::abs(1e6 * stieltjes_leading(eq, 1e6) - 1.0) < 1e-5);
}

TEST_CASE("arcsine oracle") {
  auto eq = solve_equilibrium(Poly{0}, edges(-1, 1, Nature::Hard, Nature::Hard));
  CHECK(eq.support.alpha_minus == -1.0);
  CHECK(eq.support.alpha_plus == 1.0);
  CHECK(std::abs(density(eq, 0.0) - 1.0 / kPi) < 1e-12);
  CHECK(std::abs(stieltjes_leading(eq, 2.0) - 1.0 / std::sqrt(3.0)) < 1e-12);
  CHECK(std::abs(s_function(eq, 0.3) - 1.0) < 1e-12);
  CHECK(std::abs(equilibrium_energy(eq) - std::log(2.0)) < 1e-10);
}

TEST_CASE("hard-edge Marchenko-Pastur oracle") {
  auto eq = solve_equilibrium(Poly{0, 1}, edges(0, 6, Nature::Hard, Nature::Soft));
  CHECK(std::abs(eq.support.alpha_plus - 4.0) < 1e-10);
  CHECK(std::abs(s_function(eq, 1.7) - 0.5) < 1e-12);
  double x = 1.3;
  CHECK(std::abs(density(eq, x) - std::sqrt((4 - x) / x) / (2 * kPi)) < 1e-12);
  // hard edge pinned at the left end: mirrored problem
  auto em = solve_equilibrium(Poly{0, -1}, edges(-6, 0, Nature::Soft, Nature::Hard));
  CHECK(std::abs(em.support.alpha_minus + 4.0) < 1e-10);
  CHECK(std::abs(s_function(em, -1.7) - 0.5) < 1e-12);
}

TEST_CASE("normalization and consistency of the quartic solution") {
  auto eq = solve_equilibrium(kQuartic, edges(-4, 4, Nature::Soft, Nature::Soft));
  double am = eq.support.alpha_minus, ap = eq.support.alpha_plus;
  // Gauss-Chebyshev of the second kind for a square-root density
  int n = 400;
  double mass = 0;
  for (int i = 1; i <= n; ++i) {
    double t = kPi * i / (n + 1);
    double x = 0.5 * (am + ap) + 0.5 * (ap - am) * std::cos(t);
    double w = kPi / (n + 1) * std::sin(t) * std::sin(t);
    mass += w * density(eq, x) / std::sqrt(std::max(1e-300, 1 - std::cos(t) * std::cos(t))) * 0.5 * (ap - am);
  }
  CHECK(std::abs(mass - 1.0) < 1e-8);
  // Cauchy transform of the density by independent quadrature
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int k = 0; k < 20; ++k) {
    cplx x(u(rng), 0.5 + std::abs(u(rng)));
    cplx s = 0;
    int m = 4000;
    for (int i = 0; i < m; ++i) {
      double t = kPi * (i + 0.5) / m;
      double xi = 0.5 * (am + ap) - 0.5 * (ap - am) * std::cos(t);
      double dx = 0.5 * (ap - am) * std::sin(t) * kPi / m;
      s += density(eq, xi) * dx / (x - xi);
    }
    CHECK(std::abs(s - stieltjes_leading(eq, x)) < 1e-7);
  }
  // effective potential is flat on the support
  double mean = 0, m2 = 0;
  int g = 50;
  for (int i = 0; i < g; ++i) {
    double x = am + (ap - am) * (i + 0.5) / g;
    double v = 2 * log_potential(eq, x) - poly_eval(kQuartic, x);
    mean += v;
    m2 += v * v;
  }
  mean /= g;
  CHECK(std::sqrt(std::max(0.0, m2 / g - mean * mean)) < 1e-6);
  // rate function equals the primitive of y
  for (double x : {2.5, 3.2, -2.9}) {
    double ref = 0;
    double a = x > 0 ? ap : am;
    int m = 20000;
    for (int i = 0; i < m; ++i) {
      // substitution t = a + (x-a) s^2 removes the square-root endpoint
      double s = (i + 0.5) / m;
      double t = a + (x - a) * s * s;
      double y = (0.5 * poly_eval(poly_derivative(kQuartic), t) - stieltjes_leading(eq, t).real());
      ref += y * 2 * s * (x - a) / m;
    }
    CHECK(std::abs(rate_function(eq, x) - ref) < 1e-7);
    CHECK(rate_function(eq, x) > 0);
  }
  // E shifts with constants
  Poly shifted = kQuartic;
  shifted[0] += 0.37;
  auto e2 = solve_equilibrium(shifted, edges(-4, 4, Nature::Soft, Nature::Soft));
  CHECK(std::abs(e2.energy - eq.energy - 0.37) < 1e-12);
}

TEST_CASE("affine covariance of solve_support") {
  auto a = solve_support(kQuartic, edges(-4, 4, Nature::Soft, Nature::Soft));
  double lam = 1.7, mu = 0.4;
  // V(x) -> V((x - mu)/lam)
  Poly v(5, 0.0);
  for (int k = 0; k < 5; ++k) {
    Poly term{1.0};
    for (int j = 0; j < k; ++j) term = poly_mul(term, Poly{-mu / lam, 1.0 / lam});
    v = poly_add(v, term, 1.0, kQuartic[k]);
  }
  auto b = solve_support(v, edges(lam * -4 + mu, lam * 4 + mu, Nature::Soft, Nature::Soft));
  CHECK(std::abs(b.alpha_minus - (lam * a.alpha_minus + mu)) < 1e-9);
  CHECK(std::abs(b.alpha_plus - (lam * a.alpha_plus + mu)) < 1e-9);
}

TEST_CASE("offcriticality and hypotheses") {
  auto g = solve_equilibrium(kGauss, edges(-3, 3, Nature::Soft, Nature::Soft));
  auto r = check_offcritical(g);
  CHECK(r.ok);
  CHECK(std::abs(r.minS - 0.5) < 1e-12);
  auto a = solve_equilibrium(Poly{0}, edges(-1, 1, Nature::Hard, Nature::Hard));
  CHECK(std::abs(check_offcritical(a).minS - 1.0) < 1e-12);

  PotentialSpec gs;
  gs.orders = {kGauss};
  CHECK(validate_hypotheses(gs, edges(-3, 3, Nature::Soft, Nature::Soft)).all());
  CHECK_FALSE(validate_hypotheses(gs, edges(-3, 3, Nature::Hard, Nature::Hard)).all());
  // x^4/4 - x^2 is exactly critical: S has a double zero at the origin
  PotentialSpec dw;
  dw.orders = {Poly{0, 0, -1, 0, 0.25}};
  auto rc = validate_hypotheses(dw, edges(-4, 4, Nature::Soft, Nature::Soft));
  CHECK_FALSE(rc.offcritical);
  CHECK_FALSE(rc.all());
  PotentialSpec deeper;
  deeper.orders = {Poly{0, 0, -1.25, 0, 0.25}};
  CHECK_FALSE(validate_hypotheses(deeper, edges(-4, 4, Nature::Soft, Nature::Soft)).one_cut);
}

TEST_CASE("working interval") {
  PotentialSpec gs;
  gs.orders = {kGauss};
  auto e = select_working_interval(gs, Nature::Soft, Nature::Soft, 0.5);
  CHECK(std::abs(e.a_minus + 2.5) < 1e-10);
  CHECK(std::abs(e.a_plus - 2.5) < 1e-10);
  PotentialSpec z;
  z.orders = {Poly{0}};
  z.b_minus = -1;
  z.b_plus = 1;
  auto h = select_working_interval(z, Nature::Hard, Nature::Hard, 0.5);
  CHECK(h.a_minus == -1.0);
  CHECK(h.a_plus == 1.0);
  CHECK_THROWS(select_working_interval(gs, Nature::Soft, Nature::Soft, 0.0));
}
