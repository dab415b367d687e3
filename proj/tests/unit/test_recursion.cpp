#include "doctest.h"

#include <random>
#include <set>

#include "betacut/recursion.hpp"

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

PotentialSpec spec_of(const Poly& v) {
  PotentialSpec s;
  s.orders = {v};
  return s;
}

Expansion expand(const Poly& v, const EdgeConfig& e, double beta, int maxK, RecursionOptions o = {}) {
  auto eq = solve_equilibrium(v, e);
  return expand_all(eq, hard_edge_data(eq.edges), spec_of(v), beta, maxK, o);
}

EdgeConfig soft4() { return edges(-4, 4, Nature::Soft, Nature::Soft); }

// two-point planar function, soft/soft
cplx w20_closed(const JoukowskiFrame& fr, double beta, cplx x1, cplx x2) {
  cplx z1 = inverse_map(fr, x1), z2 = inverse_map(fr, x2);
  double g = fr.gamma;
  return (2.0 / beta) / ((z1 * z2 - 1.0) * (z1 * z2 - 1.0) * g * g * (1.0 - 1.0 / (z1 * z1)) * (1.0 - 1.0 / (z2 * z2)));
}

cplx random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-5, 5);
  cplx x;
  do x = cplx(u(rng), u(rng));
  while (std::abs(x.imag()) < 0.5 && std::abs(x.real()) < 4.0);
  return x;
}
}  // namespace

TEST_CASE("W_2^0 for the Gaussian at (3,-3)") {
  auto e2 = expand(kGauss, soft4(), 2.0, 0);
  CHECK(std::abs(e2.terms.at({2, 0})({3.0, -3.0}) - 1.0 / 45.0) < 1e-12);
  auto e1 = expand(kGauss, soft4(), 1.0, 0);
  CHECK(std::abs(e1.terms.at({2, 0})({3.0, -3.0}) - 2.0 / 45.0) < 1e-12);
}

TEST_CASE("W_2^0 matches the universal two-point function") {
  std::mt19937_64 rng(11);
  for (const auto& v : {kGauss, kQuartic})
    for (double beta : {1.0, 2.0, 4.0}) {
      auto ex = expand(v, soft4(), beta, 0);
      const auto& W = ex.terms.at({2, 0});
      double worst = 0.0;
      for (int i = 0; i < 10; ++i) {
        cplx a = random_point(rng), b = random_point(rng);
        cplx want = w20_closed(ex.eq.frame, beta, a, b);
        worst = std::max(worst, std::abs(W({a, b}) - want) / std::abs(want));
      }
      CHECK(worst < 1e-8);
      CHECK(W.asymmetry < 1e-9);
    }
}

TEST_CASE("triangular sparsity and parity at beta = 2") {
  auto ex = expand(kGauss, soft4(), 2.0, 1);
  std::set<std::pair<int, int>> want{{1, -1}, {1, 0}, {1, 1}, {2, 0}, {2, 1}, {3, 1}};
  std::set<std::pair<int, int>> got;
  for (auto& [k, t] : ex.terms) got.insert(k);
  CHECK(got == want);
  CHECK(ex.terms.at({1, 0}).max_abs() <= 1e-10);
  CHECK(ex.terms.at({2, 1}).max_abs() <= 1e-8);
  for (auto& [k, t] : ex.terms) {
    CHECK(t.asymmetry < 1e-9);
    CHECK(ex.residuals.at(k) < 1e-9);
  }
  // W_3^{-1} lies outside the triangle
  CHECK(structurally_zero(3, -1));
  CHECK(structurally_zero(4, 1));
  CHECK_FALSE(structurally_zero(3, 1));
  CHECK(ex.get(4, 1) == nullptr);
  CHECK_THROWS_AS(ex.get(2, 2), std::runtime_error);
}

TEST_CASE("Gaussian W_1^1 at beta = 2") {
  // genus-one one-point function of the GUE: 1 / (x^2 - 4)^{5/2}
  auto ex = expand(kGauss, soft4(), 2.0, 1);
  const auto& W = ex.terms.at({1, 1});
  for (cplx x : {cplx(3.0), cplx(-2.5, 0.7), cplx(0.3, 2.0)}) {
    cplx s = x * std::sqrt(1.0 - 4.0 / (x * x));
    cplx want = 1.0 / (s * s * s * s * s);
    CHECK(std::abs(W({x}) - want) < 1e-11 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("assemble_E against the symbolic two-point source") {
  auto eq = solve_equilibrium(kGauss, soft4());
  for (double beta : {1.0, 2.0}) {
    Expansion ex = make_expansion(eq, hard_edge_data(eq.edges), spec_of(kGauss), beta);
    cplx z2 = inverse_map(eq.frame, -3.0);
    std::vector<cplx> zl{inverse_map(eq.frame, 3.0), inverse_map(eq.frame, cplx(1.0, 2.0))};
    auto E = assemble_E(ex, 2, -1, zl, {z2});
    auto W = [](cplx x) { return (x - x * std::sqrt(1.0 - 4.0 / (x * x))) / 2.0; };
    double dW2 = (1.0 - 3.0 / std::sqrt(5.0)) / 2.0;
    for (std::size_t i = 0; i < zl.size(); ++i) {
      cplx x = eq.frame.x_of(zl[i]), d = x + 3.0;
      cplx want = (2.0 / beta) * (W(x) / (d * d) - dW2 / d - W(-3.0) / (d * d));
      CHECK(std::abs(E[i] - want) < 1e-12);
    }
  }
}

TEST_CASE("E_1^0 at beta = 2 is the diagonal of W_2^0") {
  auto eq = solve_equilibrium(kQuartic, soft4());
  Expansion ex = make_expansion(eq, hard_edge_data(eq.edges), spec_of(kQuartic), 2.0);
  ex.terms[{2, 0}] = next_order(ex, 2, -1);
  ex.terms[{1, 0}] = next_order(ex, 1, -1);
  std::vector<cplx> zl{cplx(1.3, 0.4), cplx(-1.1, 1.0)};
  auto E = assemble_E(ex, 1, 0, zl, {});
  const auto& W2 = ex.terms.at({2, 0});
  for (std::size_t i = 0; i < zl.size(); ++i) {
    cplx want = W2.eval_z({zl[i], zl[i]});
    CHECK(std::abs(E[i] - want) < 1e-10 * std::abs(want));
  }
}

TEST_CASE("W_1^0 against the direct inverse") {
  auto eq = solve_equilibrium(kGauss, soft4());
  double beta = 1.0;
  auto W = w1_subleading(eq, hard_edge_data(eq.edges), beta);
  auto g = [&](cplx z) { return (1.0 - 2.0 / beta) * eq.w1m1.deriv_z(z); };
  for (cplx x : {cplx(3.0), cplx(0.5, 1.5)}) {
    cplx want = -kinv_direct(eq, g, x);
    CHECK(std::abs(W({x}) - want) < 1e-10);
    // Gaussian closed form K f = -sigma f
    cplx s = x * std::sqrt(1.0 - 4.0 / (x * x));
    cplx dW = (1.0 - x / s) / 2.0;
    CHECK(std::abs(W({x}) - (1.0 - 2.0 / beta) * dW / s) < 1e-10);
  }
}

TEST_CASE("loop residuals and a negative control") {
  auto eq = solve_equilibrium(kGauss, soft4());
  Expansion ex = make_expansion(eq, hard_edge_data(eq.edges), spec_of(kGauss), 1.0);
  CHECK(loop_residual(ex, 1, -1) < 1e-9);
  // without W_1^0 the order-N^0 equation is violated
  double missing = loop_residual(ex, 1, 0, true);
  CHECK(missing > 1e-2);
  CHECK_THROWS_AS(loop_residual(ex, 1, 0), std::runtime_error);
  ex.terms[{2, 0}] = next_order(ex, 2, -1);
  ex.terms[{1, 0}] = next_order(ex, 1, -1);
  CHECK(loop_residual(ex, 1, 0) < 1e-9);
  CHECK(loop_residual(ex, 1, 0) < 1e-6 * missing);

  auto q = expand(kQuartic, soft4(), 1.0, 1);
  for (auto& [k, r] : q.residuals) CHECK(r < 1e-6);
}

TEST_CASE("beta decomposition reassembles at a third beta") {
  auto e1 = expand(kGauss, soft4(), 1.0, 1);
  auto e2 = expand(kGauss, soft4(), 2.0, 1);
  auto e4 = expand(kGauss, soft4(), 4.0, 1);
  auto e3 = expand(kGauss, soft4(), 3.0, 1);
  for (auto nk : {std::pair{1, 1}, std::pair{2, 0}, std::pair{1, 0}}) {
    auto d = beta_decompose({&e1, &e2}, nk.first, nk.second);
    CHECK(static_cast<int>(d.coefficients.size()) == BetaDecomposition::unknowns(nk.first, nk.second));
    auto r = d.reassemble(3.0);
    const auto& direct = e3.terms.at(nk);
    std::vector<cplx> x(nk.first);
    for (int i = 0; i < nk.first; ++i) x[i] = cplx(2.5 + i, 0.5 - i);
    cplx a = r(x), b = direct(x);
    CHECK(std::abs(a - b) < 1e-7 * std::max(1.0, std::abs(b)));
  }
  CHECK_THROWS_AS(beta_decompose({&e1}, 1, 1), std::invalid_argument);
  // (1 - 2/beta)^2 and 2/beta are proportional across beta = 1 and 4
  CHECK_THROWS_AS(beta_decompose({&e1, &e4}, 1, 1), std::runtime_error);
}

TEST_CASE("hard edges: beta structure and arcsine parity") {
  // one hard edge: W_1^0 is proportional to (1 - 2/beta)
  auto ea = expand(Poly{0, 1}, edges(0, 8, Nature::Hard, Nature::Soft), 1.0, 0);
  auto eb = expand(Poly{0, 1}, edges(0, 8, Nature::Hard, Nature::Soft), 4.0, 0);
  for (cplx x : {cplx(6.0), cplx(2.0, 1.0)}) {
    cplx a = ea.terms.at({1, 0})({x}) / (1.0 - 2.0 / 1.0);
    cplx b = eb.terms.at({1, 0})({x}) / (1.0 - 2.0 / 4.0);
    CHECK(std::abs(a - b) < 1e-10 * std::abs(a));
    CHECK(std::abs(a) > 1e-3);
  }
  for (auto& [k, r] : ea.residuals) CHECK(r < 1e-8);
  // arcsine at beta = 2: every odd order vanishes
  auto arc = expand(Poly{}, edges(-1, 1, Nature::Hard, Nature::Hard), 2.0, 1);
  CHECK(arc.terms.at({1, 0}).max_abs() < 1e-10);
  for (auto& [k, r] : arc.residuals) CHECK(r < 1e-8);
}
