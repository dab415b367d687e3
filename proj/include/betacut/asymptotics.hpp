#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "operators.hpp"
#include "parallel.hpp"
#include "recursion.hpp"

namespace betacut {

// ---- Gaussian reference ---------------------------------------------------

// ln of the Gaussian beta-ensemble partition function, weight exp(-(N beta / 2) x^2 / 2)
inline double selberg_lnZ(int N, double beta) {
  if (N < 1) throw std::invalid_argument("selberg_lnZ: N must be >= 1");
  if (!(beta > 0)) throw std::invalid_argument("selberg_lnZ: beta must be positive");
  const double n = N;
  double r = 0.5 * n * std::log(2.0 * kPi) + (-beta * n * n / 4.0 + (beta / 4.0 - 0.5) * n) * std::log(n * beta / 2.0);
  for (int j = 1; j <= N; ++j) r += std::lgamma(1.0 + j * beta / 2.0);
  return r - n * std::lgamma(1.0 + beta / 2.0);
}

// same, for the Gaussian whose equilibrium support is [am, ap]
inline double gaussian_lnZ(int N, double beta, double am, double ap) {
  if (!(am < ap)) throw std::invalid_argument("gaussian_lnZ: need alpha- < alpha+");
  const double n = N;
  return selberg_lnZ(N, beta) + (n + beta * n * (n - 1.0) / 2.0) * std::log((ap - am) / 4.0);
}

// ---- quadrature and contour helpers ---------------------------------------

struct SQuadrature {
  std::vector<double> nodes, weights;  // on [0, 1]
};

inline SQuadrature gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1");
  SQuadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5)), dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    q.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    q.weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
  return q;
}

// (1/2 i pi) \oint h(x) f(x) dx around the cut, f given in z
inline cplx oint_poly(const JoukowskiFrame& fr, const Poly& h, const std::function<cplx(cplx)>& fz,
                      double rho = 1.3, int m = 512) {
  cplx s = 0.0;
  for (auto z : circle_nodes(rho, m)) s += poly_eval(h, fr.x_of(z)) * fz(z) * fr.sigma(z);
  return s / static_cast<double>(m);
}

inline cplx oint_poly(const Poly& h, const SeriesFn& f, double rho = 1.3, int m = 512) {
  return oint_poly(f.frame, h, [&](cplx z) { return f.eval_z(z); }, rho, m);
}

// ---- free energy ----------------------------------------------------------

struct FreeEnergyOptions {
  int s_nodes = 24;
  int max_nodes = 192;
  double s_tol = 1e-8;
  RecursionOptions rec;
  FreeEnergyOptions() { rec.residuals = false; }
};

struct FreeEnergyExpansion {
  std::map<int, double> coeffs;  // k -> F^{k}, k = -2..maxK
  int maxK = 0;
  double beta = 2.0;
  bool gaussian_reference = false;  // true: ln Z = gaussian_lnZ + sum N^{-k} F^{k}
  double alpha_minus = -2.0, alpha_plus = 2.0;
  std::string reference;
  SQuadrature s_quadrature;
  double s_change = 0.0;  // last |Delta F| under node doubling
};

namespace detail {

// d/ds of F^{k}, k = -2..maxK, at one point of the path
inline std::vector<double> free_energy_integrand(const PotentialSpec& v0, const PotentialSpec& v1,
                                                 const EdgeConfig& e, double beta, int maxK, double s,
                                                 const RecursionOptions& ro) {
  PotentialSpec vs = interpolate(v0, v1, s);
  auto hyp = validate_hypotheses(vs, e);
  if (!hyp.all())
    throw NumericalFailure("interpolation path leaves one-cut class (s = " + sci(s) + ": " + hyp.message + ")");
  auto eq = solve_equilibrium(vs.orders.at(0), e);
  Expansion ex = expand_one_point(eq, hard_edge_data(eq.edges), vs, beta, maxK + 1, ro);
  const std::size_t K = std::max(v0.orders.size(), v1.orders.size());
  std::vector<Poly> dv(K);
  for (std::size_t m = 0; m < K; ++m)
    dv[m] = poly_add(m < v1.orders.size() ? v1.orders[m] : Poly{}, m < v0.orders.size() ? v0.orders[m] : Poly{},
                     1.0, -1.0);
  std::vector<double> out;
  for (int k = -2; k <= maxK; ++k) {
    cplx acc = 0.0;
    for (int m = 0; m <= k + 2 && m < static_cast<int>(K); ++m) {
      if (poly_degree(dv[m]) < 0) continue;
      auto* W = ex.get(1, k + 1 - m);
      if (!W) continue;
      acc += oint_poly(dv[m], series_of(*W));
    }
    out.push_back(-0.5 * beta * acc.real());
  }
  return out;
}

}  // namespace detail

// F^{k} of ln Z^{V1} - ln Z^{V0} along V_s = (1 - s) V0 + s V1, both on the same interval
inline FreeEnergyExpansion free_energy_path(const PotentialSpec& v0, const PotentialSpec& v1, const EdgeConfig& e,
                                            double beta, int maxK, const FreeEnergyOptions& o = {}) {
  if (maxK < -2) throw std::invalid_argument("free energy: maxK >= -2");
  FreeEnergyExpansion fe;
  fe.maxK = maxK;
  fe.beta = beta;
  std::vector<double> prev;
  for (int n = o.s_nodes; n <= o.max_nodes; n *= 2) {
    auto q = gauss_legendre(n);
    std::vector<std::vector<double>> vals(n);
    parallel_for(n, [&](std::size_t i) {
      vals[i] = detail::free_energy_integrand(v0, v1, e, beta, maxK, q.nodes[i], o.rec);
    });
    std::vector<double> F(maxK + 3, 0.0);
    for (int i = 0; i < n; ++i)
      for (std::size_t k = 0; k < F.size(); ++k) F[k] += q.weights[i] * vals[i][k];
    fe.s_quadrature = q;
    double change = 0.0;
    if (!prev.empty())
      for (std::size_t k = 0; k < F.size(); ++k) change = std::max(change, std::abs(F[k] - prev[k]));
    prev = F;
    for (int k = -2; k <= maxK; ++k) fe.coeffs[k] = F[k + 2];
    fe.s_change = change;
    if (n > o.s_nodes && change < o.s_tol) break;
  }
  return fe;
}

inline FreeEnergyExpansion free_energy_coeffs(const PotentialSpec& spec, const EdgeConfig& e, double beta, int maxK,
                                              const FreeEnergyOptions& o = {}) {
  if (e.minus != Nature::Soft || e.plus != Nature::Soft)
    throw std::invalid_argument("free energy: absolute ln Z needs two soft edges; use free_energy_path");
  auto eq = solve_equilibrium(spec.orders.at(0), e);
  double am = eq.support.alpha_minus, ap = eq.support.alpha_plus;
  PotentialSpec g = gaussian_reference(am, ap);
  g.b_minus = spec.b_minus;
  g.b_plus = spec.b_plus;
  auto fe = free_energy_path(g, spec, e, beta, maxK, o);
  fe.gaussian_reference = true;
  fe.alpha_minus = am;
  fe.alpha_plus = ap;
  fe.reference = "gaussian beta ensemble on [" + detail::sci(am) + ", " + detail::sci(ap) + "]";
  return fe;
}

inline double lnZ_prediction(const FreeEnergyExpansion& fe, int N, int maxK) {
  if (!fe.gaussian_reference) throw std::invalid_argument("lnZ_prediction: expansion has no Gaussian reference");
  if (maxK > fe.maxK) throw std::invalid_argument("lnZ_prediction: coefficients missing beyond maxK");
  double r = gaussian_lnZ(N, fe.beta, fe.alpha_minus, fe.alpha_plus);
  for (int k = -2; k <= maxK; ++k) r += std::pow(static_cast<double>(N), -k) * fe.coeffs.at(k);
  return r;
}

// ---- central limit theorem ------------------------------------------------

struct CLTResult {
  double mean = 0.0;
  double covariance = 0.0;
  Poly h;
};

// m[h]; v1 = V^{1} when the potential depends on N
inline double clt_mean(const EquilibriumData& eq, const EdgeData& ed, double beta, const Poly& h,
                       const Poly& v1 = {}, const RecursionOptions& o = {}) {
  if (poly_degree(h) < 0) return 0.0;
  auto W = w1_subleading(eq, ed, beta, v1, o);
  return oint_poly(h, series_of(W)).real();
}

inline double clt_covariance(const EquilibriumData& eq, const EdgeData& ed, double beta, const Poly& h,
                             const OperatorOptions& o = {}) {
  Poly dh = poly_derivative(h);
  if (poly_degree(dh) < 0) return 0.0;
  SeriesFn g = apply_N(ed, dh, eq.w1m1, o);
  auto r = apply_K_inverse(eq, ed, g, o);
  return (-2.0 / beta * oint_poly(h, r.f)).real();
}

inline CLTResult clt(const EquilibriumData& eq, const EdgeData& ed, double beta, const Poly& h, const Poly& v1 = {}) {
  CLTResult r;
  r.h = h;
  r.mean = clt_mean(eq, ed, beta, h, v1);
  r.covariance = clt_covariance(eq, ed, beta, h);
  return r;
}

}  // namespace betacut
