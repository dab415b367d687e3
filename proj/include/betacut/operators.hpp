#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "analytic_kernel.hpp"
#include "equilibrium.hpp"

namespace betacut {

struct EdgeData {
  Poly L{1.0};
  double c = 0.0;
};

inline EdgeData hard_edge_data(const EdgeConfig& e) {
  EdgeData d;
  d.L = Poly{1.0};
  if (e.minus == Nature::Hard) d.L = poly_mul(d.L, Poly{-e.a_minus, 1.0});
  if (e.plus == Nature::Hard) d.L = poly_mul(d.L, Poly{-e.a_plus, 1.0});
  if (e.minus == Nature::Soft && e.plus == Nature::Hard) d.c = 1.0 / (e.a_minus - e.a_plus);
  if (e.plus == Nature::Soft && e.minus == Nature::Hard) d.c = 1.0 / (e.a_plus - e.a_minus);
  return d;
}

struct NotInImage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OperatorOptions {
  double rho_E = 4.0;    // coefficient extraction at infinity
  int nodes_E = 256;
  double rho_outer = 0.0;  // Laurent circle of L g / 2S; 0 = automatic
  int m_outer = 128;
  double rho_check = 1.25 * 1.15 * 1.15;  // Gamma_2
  double kinv_tol = 1e-7;
  EncodeOptions enc;
};

using CPoly = std::vector<cplx>;

inline cplx cpoly_eval(const CPoly& p, cplx x) {
  cplx r = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) r = r * x + *it;
  return r;
}

// nodes on the circle |z| = rho in the x-plane, with the trapezoid weight of dx / 2 i pi
struct XContour {
  std::vector<cplx> z, x, w;
  XContour(const JoukowskiFrame& fr, double rho, int m) : z(circle_nodes(rho, m)), x(m), w(m) {
    for (int k = 0; k < m; ++k) {
      x[k] = fr.x_of(z[k]);
      w[k] = fr.sigma(z[k]) / static_cast<double>(m);
    }
  }
  int size() const { return static_cast<int>(z.size()); }
};

// [F]_+ - c F_{-1}, F sampled on a contour surrounding the cut; d = degree bound of [F]_+
inline CPoly polar_part(const XContour& C, const std::vector<cplx>& F, int d, double c) {
  CPoly p(std::max(d, 0) + 1, 0.0);
  cplx fm1 = 0.0;
  for (int k = 0; k < C.size(); ++k) {
    cplx xi = 1.0 / C.x[k];
    cplx a = F[k] * C.w[k];
    fm1 += a;
    cplx pw = xi;
    for (int q = 0; q <= d; ++q) {
      p[q] += a * pw;
      pw *= xi;
    }
  }
  p[0] -= c * fm1;
  return p;
}

// N_g f at x, given the polar part of L g f
inline cplx n_value(const EdgeData& ed, const Poly& g, cplx fx, cplx x, const CPoly& pp) {
  return poly_eval(g, x) * fx - cpoly_eval(pp, x) / poly_eval(ed.L, x);
}

inline int n_degree(const EdgeData& ed, const Poly& g) {
  return std::max(poly_degree(ed.L) + poly_degree(g) - 1, 0);
}

// polar part for N_g applied to a function of x given by fx
inline CPoly n_polar(const JoukowskiFrame& fr, const EdgeData& ed, const Poly& g,
                     const std::function<cplx(cplx z)>& fz, const OperatorOptions& o = {}) {
  XContour C(fr, o.rho_E, o.nodes_E);
  std::vector<cplx> F(C.size());
  for (int k = 0; k < C.size(); ++k) F[k] = poly_eval(ed.L, C.x[k]) * poly_eval(g, C.x[k]) * fz(C.z[k]);
  return polar_part(C, F, n_degree(ed, g), ed.c);
}

inline SeriesFn apply_N(const EdgeData& ed, const Poly& g, const SeriesFn& f, const OperatorOptions& o = {}) {
  const auto& fr = f.frame;
  if (poly_degree(g) < 0) {
    SeriesFn z;
    z.frame = fr;
    z.coeffs.assign(1, 0.0);
    return z;
  }
  CPoly pp = n_polar(fr, ed, g, [&](cplx z) { return f.eval_z(z); }, o);
  return series_from_function(
      fr, [&](cplx z) { return n_value(ed, g, f.eval_z(z), fr.x_of(z), pp); }, o.enc);
}

inline void require_h2(const SeriesFn& f, double tol = 1e-9) {
  double mx = 0.0;
  for (auto c : f.coeffs) mx = std::max(mx, std::abs(c));
  if (f.size() > 0 && std::abs(f.coeffs[0]) > tol * std::max(mx, 1e-300) && std::abs(f.coeffs[0]) > 1e-14)
    throw std::domain_error("argument not O(1/x^2)");
}

// (K f)(z) as a callable, f given by its values in z
inline std::function<cplx(cplx)> k_callable(const EquilibriumData& eq, const EdgeData& ed,
                                            const std::function<cplx(cplx)>& fz, const OperatorOptions& o = {}) {
  Poly dv = poly_derivative(eq.v0);
  CPoly pp = n_polar(eq.frame, ed, dv, fz, o);
  return [&eq, ed, dv, pp, fz](cplx z) {
    cplx x = eq.frame.x_of(z);
    cplx f = fz(z);
    return 2.0 * eq.w_z(z) * f - n_value(ed, dv, f, x, pp);
  };
}

inline SeriesFn apply_K(const EquilibriumData& eq, const EdgeData& ed, const SeriesFn& f,
                        const OperatorOptions& o = {}) {
  require_h2(f);
  auto k = k_callable(eq, ed, [&](cplx z) { return f.eval_z(z); }, o);
  return series_from_function(eq.frame, k, o.enc);
}

// the defining contour form, for cross-checks: contour |z| = rho_c between the cut and x
inline cplx apply_K_direct(const EquilibriumData& eq, const EdgeData& ed, const SeriesFn& f, cplx x,
                           double rho_c = 1.1, int m = 2048) {
  Poly dv = poly_derivative(eq.v0);
  XContour C(eq.frame, rho_c, m);
  cplx s = 0.0;
  for (int k = 0; k < C.size(); ++k) {
    cplx xi = C.x[k];
    s += poly_eval(ed.L, xi) / poly_eval(ed.L, x) * (1.0 / (x - xi) + ed.c) * poly_eval(dv, xi) *
         f.eval_z(C.z[k]) * C.w[k];
  }
  return 2.0 * eq.w_x(x) * f(x) - s;
}

inline double auto_rho_outer(const EquilibriumData& eq, double rho_t) {
  double r = std::isfinite(eq.r_S) ? std::sqrt(rho_t * eq.r_S) : 3.0;
  return std::min(std::max(r, 1.05 * rho_t), 3.0);
}

// values of K^{-1} g at the target nodes zt, g given as a callable of z
struct KinvPlan {
  const EquilibriumData* eq = nullptr;
  double rho_o = 2.0;
  std::vector<cplx> zo;   // outer nodes
  std::vector<cplx> fac;  // Lhat / 2S at outer nodes
  int Mo = 64;

  KinvPlan() = default;
  KinvPlan(const EquilibriumData& e, double rho_t, const OperatorOptions& o = {}) : eq(&e) {
    rho_o = o.rho_outer > 0 ? o.rho_outer : auto_rho_outer(e, rho_t);
    if (!(rho_o > rho_t)) throw std::invalid_argument("K^{-1}: outer circle must enclose the targets");
    if (std::isfinite(e.r_S) && !(rho_o < e.r_S)) throw NumericalFailure("contour invalid: crosses a zero of S");
    int m = o.m_outer;
    zo = circle_nodes(rho_o, m);
    fac.resize(m);
    for (int k = 0; k < m; ++k) fac[k] = e.lhat(e.frame.x_of(zo[k])) / (2.0 * e.S_z(zo[k]));
    Mo = m / 2;
  }

  // h_m for m = 0..Mo-1 from outer samples of g
  std::vector<cplx> h_coeffs(const std::vector<cplx>& gouter) const {
    int m = static_cast<int>(zo.size());
    std::vector<cplx> v(m);
    for (int k = 0; k < m; ++k) v[k] = gouter[k] * fac[k];
    return dft_nonnegative(zo, v, Mo);
  }

  cplx value(const std::vector<cplx>& hm, cplx zt, cplx gt) const {
    cplx G = hm[0], zp = zt, zi = 1.0 / zt, pp = zp, pi = zi;
    for (int j = 1; j < static_cast<int>(hm.size()); ++j) {
      G += hm[j] * (pp + pi);
      pp *= zp;
      pi *= zi;
    }
    cplx h = eq->lhat(eq->frame.x_of(zt)) * gt / (2.0 * eq->S_z(zt));
    return (G - h) / eq->frame.sigma(zt);
  }
};

// the plan as a linear map: f(zt_q) = sum_k g(zo_k) C(k, q) + g(zt_q) d_q
struct KinvMap {
  Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> C;
  std::vector<cplx> d;

  KinvMap(const KinvPlan& plan, const std::vector<cplx>& zt) {
    const auto& eq = *plan.eq;
    const int mo = static_cast<int>(plan.zo.size()), nt = static_cast<int>(zt.size()), Q = plan.Mo;
    C.resize(mo, nt);
    d.resize(nt);
    std::vector<cplx> sig(nt);
    for (int q = 0; q < nt; ++q) {
      sig[q] = eq.frame.sigma(zt[q]);
      d[q] = -eq.lhat(eq.frame.x_of(zt[q])) / (2.0 * eq.S_z(zt[q])) / sig[q];
    }
    for (int k = 0; k < mo; ++k) {
      // h_m = (1/mo) sum_k fac_k g_k zo_k^{-m}; G(z) = h_0 + sum_{m>=1} h_m (z^m + z^-m)
      cplx zi = 1.0 / plan.zo[k];
      for (int q = 0; q < nt; ++q) {
        cplx s = 1.0, pw = 1.0, zp = zt[q], zm = 1.0 / zt[q], ap = 1.0, am = 1.0;
        for (int m = 1; m < Q; ++m) {
          pw *= zi;
          ap *= zp;
          am *= zm;
          s += pw * (ap + am);
        }
        C(k, q) = plan.fac[k] * s / static_cast<double>(mo) / sig[q];
      }
    }
  }
};

inline std::vector<cplx> kinv_values(const KinvPlan& plan, const std::function<cplx(cplx)>& gz,
                                     const std::vector<cplx>& zt) {
  std::vector<cplx> go(plan.zo.size());
  for (std::size_t k = 0; k < go.size(); ++k) go[k] = gz(plan.zo[k]);
  auto hm = plan.h_coeffs(go);
  std::vector<cplx> out(zt.size());
  for (std::size_t k = 0; k < zt.size(); ++k) out[k] = plan.value(hm, zt[k], gz(zt[k]));
  return out;
}

struct KinvResult {
  SeriesFn f;
  double residual = 0.0;
};

inline double relative_residual(const EquilibriumData& eq, const EdgeData& ed, const SeriesFn& f,
                                const std::function<cplx(cplx)>& gz, const OperatorOptions& o) {
  auto k = k_callable(eq, ed, [&](cplx z) { return f.eval_z(z); }, o);
  double num = 0.0, den = 0.0;
  for (auto z : circle_nodes(o.rho_check, 256)) {
    num = std::max(num, std::abs(k(z) - gz(z)));
    den = std::max(den, std::abs(gz(z)));
  }
  return den == 0.0 ? num : num / den;
}

inline KinvResult apply_K_inverse_fn(const EquilibriumData& eq, const EdgeData& ed,
                                     const std::function<cplx(cplx)>& gz, const OperatorOptions& o = {},
                                     bool check = true) {
  KinvPlan plan(eq, o.enc.rho, o);
  // values at the encoding circle: evaluate through the plan, cache g
  std::vector<cplx> go(plan.zo.size());
  for (std::size_t k = 0; k < go.size(); ++k) go[k] = gz(plan.zo[k]);
  auto hm = plan.h_coeffs(go);
  KinvResult r;
  r.f = series_from_function(eq.frame, [&](cplx z) { return plan.value(hm, z, gz(z)); }, o.enc);
  if (check) {
    r.residual = relative_residual(eq, ed, r.f, gz, o);
    if (r.residual > o.kinv_tol) throw NotInImage("not in Im K (residual " + std::to_string(r.residual) + ")");
  }
  return r;
}

inline KinvResult apply_K_inverse(const EquilibriumData& eq, const EdgeData& ed, const SeriesFn& g,
                                  const OperatorOptions& o = {}, bool check = true) {
  return apply_K_inverse_fn(eq, ed, [&](cplx z) { return g.eval_z(z); }, o, check);
}

// contour form with the contour between the cut and x, for oracles
inline cplx kinv_direct(const EquilibriumData& eq, const std::function<cplx(cplx)>& gz, cplx x,
                        double rho_c = 1.1, int m = 4096) {
  XContour C(eq.frame, rho_c, m);
  cplx s = 0.0;
  for (int k = 0; k < C.size(); ++k) {
    cplx h = eq.lhat(C.x[k]) * gz(C.z[k]) / (2.0 * eq.S_z(C.z[k]));
    s += h / (C.x[k] - x) * C.w[k];
  }
  return s / eq.frame.sigma(inverse_map(eq.frame, x));
}

inline SeriesFn random_h2(std::mt19937_64& rng, const JoukowskiFrame& fr, int M = 16, double decay = 0.6) {
  std::normal_distribution<double> n(0, 1);
  SeriesFn f;
  f.frame = fr;
  f.coeffs.assign(M, 0.0);
  for (int j = 2; j <= M; ++j) f.coeffs[j - 1] = cplx(n(rng), n(rng)) * std::pow(decay, j);
  return f;
}

// empirical ||K^{-1}||_{Gamma_l} over random elements of Im K
inline double operator_norm_diagnostic(const EquilibriumData& eq, const EdgeData& ed, double rho_l, int trials,
                                       unsigned seed = 1, const OperatorOptions& o = {}) {
  std::mt19937_64 rng(seed);
  double best = 0.0;
  for (int t = 0; t < trials; ++t) {
    SeriesFn f = random_h2(rng, eq.frame);
    auto k = k_callable(eq, ed, [&](cplx z) { return f.eval_z(z); }, o);
    double nf = sup_norm([&](cplx z) { return f.eval_z(z); }, rho_l, 256);
    double ng = sup_norm(k, rho_l, 256);
    if (ng > 0) best = std::max(best, nf / ng);
  }
  return best;
}

}  // namespace betacut
