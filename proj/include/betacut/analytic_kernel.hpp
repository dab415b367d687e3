#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "potential.hpp"

namespace betacut {

constexpr double kPi = std::numbers::pi;
inline const cplx kI{0.0, 1.0};

struct JoukowskiFrame {
  double c = 0.0;
  double gamma = 1.0;

  cplx x_of(cplx z) const { return c + gamma * (z + 1.0 / z); }
  cplx sigma(cplx z) const { return gamma * (z - 1.0 / z); }
  cplx dxdz(cplx z) const { return gamma * (1.0 - 1.0 / (z * z)); }
  double alpha_minus() const { return c - 2.0 * gamma; }
  double alpha_plus() const { return c + 2.0 * gamma; }
};

inline JoukowskiFrame frame_from_support(double am, double ap) {
  if (!(am < ap)) throw std::invalid_argument("frame_from_support: degenerate interval");
  return {0.5 * (am + ap), 0.25 * (ap - am)};
}

// branch with |z| > 1, z ~ (x - c)/gamma at infinity
inline cplx inverse_map(const JoukowskiFrame& f, cplx x) {
  cplx w = (x - f.c) / f.gamma;
  cplx r = std::sqrt(w * w - 4.0);
  cplx z1 = 0.5 * (w + r), z2 = 0.5 * (w - r);
  cplx z = std::abs(z1) >= std::abs(z2) ? z1 : z2;
  if (std::abs(z) < 1.0 + 1e-13) throw std::domain_error("inverse_map: point on the cut");
  return z;
}

inline std::vector<cplx> circle_nodes(double rho, int m, double offset = 0.0) {
  std::vector<cplx> z(m);
  for (int k = 0; k < m; ++k) z[k] = std::polar(rho, 2.0 * kPi * (k + offset) / m);
  return z;
}

// f(z) = sum_{j>=1} c_j z^{-j} / (1 - z^{-2})^p ; coeffs[j-1] = c_j
struct SeriesFn {
  JoukowskiFrame frame;
  int weight = 0;
  std::vector<cplx> coeffs;
  double tail = 0.0;  // relative size of the last quartile at the encoding radius
  double h_content = 0.0;  // relative z^0, z^1 content of the weighted samples

  int size() const { return static_cast<int>(coeffs.size()); }

  cplx eval_z(cplx z) const {
    cplx u = 1.0 / z, s = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) s = (s + *it) * u;
    if (weight == 0) return s;
    return s / std::pow(1.0 - u * u, weight);
  }
  cplx operator()(cplx x) const { return eval_z(inverse_map(frame, x)); }

  // df/dx at z
  cplx deriv_z(cplx z) const {
    cplx u = 1.0 / z, s = 0.0, ds = 0.0;
    // s = sum c_j u^j, ds = d s / d u
    for (int j = size(); j >= 1; --j) {
      ds = ds * u + static_cast<double>(j) * coeffs[j - 1];
      s = s * u + coeffs[j - 1];
    }
    s *= u;
    cplx w = 1.0 - u * u;
    // d/du [s w^{-p}] = ds w^{-p} + 2 p u s w^{-p-1}; du/dx = -u^2 / (gamma w)
    cplx dfdu = ds / std::pow(w, weight) + 2.0 * weight * u * s / std::pow(w, weight + 1);
    return dfdu * (-u * u) / (frame.gamma * w);
  }
};

inline SeriesFn operator+(const SeriesFn& a, const SeriesFn& b) {
  if (a.weight != b.weight) throw std::invalid_argument("series sum: weight mismatch");
  SeriesFn r = a;
  r.coeffs.resize(std::max(a.size(), b.size()), 0.0);
  for (int j = 0; j < b.size(); ++j) r.coeffs[j] += b.coeffs[j];
  return r;
}

inline SeriesFn operator*(cplx s, const SeriesFn& a) {
  SeriesFn r = a;
  for (auto& c : r.coeffs) c *= s;
  return r;
}

inline cplx eval_series(const SeriesFn& f, cplx x) { return f(x); }

// raise the weight by q without changing the function: multiply numerator by (1-u^2)^q
inline SeriesFn reweight(const SeriesFn& f, int q) {
  SeriesFn r = f;
  for (int t = 0; t < q; ++t) {
    std::vector<cplx> c(r.coeffs.size() + 2, 0.0);
    for (std::size_t j = 0; j < r.coeffs.size(); ++j) {
      c[j] += r.coeffs[j];
      c[j + 2] -= r.coeffs[j];
    }
    r.coeffs = std::move(c);
  }
  r.weight += q;
  return r;
}

// exact coefficient form of df/dx, weight p+2
inline SeriesFn derivative_series(const SeriesFn& f) {
  int M = f.size(), p = f.weight;
  SeriesFn d;
  d.frame = f.frame;
  d.weight = p + 2;
  d.coeffs.assign(M + 3, 0.0);
  auto c = [&](int j) -> cplx { return (j >= 1 && j <= M) ? f.coeffs[j - 1] : cplx(0.0); };
  for (int k = 1; k <= M + 3; ++k)
    d.coeffs[k - 1] = (-(k - 1.0) * c(k - 1) + (k - 3.0 - 2.0 * p) * c(k - 3)) / f.frame.gamma;
  d.tail = f.tail;
  return d;
}

// raw DFT: coefficient of z^{-j}, j = 1..M, from values on |z| = rho
inline std::vector<cplx> dft_negative(const std::vector<cplx>& z, const std::vector<cplx>& v, int M) {
  int m = static_cast<int>(z.size());
  std::vector<cplx> c(M, 0.0);
  for (int k = 0; k < m; ++k) {
    cplx zk = z[k], p = zk, val = v[k];
    for (int j = 1; j <= M; ++j) {
      c[j - 1] += val * p;
      p *= zk;
    }
  }
  for (auto& x : c) x /= static_cast<double>(m);
  return c;
}

// coefficient of z^{q}, q = 0..Q-1
inline std::vector<cplx> dft_nonnegative(const std::vector<cplx>& z, const std::vector<cplx>& v, int Q) {
  int m = static_cast<int>(z.size());
  std::vector<cplx> c(Q, 0.0);
  for (int k = 0; k < m; ++k) {
    cplx u = 1.0 / z[k], p = 1.0;
    for (int q = 0; q < Q; ++q) {
      c[q] += v[k] * p;
      p *= u;
    }
  }
  for (auto& x : c) x /= static_cast<double>(m);
  return c;
}

struct EncodeOptions {
  double rho = 1.2;
  int m_start = 32;
  int m_max = 1024;
  int max_weight = 10;
  int fixed_weight = -1;  // >= 0 disables the weight search
  double tail_tol = 1e-12;
  double h_tol = 1e-9;    // allowed non-negative power content (relative)
  double node_offset = 0.0;
};

namespace detail {

inline double tail_ratio(const std::vector<cplx>& c, double rho) {
  int M = static_cast<int>(c.size());
  double mx = 0.0, tl = 0.0;
  double s = 1.0;
  for (int j = 1; j <= M; ++j) {
    s /= rho;
    double a = std::abs(c[j - 1]) * s;
    mx = std::max(mx, a);
    if (4 * j > 3 * M) tl = std::max(tl, a);
  }
  return mx == 0.0 ? 0.0 : tl / mx;
}

}  // namespace detail

// encode samples f(z_k) with a given weight; M = m/2 coefficients
inline SeriesFn encode_values(const JoukowskiFrame& fr, const std::vector<cplx>& z,
                              const std::vector<cplx>& vals, int weight, double rho) {
  int m = static_cast<int>(z.size());
  std::vector<cplx> v(m);
  for (int k = 0; k < m; ++k) v[k] = vals[k] * std::pow(1.0 - 1.0 / (z[k] * z[k]), weight);
  SeriesFn f;
  f.frame = fr;
  f.weight = weight;
  f.coeffs = dft_negative(z, v, m / 2);
  f.tail = detail::tail_ratio(f.coeffs, rho);
  auto pos = dft_nonnegative(z, v, 2);
  double ref = 0.0, s = 1.0;
  for (int j = 1; j <= f.size(); ++j) {
    s /= rho;
    ref = std::max(ref, std::abs(f.coeffs[j - 1]) * s);
  }
  double bad = std::max(std::abs(pos[0]), std::abs(pos[1]) * rho);
  f.h_content = bad == 0.0 ? 0.0 : bad / std::max(ref, 1e-300);
  // drop the roundoff floor at the end
  int keep = f.size();
  while (keep > 1 && std::abs(f.coeffs[keep - 1]) * std::pow(rho, -keep) < 1e-15 * ref) --keep;
  f.coeffs.resize(keep);
  return f;
}

// adaptive encoding of a function analytic for |z| > 1 and vanishing at infinity
inline SeriesFn series_from_function(const JoukowskiFrame& fr, const std::function<cplx(cplx)>& fz,
                                     const EncodeOptions& o = {}) {
  SeriesFn best;
  double best_tail = 1e300;
  for (int m = o.m_start * 2; m <= 2 * o.m_max; m *= 2) {
    auto z = circle_nodes(o.rho, m, o.node_offset);
    std::vector<cplx> vals(m);
    for (int k = 0; k < m; ++k) vals[k] = fz(z[k]);
    int p0 = o.fixed_weight >= 0 ? o.fixed_weight : 0;
    int p1 = o.fixed_weight >= 0 ? o.fixed_weight : o.max_weight;
    for (int p = p0; p <= p1; ++p) {
      SeriesFn f = encode_values(fr, z, vals, p, o.rho);
      if (f.tail < best_tail * 0.5 || (f.tail <= o.tail_tol && best_tail > o.tail_tol)) {
        best = f;
        best_tail = f.tail;
      }
      if (f.tail <= o.tail_tol) {
        best = f;
        break;
      }
    }
    if (best.tail <= o.tail_tol) break;
  }
  if (best.h_content > o.h_tol) throw std::domain_error("not in H^(1): non-negative power content");
  return best;
}

inline SeriesFn series_from_samples(const JoukowskiFrame& fr, const std::vector<cplx>& vals, double rho,
                                    int weight = 0, double h_tol = 1e-9) {
  int m = static_cast<int>(vals.size());
  auto z = circle_nodes(rho, m);
  auto pos = dft_nonnegative(z, vals, 2);
  double ref = 0.0;
  for (auto v : vals) ref = std::max(ref, std::abs(v));
  double bad = std::max(std::abs(pos[0]), std::abs(pos[1]) * rho);
  if (bad > h_tol * std::max(ref, 1e-300) && bad > 1e-13)
    throw std::domain_error("not in H^(1): non-negative power content");
  return encode_values(fr, z, vals, weight, rho);
}

// (1/2 i pi) \oint F(x) dx over the image of |z| = rho, trapezoid in theta
inline cplx contour_integral(const JoukowskiFrame& fr, const std::function<cplx(cplx)>& F, double rho, int m) {
  auto z = circle_nodes(rho, m);
  cplx s = 0.0;
  for (int k = 0; k < m; ++k) {
    cplx v = F(fr.x_of(z[k])) * fr.sigma(z[k]);
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw std::runtime_error("contour_integral: non-finite integrand");
    s += v;
  }
  return s / static_cast<double>(m);
}

inline double sup_norm(const std::function<cplx(cplx)>& fz, double rho, int m) {
  double r = 0.0;
  for (auto z : circle_nodes(rho, m)) r = std::max(r, std::abs(fz(z)));
  return r;
}

inline double sup_norm(const SeriesFn& f, double rho, int m = 256) {
  return sup_norm([&](cplx z) { return f.eval_z(z); }, rho, m);
}

struct ContourFamily {
  double rho0 = 1.25;
  double ratio = 1.15;
  int nodes = 256;
  double rho_E = 4.0;

  double radius(int l) const {
    double r = rho0 * std::pow(ratio, l);
    if (!(r > 1.0) || r >= rho_E) throw std::invalid_argument("contour index outside the family");
    return r;
  }
};

// zeta_l = len(Gamma_l) / (2 pi d(Gamma_l, Gamma_{l+1})^2)
inline double zeta_diagnostic(const JoukowskiFrame& fr, const ContourFamily& cf, int l) {
  const int m = 1024;
  auto z0 = circle_nodes(cf.radius(l), m), z1 = circle_nodes(cf.radius(l + 1), 4 * m);
  double len = 0.0, d = 1e300;
  for (int k = 0; k < m; ++k) len += std::abs(fr.x_of(z0[(k + 1) % m]) - fr.x_of(z0[k]));
  for (auto a : z0) {
    cplx xa = fr.x_of(a);
    for (auto b : z1) d = std::min(d, std::abs(xa - fr.x_of(b)));
  }
  return len / (2.0 * kPi * d * d);
}

}  // namespace betacut
