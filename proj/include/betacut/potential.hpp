#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace betacut {

using cplx = std::complex<double>;

// ascending coefficients, c[0] + c[1] x + ...
using Poly = std::vector<double>;

inline cplx poly_eval(const Poly& p, cplx x) {
  cplx r = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) r = r * x + *it;
  return r;
}

inline double poly_eval(const Poly& p, double x) {
  double r = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) r = r * x + *it;
  return r;
}

inline Poly poly_trim(Poly p) {
  while (!p.empty() && p.back() == 0.0) p.pop_back();
  return p;
}

inline int poly_degree(const Poly& p) {
  Poly q = poly_trim(p);
  return static_cast<int>(q.size()) - 1;  // -1 for the zero polynomial
}

inline Poly poly_derivative(const Poly& p) {
  if (p.size() <= 1) return {};
  Poly d(p.size() - 1);
  for (std::size_t i = 1; i < p.size(); ++i) d[i - 1] = static_cast<double>(i) * p[i];
  return d;
}

inline Poly poly_antiderivative(const Poly& p) {
  Poly a(p.size() + 1, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) a[i + 1] = p[i] / static_cast<double>(i + 1);
  return a;
}

inline Poly poly_add(const Poly& a, const Poly& b, double sa = 1.0, double sb = 1.0) {
  Poly r(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) r[i] += sa * a[i];
  for (std::size_t i = 0; i < b.size(); ++i) r[i] += sb * b[i];
  return r;
}

inline Poly poly_mul(const Poly& a, const Poly& b) {
  if (a.empty() || b.empty()) return {};
  Poly r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

inline Poly poly_scale(const Poly& a, double s) {
  Poly r(a);
  for (auto& v : r) v *= s;
  return r;
}

enum class Nature { Soft, Hard };

inline const char* nature_name(Nature n) { return n == Nature::Soft ? "soft" : "hard"; }

struct PotentialSpec {
  std::vector<Poly> orders;  // orders[k] = V^{k}
  double b_minus = -std::numeric_limits<double>::infinity();
  double b_plus = std::numeric_limits<double>::infinity();
  std::string label;

  bool has_order(int k) const {
    return k >= 0 && k < static_cast<int>(orders.size());
  }
  bool n_independent() const {
    for (std::size_t k = 1; k < orders.size(); ++k)
      if (poly_degree(orders[k]) >= 0) return false;
    return true;
  }
};

struct EdgeConfig {
  double a_minus = -1.0, a_plus = 1.0;
  Nature minus = Nature::Soft, plus = Nature::Soft;

  void check() const {
    if (!(a_minus < a_plus) || !std::isfinite(a_minus) || !std::isfinite(a_plus))
      throw std::invalid_argument("edge config: need finite a- < a+");
  }
  int hard_count() const {
    return (minus == Nature::Hard ? 1 : 0) + (plus == Nature::Hard ? 1 : 0);
  }
};

inline void check_spec(const PotentialSpec& s) {
  if (s.orders.empty()) throw std::invalid_argument("potential: order 0 missing");
  if (!(s.b_minus < s.b_plus)) throw std::invalid_argument("potential: empty interval");
}

inline const Poly& order_poly(const PotentialSpec& s, int k) {
  if (!s.has_order(k)) throw std::out_of_range("order absent: " + std::to_string(k));
  return s.orders[k];
}

inline cplx eval(const PotentialSpec& s, int k, cplx x) { return poly_eval(order_poly(s, k), x); }

inline Poly derivative(const PotentialSpec& s, int k) { return poly_derivative(order_poly(s, k)); }

// V' of order k, zero polynomial if the order is absent (used by the recursion)
inline Poly derivative_or_zero(const PotentialSpec& s, int k) {
  return s.has_order(k) ? poly_derivative(s.orders[k]) : Poly{};
}

inline Poly resum(const PotentialSpec& s, int N) {
  if (N < 1) throw std::invalid_argument("resum: N must be >= 1");
  Poly r;
  double w = 1.0;
  for (const auto& p : s.orders) {
    r = poly_add(r, p, 1.0, w);
    w /= N;
  }
  return r;
}

inline PotentialSpec gaussian_reference(double am, double ap) {
  if (!(am < ap)) throw std::invalid_argument("gaussian_reference: need alpha- < alpha+");
  double k = 8.0 / ((ap - am) * (ap - am));
  double m = 0.5 * (am + ap);
  PotentialSpec s;
  s.orders = {Poly{k * m * m, -2.0 * k * m, k}};
  s.label = "gaussian";
  return s;
}

inline PotentialSpec interpolate(const PotentialSpec& v0, const PotentialSpec& v1, double s) {
  if (v0.b_minus != v1.b_minus || v0.b_plus != v1.b_plus)
    throw std::invalid_argument("interpolate: mismatched intervals");
  PotentialSpec r;
  r.b_minus = v0.b_minus;
  r.b_plus = v0.b_plus;
  std::size_t K = std::max(v0.orders.size(), v1.orders.size());
  r.orders.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    Poly a = k < v0.orders.size() ? v0.orders[k] : Poly{};
    Poly b = k < v1.orders.size() ? v1.orders[k] : Poly{};
    r.orders[k] = poly_add(a, b, 1.0 - s, s);
  }
  r.label = "interp";
  return r;
}

// polynomial proxy for confinement at infinity
inline bool confining(const PotentialSpec& s) {
  if (std::isfinite(s.b_minus) && std::isfinite(s.b_plus)) return true;
  Poly v = poly_trim(s.orders.at(0));
  int d = static_cast<int>(v.size()) - 1;
  if (std::isinf(s.b_minus) && std::isinf(s.b_plus)) return d >= 2 && d % 2 == 0 && v.back() > 0;
  // half line
  if (d < 1) return false;
  if (std::isinf(s.b_plus)) return v.back() > 0;
  return (d % 2 == 0) ? v.back() > 0 : v.back() < 0;
}

}  // namespace betacut
