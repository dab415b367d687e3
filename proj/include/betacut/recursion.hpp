#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "analytic_kernel.hpp"
#include "equilibrium.hpp"
#include "operators.hpp"
#include "parallel.hpp"
#include "potential.hpp"

namespace betacut {

using CMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NdArray {
  std::vector<int> dims;
  std::vector<cplx> data;

  std::size_t numel() const {
    std::size_t s = 1;
    for (int d : dims) s *= static_cast<std::size_t>(d);
    return s;
  }
};

// contract one axis against B (rows = new extent, cols = old extent)
inline NdArray contract_axis(const NdArray& a, int axis, const CMat& B) {
  const int d = a.dims[axis];
  if (B.cols() != d) throw std::invalid_argument("contract_axis: extent mismatch");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dims[i];
  for (std::size_t i = axis + 1; i < a.dims.size(); ++i) inner *= a.dims[i];
  const int P = static_cast<int>(B.rows());
  NdArray r;
  r.dims = a.dims;
  r.dims[axis] = P;
  r.data.assign(outer * P * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    Eigen::Map<const CMat> in(a.data.data() + o * d * inner, d, inner);
    Eigen::Map<CMat> out(r.data.data() + o * P * inner, P, inner);
    out.noalias() = B * in;
  }
  return r;
}

// rows: points; columns: z^{-(j+1)} (1 - z^{-2})^{-w}, or the x-derivative of it
inline CMat basis_matrix(const JoukowskiFrame& fr, const std::vector<cplx>& z, int M, int w, bool deriv = false) {
  CMat B(z.size(), M);
  for (std::size_t p = 0; p < z.size(); ++p) {
    cplx u = 1.0 / z[p], om = 1.0 - u * u;
    cplx iw = std::pow(om, -w);
    cplx du = -u * u / (fr.gamma * om);
    cplx up = u;
    for (int j = 0; j < M; ++j) {
      if (!deriv)
        B(p, j) = up * iw;
      else
        B(p, j) = du * (static_cast<double>(j + 1) * (up / u) * iw + 2.0 * w * up * u * iw / om);
      up *= u;
    }
  }
  return B;
}

// rows: coefficients j = 1..M; samples at nodes z of f = sum c_j z^{-j} (1-z^{-2})^{-w}
inline CMat dft_matrix(const std::vector<cplx>& z, int M, int w) {
  const int m = static_cast<int>(z.size());
  CMat D(M, m);
  for (int k = 0; k < m; ++k) {
    cplx fac = std::pow(1.0 - 1.0 / (z[k] * z[k]), w) / static_cast<double>(m);
    cplx zp = z[k];
    for (int j = 0; j < M; ++j) {
      D(j, k) = zp * fac;
      zp *= z[k];
    }
  }
  return D;
}

// (1 - z^{-2})^q applied to the numerator: weight w -> w + q, length M -> Mnew
inline CMat reweight_matrix(int q, int Mold, int Mnew) {
  CMat R = CMat::Zero(Mnew, Mold);
  double b = 1.0;
  for (int r = 0; r <= q; ++r) {
    for (int i = 0; i < Mold; ++i)
      if (i + 2 * r < Mnew) R(i + 2 * r, i) = (r % 2 ? -b : b);
    b = b * (q - r) / (r + 1);
  }
  return R;
}

inline NdArray permute_axes(const NdArray& a, const std::vector<int>& perm) {
  const int n = static_cast<int>(a.dims.size());
  NdArray r;
  r.dims.resize(n);
  for (int i = 0; i < n; ++i) r.dims[i] = a.dims[perm[i]];
  r.data.resize(a.data.size());
  std::vector<std::size_t> sa(n), sr(n);
  std::size_t s = 1;
  for (int i = n - 1; i >= 0; --i) sa[i] = s, s *= a.dims[i];
  s = 1;
  for (int i = n - 1; i >= 0; --i) sr[i] = s, s *= r.dims[i];
  std::vector<int> dig(n, 0);
  for (std::size_t idx = 0; idx < r.data.size(); ++idx) {
    std::size_t src = 0;
    for (int i = 0; i < n; ++i) src += dig[i] * sa[perm[i]];
    r.data[idx] = a.data[src];
    for (int i = n - 1; i >= 0; --i) {
      if (++dig[i] < r.dims[i]) break;
      dig[i] = 0;
    }
  }
  return r;
}

struct CorrelatorTerm {
  int n = 1;
  int k = -1;
  JoukowskiFrame frame;
  int weight = 0;
  NdArray coeffs;  // dims [M]*n, index j <-> z^{-(j+1)}
  double asymmetry = 0.0;
  double imk_residual = 0.0;

  int M() const { return coeffs.dims.empty() ? 0 : coeffs.dims[0]; }

  // axes 1..n-1 fixed at zs; a function of the first variable
  SeriesFn section(const std::vector<cplx>& zs) const {
    if (static_cast<int>(zs.size()) != n - 1) throw std::invalid_argument("section: wrong spectator count");
    NdArray a = coeffs;
    for (int ax = n - 1; ax >= 1; --ax) a = contract_axis(a, ax, basis_matrix(frame, {zs[ax - 1]}, M(), weight));
    SeriesFn f;
    f.frame = frame;
    f.weight = weight;
    f.coeffs = a.data;
    return f;
  }
  cplx eval_z(const std::vector<cplx>& z) const {
    std::vector<cplx> zs(z.begin() + 1, z.end());
    return section(zs).eval_z(z[0]);
  }
  cplx operator()(const std::vector<cplx>& x) const {
    std::vector<cplx> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = inverse_map(frame, x[i]);
    return eval_z(z);
  }
  double max_abs() const {
    double m = 0.0;
    for (auto c : coeffs.data) m = std::max(m, std::abs(c));
    return m;
  }
};

inline CorrelatorTerm term_from_series(const SeriesFn& f, int k) {
  CorrelatorTerm t;
  t.n = 1;
  t.k = k;
  t.frame = f.frame;
  t.weight = f.weight;
  t.coeffs.dims = {std::max(f.size(), 1)};
  t.coeffs.data = f.coeffs;
  if (t.coeffs.data.empty()) t.coeffs.data.assign(1, 0.0);
  return t;
}

inline SeriesFn series_of(const CorrelatorTerm& t) {
  if (t.n != 1) throw std::invalid_argument("series_of: not a one-variable term");
  SeriesFn f;
  f.frame = t.frame;
  f.weight = t.weight;
  f.coeffs = t.coeffs.data;
  return f;
}

// same function, weight raised to w and length M
inline CorrelatorTerm reweighted(const CorrelatorTerm& t, int w, int M) {
  if (w < t.weight) throw std::invalid_argument("reweighted: weight can only grow");
  CMat R = reweight_matrix(w - t.weight, t.M(), M);
  CorrelatorTerm r = t;
  for (int ax = 0; ax < t.n; ++ax) r.coeffs = contract_axis(r.coeffs, ax, R);
  r.weight = w;
  return r;
}

inline bool structurally_zero(int n, int k) { return n < 1 || k < -1 || n > k + 2; }

struct RecursionOptions {
  double rho_t = 1.5;  // sampling circle of the live and spectator variables
  int M1 = 64;         // coefficients per axis, n = 1
  int M2 = 48;         // n = 2
  int M3 = 40;         // n = 3
  int Mhigh = 32;      // n >= 4
  int m_outer = 128;
  int max_weight = 12;
  double tail_tol = 1e-11;
  double kinv_tol = 1e-7;
  double zero_tol = 1e-9;   // |E| below this fraction of its terms is treated as exact zero
  int imk_samples = 3;
  bool residuals = true;
  OperatorOptions op;
};

struct Expansion {
  EquilibriumData eq;
  EdgeData edge;
  PotentialSpec spec;
  double beta = 2.0;
  int maxK = -1;
  int maxN = 1;
  RecursionOptions opt;
  std::map<std::pair<int, int>, CorrelatorTerm> terms;
  std::map<std::pair<int, int>, double> residuals;

  bool has(int n, int k) const { return terms.count({n, k}) > 0; }

  // nullptr for structural zeros
  const CorrelatorTerm* get(int n, int k) const {
    if (structurally_zero(n, k)) return nullptr;
    auto it = terms.find({n, k});
    if (it == terms.end())
      throw std::runtime_error("missing prerequisite (" + std::to_string(n) + "," + std::to_string(k) + ")");
    return &it->second;
  }
  const CorrelatorTerm* find(int n, int k) const {
    if (structurally_zero(n, k)) return nullptr;
    auto it = terms.find({n, k});
    return it == terms.end() ? nullptr : &it->second;
  }

  Poly vprime(int k) const { return k == 0 ? poly_derivative(eq.v0) : derivative_or_zero(spec, k); }
};

inline Expansion make_expansion(const EquilibriumData& eq, const EdgeData& ed, const PotentialSpec& spec,
                                double beta, const RecursionOptions& opt = {}) {
  if (!(beta > 0)) throw std::invalid_argument("beta must be positive");
  Expansion ex;
  ex.eq = eq;
  ex.edge = ed;
  ex.spec = spec;
  ex.beta = beta;
  ex.opt = opt;
  ex.terms[{1, -1}] = term_from_series(eq.w1m1, -1);
  return ex;
}

namespace detail {

inline std::string sci(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3e", v);
  return b;
}

// tensor evaluated on product grids; each dim is the live index (role 0) or a spectator axis (role i >= 1)
struct Grid {
  NdArray a;
  std::vector<int> role;
  std::vector<std::size_t> stride;
  std::size_t live_stride = 0;

  void finalize() {
    std::size_t n = a.dims.size(), s = 1;
    stride.assign(n, 0);
    for (std::size_t d = n; d-- > 0;) stride[d] = s, s *= a.dims[d];
    live_stride = 0;
    for (std::size_t d = 0; d < n; ++d)
      if (role[d] == 0) live_stride = stride[d];
  }
  std::size_t offset(const int* dig) const {
    std::size_t o = 0;
    for (std::size_t d = 0; d < role.size(); ++d)
      if (role[d] > 0) o += dig[role[d]] * stride[d];
    return o;
  }
};

}  // namespace detail

// E_{n0}^{k0} on (live nodes) x (spectator grids); spectator axis i = 1..n0-1 has its own node list
class EAssembler {
 public:
  EAssembler(const Expansion& ex, int n0, int k0, std::vector<cplx> live, std::vector<std::vector<cplx>> spec)
      : ex_(ex), n0_(n0), k0_(k0), zl_(std::move(live)), zs_(std::move(spec)) {
    if (static_cast<int>(zs_.size()) != n0 - 1) throw std::invalid_argument("assemble_E: spectator count");
    const auto& fr = ex.eq.frame;
    const auto& ed = ex.edge;
    nl_ = zl_.size();
    ntup_ = 1;
    for (auto& s : zs_) ntup_ *= s.size();
    xl_.resize(nl_);
    Ll_.resize(nl_);
    for (std::size_t p = 0; p < nl_; ++p) {
      xl_[p] = fr.x_of(zl_[p]);
      Ll_[p] = poly_eval(ed.L, xl_[p]);
    }
    xs_.resize(n0);
    for (int i = 1; i < n0; ++i)
      for (auto z : zs_[i - 1]) xs_[i].push_back(fr.x_of(z));
    const double b = ex.beta;
    std::vector<int> all;
    for (int i = 1; i < n0; ++i) all.push_back(i);

    // W_{n0+1}^{k0}(x, x, x_I)
    if (auto* T = ex.get(n0 + 1, k0)) {
      diag_ = diag_grid(*T);
      has_diag_ = true;
    }
    // N_{V^k'} terms
    int kmax = k0 + 1 + (n0 == 1 ? 1 : 0);
    for (int k = 1; k <= kmax; ++k) {
      Poly g = ex.vprime(k);
      if (poly_degree(g) < 0) continue;
      auto* T = ex.get(n0, k0 + 1 - k);
      if (!T) continue;
      NTerm nt;
      nt.g = g;
      nt.w = grid(*T, false, -1, all);
      nt.poly = polar_grid(*T, g);
      nt.gl.resize(nl_);
      for (std::size_t p = 0; p < nl_; ++p) nt.gl[p] = poly_eval(g, xl_[p]);
      nterms_.push_back(std::move(nt));
    }
    // products over J subsets of I
    const int ns = n0 - 1;
    for (int mask = 0; mask < (1 << ns); ++mask) {
      std::vector<int> J, Jc;
      for (int i = 0; i < ns; ++i) ((mask >> i) & 1 ? J : Jc).push_back(i + 1);
      for (int k = 0; k <= k0; ++k) {
        auto* A = ex.get(static_cast<int>(J.size()) + 1, k);
        auto* B = ex.get(n0 - static_cast<int>(J.size()), k0 - k);
        if (!A || !B) continue;
        prods_.push_back({grid(*A, false, -1, J), grid(*B, false, -1, Jc)});
      }
    }
    // (1 - 2/beta) d/dx W_{n0}^{k0}
    if (std::abs(1.0 - 2.0 / b) > 0)
      if (auto* T = ex.get(n0, k0)) {
        dx_ = grid(*T, true, -1, all);
        has_dx_ = true;
      }
    // spectator terms
    if (n0 >= 2)
      if (auto* T = ex.get(n0 - 1, k0)) {
        has_spec_ = true;
        for (int i = 1; i < n0; ++i) {
          std::vector<int> rest;
          for (int j = 1; j < n0; ++j)
            if (j != i) rest.push_back(j);
          spec_live_.push_back(grid(*T, false, -1, rest));
          spec_d_.push_back(spec_grid(*T, i));
        }
        spec_v_ = spec_grid(*T, -1);
      }
    if (n0 == 1 && k0 == -1 && std::abs(1.0 - 2.0 / b) > 0) {
      const auto& e = ex.eq.edges;
      if (e.plus == Nature::Hard) hard_.push_back({e.a_plus, 1.0 / (e.a_plus - e.a_minus)});
      if (e.minus == Nature::Hard) hard_.push_back({e.a_minus, 1.0 / (e.a_minus - e.a_plus)});
    }
  }

  std::size_t tuples() const { return ntup_; }
  std::size_t live_count() const { return nl_; }

  // scale (optional): max over live points of the summed magnitudes of the individual terms
  void eval(std::size_t t, cplx* out, double* scale = nullptr) const {
    std::vector<int> dig(n0_, 0);
    std::size_t r = t;
    for (int i = n0_ - 1; i >= 1; --i) {
      int m = static_cast<int>(zs_[i - 1].size());
      dig[i] = static_cast<int>(r % m);
      r /= m;
    }
    const double b = ex_.beta;
    std::vector<double> mag(scale ? nl_ : 0, 0.0);
    auto put = [&](std::size_t p, cplx v) {
      out[p] += v;
      if (scale) mag[p] += std::abs(v);
    };
    for (std::size_t p = 0; p < nl_; ++p) out[p] = 0.0;
    if (has_diag_) add_grid(diag_, dig, 1.0, put);
    for (auto& nt : nterms_) {
      std::size_t ow = nt.w.offset(dig.data()), op = nt.poly.offset(dig.data());
      int Q = nt.poly.a.dims[0];
      for (std::size_t p = 0; p < nl_; ++p) {
        cplx pol = 0.0;
        for (int q = Q - 1; q >= 0; --q) pol = pol * xl_[p] + nt.poly.a.data[op + q * nt.poly.live_stride];
        put(p, -(nt.gl[p] * nt.w.a.data[ow + p * nt.w.live_stride] - pol / Ll_[p]));
      }
    }
    for (auto& pr : prods_) {
      std::size_t oa = pr.first.offset(dig.data()), ob = pr.second.offset(dig.data());
      for (std::size_t p = 0; p < nl_; ++p)
        put(p, pr.first.a.data[oa + p * pr.first.live_stride] * pr.second.a.data[ob + p * pr.second.live_stride]);
    }
    if (has_dx_) add_grid(dx_, dig, 1.0 - 2.0 / b, put);
    if (has_spec_) {
      const auto& ed = ex_.edge;
      Poly dL = poly_derivative(ed.L);
      cplx S = spec_v_.a.data[spec_v_.offset(dig.data())];
      for (int i = 1; i < n0_; ++i) {
        cplx xi = xs_[i][dig[i]];
        cplx Li = poly_eval(ed.L, xi), dLi = poly_eval(dL, xi);
        const auto& G = spec_live_[i - 1];
        std::size_t og = G.offset(dig.data());
        cplx dS = spec_d_[i - 1].a.data[spec_d_[i - 1].offset(dig.data())];
        for (std::size_t p = 0; p < nl_; ++p) {
          cplx r1 = 1.0 / (xl_[p] - xi), r2 = r1 * r1;
          cplx v = G.a.data[og + p * G.live_stride] * r2 -
                   (dLi * (r1 + ed.c) * S + Li * S * r2 + Li * (r1 + ed.c) * dS) / Ll_[p];
          put(p, (2.0 / b) * v);
        }
      }
    }
    for (auto& h : hard_)
      for (std::size_t p = 0; p < nl_; ++p) put(p, (1.0 - 2.0 / b) * h.second / (xl_[p] - h.first));
    if (scale) *scale = *std::max_element(mag.begin(), mag.end());
  }

 private:
  struct NTerm {
    Poly g;
    detail::Grid w, poly;
    std::vector<cplx> gl;
  };

  const Expansion& ex_;
  int n0_, k0_;
  std::vector<cplx> zl_;
  std::vector<std::vector<cplx>> zs_;
  std::size_t nl_ = 0, ntup_ = 1;
  std::vector<cplx> xl_, Ll_;
  std::vector<std::vector<cplx>> xs_;
  detail::Grid diag_, dx_, spec_v_;
  bool has_diag_ = false, has_dx_ = false, has_spec_ = false;
  std::vector<NTerm> nterms_;
  std::vector<std::pair<detail::Grid, detail::Grid>> prods_;
  std::vector<detail::Grid> spec_live_, spec_d_;
  std::vector<std::pair<double, double>> hard_;

  template <class Put>
  void add_grid(const detail::Grid& g, const std::vector<int>& dig, double s, Put& put) const {
    std::size_t o = g.offset(dig.data());
    for (std::size_t p = 0; p < nl_; ++p) put(p, s * g.a.data[o + p * g.live_stride]);
  }

  CMat B(const CorrelatorTerm& T, const std::vector<cplx>& z, bool d) const {
    return basis_matrix(ex_.eq.frame, z, T.M(), T.weight, d);
  }

  // tensor axis 0 live (value or derivative), axes 1.. on the spectator axes listed
  detail::Grid grid(const CorrelatorTerm& T, bool dlive, int, const std::vector<int>& axes) const {
    if (static_cast<int>(axes.size()) != T.n - 1) throw std::logic_error("grid: axis count");
    detail::Grid g;
    g.a = T.coeffs;
    for (int ax = T.n - 1; ax >= 1; --ax) g.a = contract_axis(g.a, ax, B(T, zs_[axes[ax - 1] - 1], false));
    g.a = contract_axis(g.a, 0, B(T, zl_, dlive));
    g.role.push_back(0);
    for (int i : axes) g.role.push_back(i);
    g.finalize();
    return g;
  }

  // all tensor axes on spectator axes 1..n0-1 in order; derivative on spectator axis di (or none)
  detail::Grid spec_grid(const CorrelatorTerm& T, int di) const {
    detail::Grid g;
    g.a = T.coeffs;
    for (int ax = T.n - 1; ax >= 0; --ax) g.a = contract_axis(g.a, ax, B(T, zs_[ax], di == ax + 1));
    for (int ax = 0; ax < T.n; ++ax) g.role.push_back(ax + 1);
    g.finalize();
    return g;
  }

  detail::Grid diag_grid(const CorrelatorTerm& T) const {
    NdArray a = T.coeffs;
    for (int ax = T.n - 1; ax >= 2; --ax) a = contract_axis(a, ax, B(T, zs_[ax - 2], false));
    CMat Bl = B(T, zl_, false);
    a = contract_axis(a, 0, Bl);
    const int M = T.M();
    std::size_t rest = 1;
    for (std::size_t d = 2; d < a.dims.size(); ++d) rest *= a.dims[d];
    detail::Grid g;
    g.a.dims = {static_cast<int>(nl_)};
    for (std::size_t d = 2; d < a.dims.size(); ++d) g.a.dims.push_back(a.dims[d]);
    g.a.data.assign(nl_ * rest, 0.0);
    for (std::size_t p = 0; p < nl_; ++p)
      for (int j = 0; j < M; ++j) {
        cplx bj = Bl(p, j);
        const cplx* src = a.data.data() + (p * M + j) * rest;
        cplx* dst = g.a.data.data() + p * rest;
        for (std::size_t r = 0; r < rest; ++r) dst[r] += src[r] * bj;
      }
    g.role.push_back(0);
    for (int i = 1; i < n0_; ++i) g.role.push_back(i);
    g.finalize();
    return g;
  }

  // coefficients of [L g W]_+ - c (L g W)_{-1} in x, per spectator tuple
  detail::Grid polar_grid(const CorrelatorTerm& T, const Poly& g) const {
    const auto& o = ex_.opt.op;
    XContour C(ex_.eq.frame, o.rho_E, o.nodes_E);
    int d = n_degree(ex_.edge, g);
    CMat Pi = CMat::Zero(d + 1, C.size());
    for (int k = 0; k < C.size(); ++k) {
      cplx a = poly_eval(ex_.edge.L, C.x[k]) * poly_eval(g, C.x[k]) * C.w[k];
      cplx xi = 1.0 / C.x[k], pw = xi;
      for (int q = 0; q <= d; ++q) {
        Pi(q, k) = a * pw;
        pw *= xi;
      }
      Pi(0, k) -= ex_.edge.c * a;
    }
    CMat PE = Pi * B(T, C.z, false);
    detail::Grid gr;
    gr.a = T.coeffs;
    for (int ax = T.n - 1; ax >= 1; --ax) gr.a = contract_axis(gr.a, ax, B(T, zs_[ax - 1], false));
    gr.a = contract_axis(gr.a, 0, PE);
    gr.role.push_back(0);
    for (int i = 1; i < T.n; ++i) gr.role.push_back(i);
    gr.finalize();
    return gr;
  }
};

// E_{n0}^{k0}(x, x_I) at the live points, spectators fixed
inline std::vector<cplx> assemble_E(const Expansion& ex, int n0, int k0, const std::vector<cplx>& zlive,
                                    const std::vector<cplx>& zspec) {
  std::vector<std::vector<cplx>> spec;
  for (auto z : zspec) spec.push_back({z});
  EAssembler A(ex, n0, k0, zlive, spec);
  std::vector<cplx> out(zlive.size());
  A.eval(0, out.data());
  return out;
}

namespace detail {

// asymmetry measured on coefficients scaled to the circle |z| = rho
inline double symmetrize(NdArray& a, double rho) {
  const int n = static_cast<int>(a.dims.size());
  if (n < 2) return 0.0;
  std::vector<double> sc(a.data.size());
  {
    std::vector<int> dig(n, 0);
    for (std::size_t idx = 0; idx < a.data.size(); ++idx) {
      int s = 0;
      for (int d : dig) s += d + 1;
      sc[idx] = std::pow(rho, -s);
      for (int i = n - 1; i >= 0; --i) {
        if (++dig[i] < a.dims[i]) break;
        dig[i] = 0;
      }
    }
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  NdArray acc = a;
  for (auto& v : acc.data) v = 0.0;
  double ref = 0.0, asym = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) ref = std::max(ref, std::abs(a.data[i]) * sc[i]);
  int count = 0;
  do {
    NdArray p = permute_axes(a, perm);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      asym = std::max(asym, std::abs(p.data[i] - a.data[i]) * sc[i]);
      acc.data[i] += p.data[i];
    }
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (auto& v : acc.data) v /= static_cast<double>(count);
  a = std::move(acc);
  return ref == 0.0 ? 0.0 : asym / ref;
}

}  // namespace detail

// W_{n0}^{k0+1} = -K^{-1} E_{n0}^{k0}
inline CorrelatorTerm next_order(const Expansion& ex, int n0, int k0) {
  if (structurally_zero(n0, k0 + 1)) {
    CorrelatorTerm z;
    z.n = n0;
    z.k = k0 + 1;
    z.frame = ex.eq.frame;
    z.coeffs.dims.assign(n0, 1);
    z.coeffs.data.assign(1, 0.0);
    return z;
  }
  const auto& o = ex.opt;
  const int M = n0 == 1 ? o.M1 : n0 == 2 ? o.M2 : n0 == 3 ? o.M3 : o.Mhigh;
  const int mt = 2 * M;
  OperatorOptions op = o.op;
  op.m_outer = o.m_outer;
  KinvPlan plan(ex.eq, o.rho_t, op);
  auto zt = circle_nodes(o.rho_t, mt);
  auto zs = circle_nodes(o.rho_t, mt, 0.5);
  std::vector<cplx> live = plan.zo;
  live.insert(live.end(), zt.begin(), zt.end());
  EAssembler A(ex, n0, k0, live, std::vector<std::vector<cplx>>(n0 - 1, zs));
  const std::size_t T = A.tuples();
  const std::size_t mo = plan.zo.size();
  std::vector<cplx> F(T * mt);
  std::vector<double> emax(T, 0.0), smax(T, 0.0);
  const KinvMap kmap(plan, zt);
  parallel_for(T, [&](std::size_t t) {
    std::vector<cplx> buf(live.size());
    A.eval(t, buf.data(), &smax[t]);
    for (auto v : buf) emax[t] = std::max(emax[t], std::abs(v));
    Eigen::Map<const Eigen::Matrix<cplx, 1, Eigen::Dynamic>> go(buf.data(), mo);
    Eigen::Map<Eigen::Matrix<cplx, 1, Eigen::Dynamic>> f(F.data() + t * mt, mt);
    f.noalias() = go * kmap.C;
    for (int q = 0; q < mt; ++q) f(q) += kmap.d[q] * buf[mo + q];
  });

  // sample tuples: weight choice and Im K check
  std::vector<std::size_t> samp;
  int ns = std::max(1, std::min<int>(o.imk_samples, static_cast<int>(T)));
  for (int s = 0; s < ns; ++s) samp.push_back((static_cast<std::size_t>(s) * T) / ns + (T > 1 ? T / (2 * ns) : 0));
  // E cancelling to roundoff against its own terms everywhere: the order vanishes
  const double etop = *std::max_element(emax.begin(), emax.end());
  const double stop = *std::max_element(smax.begin(), smax.end());
  if (etop <= o.zero_tol * stop) std::fill(F.begin(), F.end(), cplx(0.0));
  double fmax = 0.0;
  for (auto v : F) fmax = std::max(fmax, std::abs(v));
  int w = 0;
  if (fmax > 0.0) {
    double best = 1e300;
    for (int p = 0; p <= o.max_weight; ++p) {
      CMat D = dft_matrix(zt, M, p);
      double worst = 0.0;
      for (auto t : samp) {
        Eigen::Map<const Eigen::VectorXcd> v(F.data() + t * mt, mt);
        Eigen::VectorXcd c = D * v;
        worst = std::max(worst, ::betacut::detail::tail_ratio(std::vector<cplx>(c.data(), c.data() + M), o.rho_t));
      }
      if (worst < 0.5 * best) {
        best = worst;
        w = p;
      }
      if (worst <= o.tail_tol) break;
    }
  }

  CorrelatorTerm out;
  out.n = n0;
  out.k = k0 + 1;
  out.frame = ex.eq.frame;
  out.weight = w;
  CMat Dt = dft_matrix(zt, M, w);

  // Im K residual on sample tuples
  double res = 0.0;
  if (fmax > 0.0) {
    std::vector<cplx> buf(live.size());
    for (auto t : samp) {
      double scale = 0.0;
      A.eval(t, buf.data(), &scale);
      Eigen::Map<const Eigen::VectorXcd> v(F.data() + t * mt, mt);
      Eigen::VectorXcd c = Dt * v;
      SeriesFn f;
      f.frame = ex.eq.frame;
      f.weight = w;
      f.coeffs.assign(c.data(), c.data() + M);
      auto kf = k_callable(ex.eq, ex.edge, [&](cplx z) { return f.eval_z(z); }, op);
      // relative to the size of the ingredients of E, so that exact cancellations do not count
      double num = 0.0;
      for (int q = 0; q < mt; ++q) num = std::max(num, std::abs(kf(zt[q]) - buf[mo + q]));
      res = std::max(res, scale > 0 ? num / scale : num);
    }
  }
  out.imk_residual = res;
  if (res > o.kinv_tol)
    throw NumericalFailure("Im K violation at (" + std::to_string(n0) + "," + std::to_string(k0) +
                           "): residual " + detail::sci(res));

  NdArray a;
  a.dims.assign(n0 - 1, mt);
  a.dims.push_back(mt);
  a.data = std::move(F);
  a = contract_axis(a, n0 - 1, Dt);
  if (n0 > 1) {
    CMat Ds = dft_matrix(zs, M, w);
    for (int ax = n0 - 2; ax >= 0; --ax) a = contract_axis(a, ax, Ds);
  }
  for (auto& v : a.data) v = -v;
  out.asymmetry = detail::symmetrize(a, o.rho_t);
  out.coeffs = std::move(a);
  return out;
}

inline double loop_residual(const Expansion& ex, int n, int k, bool allow_missing = false);

inline Expansion expand_all(const EquilibriumData& eq, const EdgeData& ed, const PotentialSpec& spec, double beta,
                            int maxK, const RecursionOptions& opt = {}) {
  Expansion ex = make_expansion(eq, ed, spec, beta, opt);
  ex.maxK = maxK;
  ex.maxN = maxK + 2;
  for (int k0 = -1; k0 < maxK; ++k0)
    for (int n0 = k0 + 3; n0 >= 1; --n0) ex.terms[{n0, k0 + 1}] = next_order(ex, n0, k0);
  if (opt.residuals)
    for (auto& [key, t] : ex.terms) ex.residuals[key] = loop_residual(ex, key.first, key.second);
  return ex;
}

// only the terms feeding W_1 up to order maxK: n + k <= maxK + 1
inline Expansion expand_one_point(const EquilibriumData& eq, const EdgeData& ed, const PotentialSpec& spec,
                                  double beta, int maxK, const RecursionOptions& opt = {}) {
  Expansion ex = make_expansion(eq, ed, spec, beta, opt);
  ex.maxK = maxK;
  ex.maxN = maxK + 2;
  for (int k0 = -1; k0 < maxK; ++k0)
    for (int n0 = std::min(k0 + 3, maxK - k0); n0 >= 1; --n0) ex.terms[{n0, k0 + 1}] = next_order(ex, n0, k0);
  if (opt.residuals)
    for (auto& [key, t] : ex.terms) ex.residuals[key] = loop_residual(ex, key.first, key.second);
  return ex;
}

// W_1^{0} as displayed for the first correction; v1 = V^{1} (empty for none)
inline CorrelatorTerm w1_subleading(const EquilibriumData& eq, const EdgeData& ed, double beta, const Poly& v1 = {},
                                    const RecursionOptions& opt = {}) {
  PotentialSpec s;
  s.orders = {eq.v0};
  if (poly_degree(v1) >= 0) s.orders.push_back(v1);
  Expansion ex = make_expansion(eq, ed, s, beta, opt);
  return next_order(ex, 1, -1);
}

// order N^{-(k-1)} coefficient of the rank-n loop equation with L2 = (x - a-)(x - a+) and c = 0
inline double loop_residual(const Expansion& ex, int n, int k, bool allow_missing) {
  const int m = k - 1;
  const double b = ex.beta;
  const auto& fr = ex.eq.frame;
  const auto& e = ex.eq.edges;
  EdgeData l2{Poly{e.a_minus * e.a_plus, -(e.a_minus + e.a_plus), 1.0}, 0.0};
  Poly dL2 = poly_derivative(l2.L);
  auto get = [&](int nn, int kk) -> const CorrelatorTerm* {
    return allow_missing ? ex.find(nn, kk) : ex.get(nn, kk);
  };
  ContourFamily cf;
  auto zx = circle_nodes(cf.radius(2), 64, 0.25);
  std::mt19937_64 rng(0x5eed + 31 * n + k);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * kPi);
  int ntup = n == 1 ? 1 : 3;
  double worst = 0.0;
  for (int t = 0; t < ntup; ++t) {
    std::vector<cplx> zs(n - 1);
    for (auto& z : zs) z = std::polar(cf.radius(3), ang(rng));
    std::vector<cplx> xs(n - 1);
    for (int i = 0; i < n - 1; ++i) xs[i] = fr.x_of(zs[i]);
    auto sub = [&](const std::vector<int>& idx) {
      std::vector<cplx> r;
      for (int i : idx) r.push_back(zs[i]);
      return r;
    };
    std::vector<std::function<cplx(cplx)>> parts;  // each a function of z

    if (auto* T = get(n + 1, m)) {
      std::vector<cplx> rest(zs);
      NdArray a = T->coeffs;
      for (int ax = T->n - 1; ax >= 2; --ax)
        a = contract_axis(a, ax, basis_matrix(fr, {rest[ax - 2]}, T->M(), T->weight));
      int M = T->M(), w = T->weight;
      auto C = std::make_shared<NdArray>(std::move(a));
      parts.push_back([C, M, w, fr](cplx z) {
        CMat bz = basis_matrix(fr, {z}, M, w);
        cplx s = 0.0;
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < M; ++j) s += bz(0, i) * C->data[i * M + j] * bz(0, j);
        return s;
      });
    }
    const int ns = n - 1;
    for (int mask = 0; mask < (1 << ns); ++mask) {
      std::vector<int> J, Jc;
      for (int i = 0; i < ns; ++i) ((mask >> i) & 1 ? J : Jc).push_back(i);
      for (int a = -1; a <= m + 1; ++a) {
        auto* A = get(static_cast<int>(J.size()) + 1, a);
        auto* B = get(n - static_cast<int>(J.size()), m - a);
        if (!A || !B) continue;
        auto fa = A->section(sub(J)), fb = B->section(sub(Jc));
        parts.push_back([fa, fb](cplx z) { return fa.eval_z(z) * fb.eval_z(z); });
      }
    }
    if (auto* T = get(n, m)) {
      auto f = T->section(zs);
      double s = 1.0 - 2.0 / b;
      parts.push_back([f, s](cplx z) { return s * f.deriv_z(z); });
    }
    if (n == 1) {
      double s = (m == -1 ? 1.0 - 2.0 / b : 0.0) - (m == -2 ? 1.0 : 0.0);
      if (s != 0.0) parts.push_back([s, l2, fr](cplx z) { return s / poly_eval(l2.L, fr.x_of(z)); });
    }
    for (int kk = 0; kk <= m + 2; ++kk) {
      int j = m + 1 - kk;
      Poly g = ex.vprime(kk);
      if (poly_degree(g) < 0) continue;
      auto* T = get(n, j);
      if (!T) continue;
      auto f = T->section(zs);
      auto pp = n_polar(fr, l2, g, [&](cplx z) { return f.eval_z(z); }, ex.opt.op);
      parts.push_back([f, pp, g, l2, fr](cplx z) { return -n_value(l2, g, f.eval_z(z), fr.x_of(z), pp); });
    }
    if (n >= 2)
      if (auto* T = get(n - 1, m))
        for (int i = 0; i < n - 1; ++i) {
          std::vector<int> rest;
          for (int j = 0; j < n - 1; ++j)
            if (j != i) rest.push_back(j);
          auto f = T->section(sub(rest));
          cplx xi = xs[i], S = f.eval_z(zs[i]), dS = f.deriv_z(zs[i]);
          cplx Li = poly_eval(l2.L, xi), dLi = poly_eval(dL2, xi);
          parts.push_back([=](cplx z) {
            cplx x = fr.x_of(z), r1 = 1.0 / (x - xi), Lx = poly_eval(l2.L, x);
            return (2.0 / b) * (f.eval_z(z) * r1 * r1 - (dLi * S + Li * dS) * r1 / Lx - Li * S * r1 * r1 / Lx);
          });
        }
    for (auto z : zx) {
      cplx r = 0.0;
      for (auto& f : parts) r += f(z);
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

// ---- beta structure -------------------------------------------------------

struct BetaDecomposition {
  int n = 1, k = 0;
  std::map<std::pair<int, int>, CorrelatorTerm> coefficients;  // (g, l) -> term

  static int unknowns(int n, int k) { return (k - n + 2) / 2 + 1; }

  CorrelatorTerm reassemble(double beta) const {
    CorrelatorTerm out;
    bool first = true;
    for (auto& [gl, t] : coefficients) {
      int g = gl.first, l = gl.second;
      double f = std::pow(beta / 2.0, 1 - g - n) * std::pow(1.0 - 2.0 / beta, l);
      if (first) {
        out = t;
        for (auto& v : out.coeffs.data) v *= f;
        first = false;
      } else {
        for (std::size_t i = 0; i < out.coeffs.data.size(); ++i) out.coeffs.data[i] += f * t.coeffs.data[i];
      }
    }
    out.k = k;
    return out;
  }
};

// solve for the beta-independent pieces from expansions at several beta (same V, N-independent)
inline BetaDecomposition beta_decompose(const std::vector<const Expansion*>& exps, int n, int k) {
  BetaDecomposition d;
  d.n = n;
  d.k = k;
  if (structurally_zero(n, k)) return d;
  const int G = BetaDecomposition::unknowns(n, k);
  if (static_cast<int>(exps.size()) < G)
    throw std::invalid_argument("beta_decompose: need " + std::to_string(G) + " beta samples");
  for (auto* e : exps)
    if (!e->spec.n_independent()) throw std::invalid_argument("beta_decompose: V must be N-independent");
  std::vector<CorrelatorTerm> ts;
  int w = 0, M = 0;
  for (auto* e : exps) {
    const auto* t = e->get(n, k);
    ts.push_back(*t);
    w = std::max(w, t->weight);
  }
  for (auto& t : ts) M = std::max(M, t.M() + 2 * (w - t.weight));
  for (auto& t : ts) t = reweighted(t, w, M);
  const int S = static_cast<int>(exps.size());
  Eigen::MatrixXd A(S, G);
  for (int s = 0; s < S; ++s) {
    double bb = exps[s]->beta;
    for (int g = 0; g < G; ++g) {
      int l = k + 2 - 2 * g - n;
      A(s, g) = std::pow(bb / 2.0, 1 - g - n) * std::pow(1.0 - 2.0 / bb, l);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < G) throw std::runtime_error("beta_decompose: singular system (beta samples ill-chosen)");
  const std::size_t len = ts[0].coeffs.data.size();
  Eigen::MatrixXcd rhs(S, len);
  for (int s = 0; s < S; ++s)
    for (std::size_t i = 0; i < len; ++i) rhs(s, i) = ts[s].coeffs.data[i];
  Eigen::MatrixXcd sol = qr.solve(Eigen::MatrixXd::Identity(S, S)).cast<cplx>() * rhs;
  for (int g = 0; g < G; ++g) {
    CorrelatorTerm t = ts[0];
    for (std::size_t i = 0; i < len; ++i) t.coeffs.data[i] = sol(g, i);
    d.coefficients[{g, k + 2 - 2 * g - n}] = std::move(t);
  }
  return d;
}

}  // namespace betacut
