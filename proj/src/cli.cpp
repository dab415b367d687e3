#include "betacut/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "betacut/asymptotics.hpp"
#include "betacut/equilibrium.hpp"
#include "betacut/montecarlo.hpp"

namespace betacut::cli {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---- config ---------------------------------------------------------------

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

double as_real(const json& j, const std::string& where, bool allow_inf = false) {
  if (j.is_number()) return j.get<double>();
  if (allow_inf && j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw ConfigError(where + ": expected a number");
}

long as_int(const json& j, const std::string& where) {
  if (j.is_number_integer() || j.is_number_unsigned()) return j.get<long>();
  if (j.is_number_float()) {
    double v = j.get<double>();
    if (v == std::floor(v) && std::abs(v) < 9e15) return static_cast<long>(v);
  }
  throw ConfigError(where + ": expected an integer");
}

bool as_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where + ": expected true or false");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

Nature as_nature(const json& j, const std::string& where) {
  auto s = as_string(j, where);
  if (s == "soft") return Nature::Soft;
  if (s == "hard") return Nature::Hard;
  throw ConfigError(where + ": expected \"soft\" or \"hard\"");
}

std::pair<double, double> as_interval(const json& j, const std::string& where, bool allow_inf) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [a, b]");
  double a = as_real(j[0], where, allow_inf), b = as_real(j[1], where, allow_inf);
  if (!(a < b)) throw ConfigError(where + ": need a < b");
  return {a, b};
}

PotentialSpec parse_potential(const json& j, const std::string& where) {
  check_keys(j, {"orders", "interval", "label"}, where);
  if (!j.contains("orders")) throw ConfigError(where + ": 'orders' missing");
  const json& o = j.at("orders");
  if (!o.is_array() || o.empty()) throw ConfigError(where + ".orders: expected a non-empty array of arrays");
  PotentialSpec s;
  for (std::size_t k = 0; k < o.size(); ++k) {
    const std::string w = where + ".orders[" + std::to_string(k) + "]";
    if (!o[k].is_array()) throw ConfigError(w + ": expected an array of coefficients");
    Poly p;
    for (const auto& c : o[k]) {
      double v = as_real(c, w);
      if (!std::isfinite(v)) throw ConfigError(w + ": non-finite coefficient");
      p.push_back(v);
    }
    s.orders.push_back(p);
  }
  if (j.contains("interval")) std::tie(s.b_minus, s.b_plus) = as_interval(j.at("interval"), where + ".interval", true);
  if (j.contains("label")) s.label = as_string(j.at("label"), where + ".label");
  if (poly_degree(s.orders[0]) < 0 && !(std::isfinite(s.b_minus) && std::isfinite(s.b_plus)))
    throw ConfigError(where + ": V^{0} = 0 needs a finite interval");
  return s;
}

cplx as_point(const json& j, const std::string& where) {
  if (j.is_number()) return cplx(j.get<double>(), 0.0);
  if (j.is_array() && j.size() == 2) return cplx(as_real(j[0], where), as_real(j[1], where));
  throw ConfigError(where + ": expected x or [re, im]");
}

}  // namespace

EdgeConfig RunConfig::edges() const {
  const PotentialSpec& s = potential;
  if (minus == Nature::Hard && !std::isfinite(s.b_minus))
    throw ConfigError("edges.minus: hard edge needs a finite potential.interval end");
  if (plus == Nature::Hard && !std::isfinite(s.b_plus))
    throw ConfigError("edges.plus: hard edge needs a finite potential.interval end");
  if (interval) {
    EdgeConfig e;
    e.minus = minus;
    e.plus = plus;
    e.a_minus = minus == Nature::Hard ? s.b_minus : interval->first;
    e.a_plus = plus == Nature::Hard ? s.b_plus : interval->second;
    if (e.a_minus < s.b_minus || e.a_plus > s.b_plus) throw ConfigError("edges.interval: outside potential.interval");
    e.check();
    return e;
  }
  return select_working_interval(s, minus, plus, margin);
}

RunConfig parse_config(const json& j) {
  check_keys(j, {"potential", "reference_potential", "edges", "beta", "contour", "operators", "recursion", "mc",
                 "output", "verify"},
             "config");
  RunConfig c;
  if (!j.contains("potential")) throw ConfigError("config: 'potential' missing");
  c.potential = parse_potential(j.at("potential"), "potential");
  if (j.contains("reference_potential")) c.reference = parse_potential(j.at("reference_potential"), "reference_potential");
  if (j.contains("edges")) {
    const json& e = j.at("edges");
    check_keys(e, {"minus", "plus", "interval", "margin"}, "edges");
    if (e.contains("minus")) c.minus = as_nature(e.at("minus"), "edges.minus");
    if (e.contains("plus")) c.plus = as_nature(e.at("plus"), "edges.plus");
    if (e.contains("interval")) c.interval = as_interval(e.at("interval"), "edges.interval", false);
    if (e.contains("margin")) c.margin = as_real(e.at("margin"), "edges.margin");
    if (!(c.margin > 0)) throw ConfigError("edges.margin: must be positive");
  }
  if (j.contains("beta")) c.beta = as_real(j.at("beta"), "beta");
  if (!(c.beta > 0) || !std::isfinite(c.beta)) throw ConfigError("beta: must be positive");
  if (j.contains("contour")) {
    const json& o = j.at("contour");
    check_keys(o, {"rho0", "ratio", "nodes"}, "contour");
    if (o.contains("rho0")) c.contour.rho0 = as_real(o.at("rho0"), "contour.rho0");
    if (o.contains("ratio")) c.contour.ratio = as_real(o.at("ratio"), "contour.ratio");
    if (o.contains("nodes")) c.contour.nodes = static_cast<int>(as_int(o.at("nodes"), "contour.nodes"));
    if (!(c.contour.rho0 > 1.0) || !(c.contour.ratio > 1.0) || c.contour.nodes < 16)
      throw ConfigError("contour: need rho0 > 1, ratio > 1, nodes >= 16");
  }
  if (j.contains("operators")) {
    const json& o = j.at("operators");
    check_keys(o, {"kinv_tol", "nodes"}, "operators");
    if (o.contains("kinv_tol")) c.operators.kinv_tol = as_real(o.at("kinv_tol"), "operators.kinv_tol");
    if (o.contains("nodes")) c.operators.m_outer = static_cast<int>(as_int(o.at("nodes"), "operators.nodes"));
    if (!(c.operators.kinv_tol > 0) || c.operators.m_outer < 16)
      throw ConfigError("operators: need kinv_tol > 0, nodes >= 16");
    c.recursion.kinv_tol = c.operators.kinv_tol;
    c.recursion.m_outer = c.operators.m_outer;
  }
  if (j.contains("recursion")) {
    const json& o = j.at("recursion");
    check_keys(o, {"max_k", "probes", "residuals"}, "recursion");
    if (o.contains("max_k")) c.max_k = static_cast<int>(as_int(o.at("max_k"), "recursion.max_k"));
    if (c.max_k < -1 || c.max_k > 4) throw ConfigError("recursion.max_k: must lie in [-1, 4]");
    if (o.contains("probes")) {
      if (!o.at("probes").is_array()) throw ConfigError("recursion.probes: expected an array");
      for (const auto& p : o.at("probes")) c.probes.push_back(as_point(p, "recursion.probes"));
    }
    if (o.contains("residuals")) c.recursion.residuals = as_bool(o.at("residuals"), "recursion.residuals");
  }
  if (j.contains("mc")) {
    const json& o = j.at("mc");
    check_keys(o, {"N", "sweeps", "burn_in", "step", "chains", "seed", "thin"}, "mc");
    if (o.contains("N")) c.mc.N = static_cast<int>(as_int(o.at("N"), "mc.N"));
    if (o.contains("sweeps")) c.mc.sweeps = as_int(o.at("sweeps"), "mc.sweeps");
    if (o.contains("burn_in")) c.mc.burn_in = as_int(o.at("burn_in"), "mc.burn_in");
    if (o.contains("step")) c.mc.step = as_real(o.at("step"), "mc.step");
    if (o.contains("chains")) c.mc.chains = static_cast<int>(as_int(o.at("chains"), "mc.chains"));
    if (o.contains("seed")) {
      if (!o.at("seed").is_number_unsigned() && !o.at("seed").is_number_integer())
        throw ConfigError("mc.seed: expected an integer");
      c.mc.seed = o.at("seed").get<std::uint64_t>();
    }
    if (o.contains("thin")) c.mc.thin = static_cast<int>(as_int(o.at("thin"), "mc.thin"));
  }
  c.mc.beta = c.beta;
  try {
    c.mc.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, {"dir", "format"}, "output");
    if (o.contains("dir")) c.output_dir = as_string(o.at("dir"), "output.dir");
    if (o.contains("format")) c.format = as_string(o.at("format"), "output.format");
    if (c.format != "json" && c.format != "csv") throw ConfigError("output.format: expected \"json\" or \"csv\"");
  }
  if (j.contains("verify")) {
    const json& o = j.at("verify");
    check_keys(o, {"free_energy", "sigmas", "cv_count", "cv_cross"}, "verify");
    if (o.contains("free_energy")) c.verify.free_energy = as_bool(o.at("free_energy"), "verify.free_energy");
    if (o.contains("sigmas")) c.verify.sigmas = as_real(o.at("sigmas"), "verify.sigmas");
    if (o.contains("cv_count")) c.verify.cv_count = static_cast<int>(as_int(o.at("cv_count"), "verify.cv_count"));
    if (o.contains("cv_cross")) c.verify.cv_cross = static_cast<int>(as_int(o.at("cv_cross"), "verify.cv_cross"));
    if (!(c.verify.sigmas > 0) || c.verify.cv_count < 0 || c.verify.cv_cross < 0)
      throw ConfigError("verify: sigmas > 0, cv_count >= 0, cv_cross >= 0");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

// ---- polynomials ----------------------------------------------------------

Poly parse_poly(const std::string& input) {
  std::string s;
  for (char ch : input)
    if (!std::isspace(static_cast<unsigned char>(ch))) s += ch;
  if (s.empty()) throw ConfigError("polynomial: empty");
  auto number = [&](const std::string& t) {
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      throw ConfigError("polynomial: bad number '" + t + "'");
    }
    if (used != t.size()) throw ConfigError("polynomial: bad number '" + t + "'");
    return v;
  };
  Poly p;
  if (s.find('x') == std::string::npos && s.find(',') != std::string::npos) {
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) p.push_back(number(tok));
    return p;
  }
  std::vector<std::string> terms;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char ch = s[i];
    bool exponent = i >= 2 && (s[i - 1] == 'e' || s[i - 1] == 'E') &&
                    (std::isdigit(static_cast<unsigned char>(s[i - 2])) || s[i - 2] == '.');
    if ((ch == '+' || ch == '-') && !cur.empty() && !exponent && cur.back() != '^') {
      terms.push_back(cur);
      cur.clear();
    }
    cur += ch;
  }
  terms.push_back(cur);
  for (std::string t : terms) {
    double sign = 1.0;
    if (!t.empty() && (t[0] == '+' || t[0] == '-')) {
      sign = t[0] == '-' ? -1.0 : 1.0;
      t = t.substr(1);
    }
    auto xp = t.find('x');
    int power = 0;
    double coef;
    if (xp == std::string::npos) {
      coef = number(t);
    } else {
      std::string c = t.substr(0, xp), rest = t.substr(xp + 1);
      if (!c.empty() && c.back() == '*') c.pop_back();
      coef = c.empty() ? 1.0 : number(c);
      if (rest.empty()) {
        power = 1;
      } else if (rest[0] == '^' && rest.size() > 1 && rest.find_first_not_of("0123456789", 1) == std::string::npos) {
        power = std::stoi(rest.substr(1));
      } else {
        throw ConfigError("polynomial: bad term '" + t + "'");
      }
    }
    if (static_cast<int>(p.size()) <= power) p.resize(power + 1, 0.0);
    p[power] += sign * coef;
  }
  return p;
}

// ---- output ---------------------------------------------------------------

namespace {

std::string fmt17(double v) {
  if (std::isnan(v)) return "\"nan\"";
  if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void dump_rec(const ojson& j, std::string& out, int level) {
  const std::string pad(2 * level, ' '), pad1(2 * level + 2, ' ');
  switch (j.type()) {
    case ojson::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad1 + ojson(it.key()).dump() + ": ";
        dump_rec(it.value(), out, level + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case ojson::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // flat numeric arrays on one line
      bool flat = true;
      for (const auto& v : j) flat = flat && v.is_primitive();
      if (flat) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ", ";
          dump_rec(j[i], out, level + 1);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += pad1;
        dump_rec(j[i], out, level + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case ojson::value_t::number_float:
      out += fmt17(j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

struct Artifact {
  std::string path, content;
};

// written only after the command has succeeded
void commit(const std::vector<Artifact>& arts) {
  for (const auto& a : arts) {
    std::filesystem::path p(a.path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = a.path + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary);
      if (!f) throw std::runtime_error("cannot write '" + a.path + "'");
      f << a.content;
    }
    std::filesystem::rename(tmp, a.path);
  }
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

ojson cjson(cplx v) { return ojson::array({v.real(), v.imag()}); }

ojson edges_json(const EdgeConfig& e) {
  return {{"a_minus", e.a_minus}, {"a_plus", e.a_plus}, {"minus", nature_name(e.minus)}, {"plus", nature_name(e.plus)}};
}

ojson hypotheses_json(const HypothesisReport& h) {
  return {{"confinement", h.confinement},   {"one_cut", h.one_cut},
          {"offcritical", h.offcritical},   {"large_deviation", h.large_deviation},
          {"edges_consistent", h.edges_consistent}, {"message", h.message}};
}

std::vector<cplx> default_probes(const EdgeConfig& e) { return {cplx(e.a_plus + 1.0, 0.0), cplx(e.a_minus - 1.0, 0.0), cplx(0.5 * (e.a_minus + e.a_plus), 2.0)}; }

// ---- commands -------------------------------------------------------------

struct Ctx {
  RunConfig cfg;
  std::vector<Artifact> arts;
  ojson result;
  std::string stdout_text;  // overrides the JSON on stdout when set
};

void cmd_equilibrium(Ctx& c) {
  EdgeConfig e = c.cfg.edges();
  auto eq = solve_equilibrium(c.cfg.potential.orders[0], e);
  auto oc = check_offcritical(eq, c.cfg.contour);
  auto hyp = validate_hypotheses(c.cfg.potential, e);
  c.result = {{"command", "equilibrium"},
              {"description", "support [alpha_minus, alpha_plus]; energy = int V dmu - int int ln|x - y| dmu dmu"},
              {"alpha_minus", eq.support.alpha_minus},
              {"alpha_plus", eq.support.alpha_plus},
              {"constant_C", eq.constant_C},
              {"energy", eq.energy},
              {"minS", oc.minS},
              {"offcritical", oc.ok},
              {"edges", edges_json(e)},
              {"hypotheses", hypotheses_json(hyp)}};
  std::ostringstream csv;
  csv << "# x: position on the support; rho: equilibrium density (probability per unit length)\n";
  csv << "x,rho\n";
  const int n = 401;
  for (int i = 0; i < n; ++i) {
    double w = std::cos(kPi * (n - i - 0.5) / n);
    double x = eq.frame.c + 2.0 * eq.frame.gamma * w;
    csv << fmt17(x) << "," << fmt17(density(eq, x)) << "\n";
  }
  if (!c.cfg.output_dir.empty()) {
    c.arts.push_back({join(c.cfg.output_dir, "equilibrium.csv"), csv.str()});
    c.result["density_csv"] = join(c.cfg.output_dir, "equilibrium.csv");
  }
  if (c.cfg.format == "csv") c.stdout_text = csv.str();
}

ojson term_json(const CorrelatorTerm& t, bool with_coeffs) {
  ojson j = {{"n", t.n}, {"k", t.k}, {"weight", t.weight}, {"dims", t.coeffs.dims},
             {"asymmetry", t.asymmetry}, {"imk_residual", t.imk_residual}};
  if (with_coeffs) {
    ojson re = ojson::array(), im = ojson::array();
    for (auto v : t.coeffs.data) {
      re.push_back(v.real());
      im.push_back(v.imag());
    }
    j["coeffs_re"] = std::move(re);
    j["coeffs_im"] = std::move(im);
  }
  return j;
}

void cmd_expand(Ctx& c, int max_k) {
  EdgeConfig e = c.cfg.edges();
  auto eq = solve_equilibrium(c.cfg.potential.orders[0], e);
  auto ex = expand_all(eq, hard_edge_data(eq.edges), c.cfg.potential, c.cfg.beta, max_k, c.cfg.recursion);
  auto probes = c.cfg.probes.empty() ? default_probes(e) : c.cfg.probes;
  ojson terms = ojson::array(), res = ojson::array(), vals = ojson::array();
  for (const auto& [key, t] : ex.terms) {
    terms.push_back(term_json(t, true));
    std::vector<cplx> x(t.n);
    for (int i = 0; i < t.n; ++i) x[i] = probes[i % probes.size()];
    ojson xs = ojson::array();
    for (auto v : x) xs.push_back(cjson(v));
    vals.push_back({{"n", t.n}, {"k", t.k}, {"x", xs}, {"value", cjson(t(x))}});
  }
  for (const auto& [key, r] : ex.residuals) res.push_back({{"n", key.first}, {"k", key.second}, {"residual", r}});
  c.result = {{"command", "expand"},
              {"description",
               "W_n^k(x_1..x_n) = sum_j c[j_1..j_n] prod_i z_i^-(j_i+1) / (1 - z_i^-2)^weight, "
               "x = c + gamma (z + 1/z); coeffs row-major over (j_1..j_n); complex values as [re, im]"},
              {"beta", c.cfg.beta},
              {"max_k", max_k},
              {"frame", {{"c", eq.frame.c}, {"gamma", eq.frame.gamma}}},
              {"edges", edges_json(e)},
              {"terms", terms},
              {"residuals", res},
              {"probe_values", vals}};
}

FreeEnergyExpansion compute_free_energy(const RunConfig& cfg, const EdgeConfig& e, int max_k) {
  FreeEnergyOptions fo;
  fo.rec = cfg.recursion;
  fo.rec.residuals = false;
  if (cfg.reference) return free_energy_path(*cfg.reference, cfg.potential, e, cfg.beta, max_k, fo);
  if (e.hard_count() > 0)
    throw ConfigError("free-energy: with a hard edge only differences are available; set reference_potential");
  return free_energy_coeffs(cfg.potential, e, cfg.beta, max_k, fo);
}

void cmd_free_energy(Ctx& c, int max_k) {
  EdgeConfig e = c.cfg.edges();
  auto fe = compute_free_energy(c.cfg, e, max_k);
  ojson F = ojson::object();
  for (auto& [k, v] : fe.coeffs) F[std::to_string(k)] = v;
  c.result = {{"command", "free-energy"},
              {"description", fe.gaussian_reference
                                  ? "ln Z_N = ln Z_N(reference) + sum_k N^-k F[k], k = -2..max_k"
                                  : "ln Z_N(potential) - ln Z_N(reference_potential) = sum_k N^-k F[k]"},
              {"beta", c.cfg.beta},
              {"max_k", max_k},
              {"F", F},
              {"reference", fe.gaussian_reference ? fe.reference : std::string("reference_potential")},
              {"s_nodes", fe.s_quadrature.nodes.size()},
              {"s_change", fe.s_change},
              {"edges", edges_json(e)}};
  if (fe.gaussian_reference) {
    c.result["N"] = c.cfg.mc.N;
    c.result["lnZ_prediction"] = lnZ_prediction(fe, c.cfg.mc.N, max_k);
  }
}

void cmd_clt(Ctx& c, const Poly& h) {
  EdgeConfig e = c.cfg.edges();
  auto eq = solve_equilibrium(c.cfg.potential.orders[0], e);
  auto ed = hard_edge_data(eq.edges);
  Poly v1 = c.cfg.potential.has_order(1) ? c.cfg.potential.orders[1] : Poly{};
  double mean = clt_mean(eq, ed, c.cfg.beta, h, v1, c.cfg.recursion);
  double cov = clt_covariance(eq, ed, c.cfg.beta, h, c.cfg.operators);
  c.result = {{"command", "clt"},
              {"description", "sum h(lambda_i) - N int h dmu_eq -> Normal(mean, covariance)"},
              {"beta", c.cfg.beta},
              {"h", h},
              {"integral_h", oint_poly(h, eq.w1m1).real()},
              {"mean", mean},
              {"covariance", cov},
              {"edges", edges_json(e)}};
}

void cmd_sample(Ctx& c, const std::string& out) {
  EdgeConfig e = c.cfg.edges();
  auto run = sample_chain(c.cfg.potential, e, c.cfg.mc);
  std::ostringstream csv;
  write_chain_csv(csv, run);
  std::string path = out.empty() && !c.cfg.output_dir.empty() ? join(c.cfg.output_dir, "chain.csv") : out;
  if (!path.empty()) c.arts.push_back({path, csv.str()});
  c.result = {{"command", "sample"},
              {"description", "chain CSV rows: sweep index, then eigenvalues"},
              {"N", c.cfg.mc.N},
              {"beta", c.cfg.beta},
              {"sweeps", c.cfg.mc.sweeps},
              {"burn_in", c.cfg.mc.burn_in},
              {"thin", c.cfg.mc.thin},
              {"chains", c.cfg.mc.chains},
              {"seed", c.cfg.mc.seed},
              {"kept", run.size()},
              {"acceptance", run.acceptance},
              {"step", run.step},
              {"edges", edges_json(e)},
              {"out", path}};
  if (c.cfg.format == "csv") c.stdout_text = csv.str();
}

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0, expected = 0.0, tolerance = 0.0;
  std::string detail;
};

void cmd_verify(Ctx& c) {
  const RunConfig& cfg = c.cfg;
  EdgeConfig e = cfg.edges();
  std::vector<Check> checks;
  auto hyp = validate_hypotheses(cfg.potential, e);
  checks.push_back({"hypotheses", hyp.all(), 0, 0, 0, hyp.message});
  auto eq = solve_equilibrium(cfg.potential.orders[0], e);
  auto ed = hard_edge_data(eq.edges);
  const int K = std::max(0, std::min(cfg.max_k, 2));
  RecursionOptions ro = cfg.recursion;
  ro.residuals = true;
  auto ex = expand_all(eq, ed, cfg.potential, cfg.beta, K, ro);
  double worst = 0.0;
  for (auto& [key, r] : ex.residuals) worst = std::max(worst, r);
  checks.push_back({"loop_residuals", worst <= 1e-6, worst, 0.0, 1e-6, "max over computed orders"});

  const int N = cfg.mc.N;
  const double nn = N;
  auto run = sample_chain(cfg.potential, e, cfg.mc);
  const double sig = cfg.verify.sigmas;

  // one-point function at a real point right of the working interval
  cplx x0(e.a_plus + 1.0, 0.0);
  for (auto p : cfg.probes)
    if (p.imag() == 0.0 && (p.real() > e.a_plus || p.real() < e.a_minus)) {
      x0 = p;
      break;
    }
  double pred = 0.0, last = 0.0;
  for (int k = -1; k <= K; ++k) {
    last = (ex.terms.at({1, k})({x0}) * std::pow(nn, -k)).real();
    pred += last;
  }
  EstimatorOptions eo;
  eo.cv_count = cfg.verify.cv_count;
  eo.cv_cross = cfg.verify.cv_cross;
  auto w = estimate_correlators(run, {x0}, 1, eo).at(1);
  double comb = std::hypot(w.std_error, std::abs(last) / nn);
  checks.push_back({"one_point", std::abs(w.value.real() - pred) <= sig * comb, w.value.real(), pred, sig * comb,
                    "x = " + detail::sci(x0.real()) + ", truncation at k = " + std::to_string(K)});

  Poly v1 = cfg.potential.has_order(1) ? cfg.potential.orders[1] : Poly{};
  for (const auto& [name, h] : {std::pair<std::string, Poly>{"x", Poly{0, 1}}, {"x^2", Poly{0, 0, 1}}}) {
    double m = clt_mean(eq, ed, cfg.beta, h, v1, cfg.recursion);
    double cv = clt_covariance(eq, ed, cfg.beta, h, cfg.operators);
    auto ls = estimate_linear_statistic(run, h, eq);
    double tm = sig * std::hypot(ls.mean.std_error, std::max(1.0, std::abs(m)) / nn);
    double tv = sig * std::hypot(ls.var.std_error, std::max(1.0, cv) / nn);
    checks.push_back({"clt_mean[" + name + "]", std::abs(ls.mean.value - m) <= tm, ls.mean.value, m, tm, ""});
    checks.push_back({"clt_variance[" + name + "]", std::abs(ls.var.value - cv) <= tv, ls.var.value, cv, tv, ""});
  }

  if (cfg.verify.free_energy && e.minus == Nature::Soft && e.plus == Nature::Soft) {
    const int KF = std::min(K, 1);
    auto fe = compute_free_energy(cfg, e, KF + 1);
    double p = lnZ_prediction(fe, N, KF);
    ThermoOptions to;
    to.cv_count = cfg.verify.cv_count;
    to.cv_cross = cfg.verify.cv_cross;
    auto mc = thermodynamic_lnZ(cfg.potential, e, cfg.mc, to);
    double t = sig * std::hypot(mc.std_error, std::abs(fe.coeffs.at(KF + 1)) * std::pow(nn, -(KF + 1)));
    checks.push_back({"free_energy", std::abs(mc.value - p) <= t, mc.value, p, t,
                      "thermodynamic integration vs expansion at k = " + std::to_string(KF)});
  }

  ojson arr = ojson::array();
  int passed = 0;
  for (const auto& ch : checks) {
    passed += ch.pass;
    arr.push_back({{"name", ch.name}, {"pass", ch.pass}, {"value", ch.value}, {"expected", ch.expected},
                   {"tolerance", ch.tolerance}, {"detail", ch.detail}});
  }
  c.result = {{"command", "verify"},
              {"description", "pass when |value - expected| <= tolerance (residual checks: value <= tolerance)"},
              {"beta", cfg.beta},
              {"N", N},
              {"sweeps", cfg.mc.sweeps},
              {"seed", cfg.mc.seed},
              {"acceptance", run.acceptance},
              {"checks", arr},
              {"passed", passed},
              {"total", checks.size()},
              {"all_pass", passed == static_cast<int>(checks.size())}};
}

ojson error_json(const std::string& kind, const std::string& msg) {
  return {{"error", {{"kind", kind}, {"message", msg}}}};
}

}  // namespace

std::string dump_json(const ojson& j) {
  std::string s;
  dump_rec(j, s, 0);
  return s + "\n";
}

int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"one-cut beta ensembles: equilibrium, 1/N expansion, free energy, CLT and Monte Carlo checks"};
  app.require_subcommand(1);
  std::string config, poly, chain_out, out_dir;
  int max_k = -100, N = 0;
  long sweeps = 0;
  auto add_common = [&](CLI::App* s) {
    s->add_option("config", config, "JSON config file")->required();
    s->add_option("--out-dir", out_dir, "directory for artifacts (overrides output.dir)");
  };
  auto* s_eq = app.add_subcommand("equilibrium", "support, energy and density of the equilibrium measure");
  auto* s_ex = app.add_subcommand("expand", "correlators W_n^k up to order max-k");
  auto* s_fe = app.add_subcommand("free-energy", "free energy coefficients F[k]");
  auto* s_clt = app.add_subcommand("clt", "mean and variance of a linear statistic");
  auto* s_sm = app.add_subcommand("sample", "Metropolis chain of eigenvalue configurations");
  auto* s_vf = app.add_subcommand("verify", "Monte Carlo against the expansion, JSON scorecard");
  for (auto* s : {s_eq, s_ex, s_fe, s_clt, s_sm, s_vf}) add_common(s);
  s_ex->add_option("--max-k", max_k, "highest order k");
  s_fe->add_option("--max-k", max_k, "highest order k");
  s_clt->set_help_flag("--help", "print help");
  s_clt->add_option("--h", poly, "test polynomial, e.g. \"x^2 - 1\" or \"0,0,1\"")->required();
  s_sm->add_option("--N", N, "number of eigenvalues (overrides mc.N)");
  s_sm->add_option("--sweeps", sweeps, "total sweeps (overrides mc.sweeps)");
  s_sm->add_option("--out", chain_out, "chain CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << dump_json(error_json("config", e.what()));
    return kConfigError;
  }

  Ctx c;
  try {
    c.cfg = load_config(config);
    if (!out_dir.empty()) c.cfg.output_dir = out_dir;
    if (N > 0) c.cfg.mc.N = N;
    if (sweeps > 0) {
      c.cfg.mc.sweeps = sweeps;
      if (c.cfg.mc.burn_in >= sweeps) c.cfg.mc.burn_in = sweeps / 10;
    }
    if (max_k != -100) {
      if (max_k < -1 || max_k > 4) throw ConfigError("--max-k: must lie in [-1, 4]");
      c.cfg.max_k = max_k;
    }
    c.cfg.mc.check();
  } catch (const std::exception& e) {
    err << dump_json(error_json("config", e.what()));
    return kConfigError;
  }

  std::string name;
  try {
    if (*s_eq) {
      name = "equilibrium";
      cmd_equilibrium(c);
    } else if (*s_ex) {
      name = "expand";
      cmd_expand(c, c.cfg.max_k);
    } else if (*s_fe) {
      name = "free_energy";
      cmd_free_energy(c, c.cfg.max_k);
    } else if (*s_clt) {
      name = "clt";
      cmd_clt(c, parse_poly(poly));
    } else if (*s_sm) {
      name = "sample";
      cmd_sample(c, chain_out);
    } else {
      name = "verify";
      cmd_verify(c);
    }
    std::string text = dump_json(c.result);
    if (!c.cfg.output_dir.empty()) c.arts.push_back({join(c.cfg.output_dir, name + ".json"), text});
    commit(c.arts);
    out << (c.stdout_text.empty() ? text : c.stdout_text);
    return kOk;
  } catch (const std::invalid_argument& e) {
    err << dump_json(error_json("config", e.what()));
    return kConfigError;
  } catch (const std::exception& e) {
    out << dump_json(error_json("numerical_failure", e.what()));
    return kNumericalFailure;
  }
}

}  // namespace betacut::cli
