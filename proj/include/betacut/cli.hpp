#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "analytic_kernel.hpp"
#include "montecarlo.hpp"
#include "operators.hpp"
#include "potential.hpp"
#include "recursion.hpp"

namespace betacut::cli {

// exit codes
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericalFailure = 3;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct VerifySettings {
  bool free_energy = false;
  double sigmas = 3.0;
  int cv_count = 12;
  int cv_cross = 4;
};

struct RunConfig {
  PotentialSpec potential;
  std::optional<PotentialSpec> reference;  // free-energy path start, optional
  Nature minus = Nature::Soft, plus = Nature::Soft;
  std::optional<std::pair<double, double>> interval;  // explicit working interval
  double margin = 1.0;
  double beta = 2.0;
  ContourFamily contour;
  OperatorOptions operators;
  RecursionOptions recursion;
  int max_k = 1;
  std::vector<cplx> probes;
  MCConfig mc;
  std::string output_dir;
  std::string format = "json";
  VerifySettings verify;

  EdgeConfig edges() const;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// "0,0,1" or "x^2 - 0.5*x + 1"
Poly parse_poly(const std::string& s);

// pretty JSON with every float written to 17 significant digits
std::string dump_json(const nlohmann::ordered_json& j);

int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace betacut::cli
