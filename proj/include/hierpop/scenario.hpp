#pragma once

#include "hierpop/dynamics.hpp"
#include "hierpop/model.hpp"
#include "hierpop/stability.hpp"
#include "hierpop/steady.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hierpop {

/// Scenario file problems: parse errors, unknown families, arity mismatches.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A fully resolved run description loaded from a scenario file. Defaults are
/// filled at load time and echoed back, so a report always shows the values
/// that were actually used.
struct Scenario {
  std::string name;
  ModelIngredients ingredients;
  Eigen::Index grid_n = 400;
  SolverOptions solver;
  struct DynamicsConfig {
    double cfl = 0.9;
    double T = 1.0;
    std::vector<double> output_times;  // defaults to {T}
    double mass_ceiling = 1e9;
    std::optional<RateExpr> initial;   // density profile in s; constant 1 when absent
    bool wide_trajectory = true;       // wide CSV (row per time) vs long (time,node,value)
  } dynamics;
  StabilityOptions stability;
  double existence_radius = 10.0;
  AssumptionCheckOptions assumptions;
  bool explicit_P_max = false;  // assumption P range given in the file

  nlohmann::json echo;  // resolved values, defaults included

  Grid make_grid() const { return Grid(ingredients.m, grid_n); }
  GridFunction initial_density() const;
};

Scenario load_scenario(const std::filesystem::path& path);
Scenario scenario_from_json(const nlohmann::json& j, const std::string& source_name);

enum class Command { check, steady, simulate, stability, trivial, all };

std::optional<Command> parse_command(const std::string& name);
const char* command_name(Command c);

/// CLI exit-status contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitAssumptions = 3;

struct RunOptions {
  std::filesystem::path out_dir = "out";
  int threads = 1;
  bool strict = false;
};

struct RunOutcome {
  int exit_code = kExitOk;
  nlohmann::json report;
  std::vector<std::string> files;  // paths written, relative to out_dir
};

/// Dispatch a command against a loaded scenario, writing CSV series and a
/// JSON report into the output directory. Numeric CSV payloads are
/// deterministic: 17 significant digits, no wall-clock content.
RunOutcome run_command(Command cmd, const Scenario& sc, const RunOptions& opts);

}  // namespace hierpop
