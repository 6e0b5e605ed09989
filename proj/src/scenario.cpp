#include "hierpop/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hierpop {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ScenarioError(where + ": " + what);
}

std::string family_list() {
  std::string out;
  for (const auto& f : RateExpr::family_names()) {
    if (!out.empty()) out += ", ";
    out += f;
  }
  return out;
}

Var parse_var(const json& j, const std::string& where) {
  const std::string v = j.get<std::string>();
  if (v == "s") return Var::s;
  if (v == "y") return Var::y;
  if (v == "E") return Var::E;
  if (v == "P") return Var::P;
  fail(where + ".variable", "unknown variable '" + v + "' (expected s, y, E or P)");
}

std::vector<double> coeffs_of(const json& j, const std::string& where, size_t arity) {
  if (!j.contains("coefficients") || !j["coefficients"].is_array()) {
    fail(where, "missing 'coefficients' array");
  }
  auto c = j["coefficients"].get<std::vector<double>>();
  if (arity > 0 && c.size() != arity) {
    fail(where + ".coefficients", "expected " + std::to_string(arity) +
                                      " coefficients, got " + std::to_string(c.size()));
  }
  if (arity == 0 && c.empty()) fail(where + ".coefficients", "expected at least one coefficient");
  return c;
}

RateExpr parse_rate(const json& j, const std::string& where) {
  if (j.is_number()) return RateExpr::constant(j.get<double>());
  if (!j.is_object()) fail(where, "a rate must be a number or an object with a 'family'");
  if (!j.contains("family")) fail(where, "missing 'family' (one of: " + family_list() + ")");
  const std::string fam = j["family"].get<std::string>();

  auto var = [&]() {
    if (!j.contains("variable")) fail(where, "family '" + fam + "' needs a 'variable'");
    return parse_var(j["variable"], where);
  };

  if (fam == "constant") return RateExpr::constant(coeffs_of(j, where, 1)[0]);
  if (fam == "polynomial") return RateExpr::polynomial(var(), coeffs_of(j, where, 0));
  if (fam == "exp_decay") {
    auto c = coeffs_of(j, where, 2);
    return RateExpr::exp_decay(var(), c[0], c[1]);
  }
  if (fam == "logistic") {
    auto c = coeffs_of(j, where, 2);
    return RateExpr::logistic(var(), c[0], c[1]);
  }
  if (fam == "hill") {
    auto c = coeffs_of(j, where, 2);
    return RateExpr::hill(var(), c[0], c[1]);
  }
  if (fam == "affine") {
    auto c = coeffs_of(j, where, 2);
    return RateExpr::affine(var(), c[0], c[1]);
  }
  if (fam == "tabulated") {
    if (!j.contains("xmax")) fail(where, "tabulated rate needs 'xmax'");
    if (!j.contains("values") || !j["values"].is_array()) {
      fail(where, "tabulated rate needs a 'values' array");
    }
    const auto vals = j["values"].get<std::vector<double>>();
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(vals.data(),
                                                          static_cast<Eigen::Index>(vals.size()));
    return RateExpr::tabulated(var(), j["xmax"].get<double>(), std::move(v));
  }
  if (fam == "product" || fam == "sum") {
    if (!j.contains("terms") || !j["terms"].is_array() || j["terms"].size() < 2) {
      fail(where, "'" + fam + "' needs a 'terms' array with at least two entries");
    }
    std::optional<RateExpr> acc;
    int k = 0;
    for (const auto& t : j["terms"]) {
      RateExpr e = parse_rate(t, where + ".terms[" + std::to_string(k++) + "]");
      acc = acc ? (fam == "product" ? RateExpr::product(*acc, e) : RateExpr::sum(*acc, e)) : e;
    }
    return *acc;
  }
  fail(where + ".family", "unknown family '" + fam + "' (valid: " + family_list() + ")");
}

std::optional<SeparableFertility> parse_separable(const json& j, const std::string& where) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_object() || !j.contains("beta1") || !j.contains("beta2")) {
    fail(where, "separable fertility needs 'beta1' and 'beta2'");
  }
  return SeparableFertility{parse_rate(j["beta1"], where + ".beta1"),
                            parse_rate(j["beta2"], where + ".beta2")};
}

double positive_of(const json& j, const char* key, double dflt, const std::string& where) {
  const double v = j.value(key, dflt);
  if (!(v > 0.0)) fail(where + "." + key, "must be positive");
  return v;
}

}  // namespace

GridFunction Scenario::initial_density() const {
  const Grid g = make_grid();
  if (dynamics.initial) {
    return GridFunction::sample(g, [&](double s) { return (*dynamics.initial)({.s = s}); });
  }
  return GridFunction::constant(g, 1.0);
}

Scenario scenario_from_json(const json& j, const std::string& source_name) {
  if (!j.is_object()) fail(source_name, "scenario must be a JSON object");
  for (const char* key : {"m", "rates"}) {
    if (!j.contains(key)) fail(source_name, std::string("missing required field '") + key + "'");
  }
  const json& rates = j["rates"];
  for (const char* key : {"gamma1", "gamma2", "mu", "beta", "w", "kappa"}) {
    if (!rates.contains(key)) fail(source_name + ".rates", std::string("missing rate '") + key + "'");
  }

  const double m = j["m"].get<double>();
  const double alpha = j.value("alpha", 1.0);
  std::optional<RateExpr> bound;
  if (rates.contains("beta_bound")) {
    bound = parse_rate(rates["beta_bound"], source_name + ".rates.beta_bound");
  }

  ModelIngredients ing(parse_rate(rates["gamma1"], source_name + ".rates.gamma1"),
                       parse_rate(rates["gamma2"], source_name + ".rates.gamma2"),
                       parse_rate(rates["mu"], source_name + ".rates.mu"),
                       parse_rate(rates["beta"], source_name + ".rates.beta"),
                       parse_rate(rates["w"], source_name + ".rates.w"),
                       parse_rate(rates["kappa"], source_name + ".rates.kappa"), alpha, m,
                       std::move(bound));

  Scenario sc{j.value("name", source_name), std::move(ing)};

  const json grid = j.value("grid", json::object());
  sc.grid_n = grid.value("n", 400);
  if (sc.grid_n < 16) fail(source_name + ".grid.n", "grid must have at least 16 cells");

  const json solver = j.value("solver", json::object());
  sc.solver.tol_fp = positive_of(solver, "tol_fp", 1e-9, source_name + ".solver");
  sc.solver.tol_residual_rel =
      positive_of(solver, "tol_residual_rel", 1e-4, source_name + ".solver");
  sc.solver.tol_residual_abs =
      positive_of(solver, "tol_residual_abs", 1e-8, source_name + ".solver");
  sc.solver.theta = positive_of(solver, "theta", 0.5, source_name + ".solver");
  sc.solver.max_iter = solver.value("max_iter", 5000);
  sc.solver.rank = solver.value("rank", 8);
  sc.solver.seed = positive_of(solver, "seed", 1e-2, source_name + ".solver");
  sc.solver.divergence_ceiling = positive_of(solver, "divergence_ceiling", 1e8,
                                             source_name + ".solver");
  sc.solver.anderson = solver.value("anderson", false);
  sc.solver.anderson_depth = solver.value("anderson_depth", 3);
  sc.solver.restarts = solver.value("restarts", 2);
  const std::string anchor = solver.value("anchor", "right");
  if (anchor == "right") {
    sc.solver.anchor = BinAnchor::right;
  } else if (anchor == "midpoint") {
    sc.solver.anchor = BinAnchor::midpoint;
  } else {
    fail(source_name + ".solver.anchor", "expected 'right' or 'midpoint'");
  }
  if (sc.solver.rank < 1) fail(source_name + ".solver.rank", "must be >= 1");
  if (sc.solver.max_iter < 1) fail(source_name + ".solver.max_iter", "must be >= 1");
  if (!(sc.solver.theta <= 1.0)) fail(source_name + ".solver.theta", "must lie in (0, 1]");

  const json dyn = j.value("dynamics", json::object());
  sc.dynamics.cfl = positive_of(dyn, "cfl", 0.9, source_name + ".dynamics");
  if (sc.dynamics.cfl > 1.0) fail(source_name + ".dynamics.cfl", "must lie in (0, 1]");
  sc.dynamics.T = positive_of(dyn, "T", 1.0, source_name + ".dynamics");
  sc.dynamics.mass_ceiling = positive_of(dyn, "mass_ceiling", 1e9, source_name + ".dynamics");
  if (dyn.contains("output_times")) {
    sc.dynamics.output_times = dyn["output_times"].get<std::vector<double>>();
  } else {
    sc.dynamics.output_times = {sc.dynamics.T};
  }
  if (dyn.contains("initial")) {
    sc.dynamics.initial = parse_rate(dyn["initial"], source_name + ".dynamics.initial");
  }
  const std::string fmt = dyn.value("trajectory_format", "wide");
  if (fmt == "wide") {
    sc.dynamics.wide_trajectory = true;
  } else if (fmt == "long") {
    sc.dynamics.wide_trajectory = false;
  } else {
    fail(source_name + ".dynamics.trajectory_format", "expected 'wide' or 'long'");
  }

  const json stab = j.value("stability", json::object());
  sc.stability.tol_spec = positive_of(stab, "tol_spec", 1e-6, source_name + ".stability");
  sc.stability.oracle_n = stab.value("oracle_n", 400);
  sc.stability.scan_resolution = stab.value("scan_resolution", 64);
  sc.stability.support_epsilon = stab.value("support_epsilon", -1.0);
  if (stab.contains("window")) {
    const json& w = stab["window"];
    ScanWindow win;
    win.re_min = w.value("re_min", -1.0);
    win.re_max = w.value("re_max", 5.0);
    win.im_max = w.value("im_max", 20.0);
    if (!(win.re_max > win.re_min) || !(win.im_max > 0.0)) {
      fail(source_name + ".stability.window", "degenerate window");
    }
    sc.stability.window = win;
  }
  if (stab.contains("majorant")) {
    sc.stability.majorant = parse_separable(stab["majorant"], source_name + ".stability.majorant");
  }
  if (stab.contains("minorant")) {
    sc.stability.minorant = parse_separable(stab["minorant"], source_name + ".stability.minorant");
  }

  const json exist = j.value("existence", json::object());
  sc.existence_radius = positive_of(exist, "radius", 10.0, source_name + ".existence");

  const json assume = j.value("assumptions", json::object());
  sc.assumptions.samples = assume.value("samples", 101);
  sc.assumptions.E_max = positive_of(assume, "E_max", 10.0, source_name + ".assumptions");
  sc.explicit_P_max = assume.contains("P_max");
  sc.assumptions.P_max = positive_of(assume, "P_max", 10.0, source_name + ".assumptions");

  // Default P range for assumption sampling: ten times the weighted
  // population of the initial density.
  if (!sc.explicit_P_max) {
    const GridFunction p0 = sc.initial_density();
    bool nonneg = !(p0.values().array() < 0.0).any();
    if (nonneg) {
      const double P0 = environment(p0, sc.ingredients).P;
      if (P0 > 0.0) sc.assumptions.P_max = 10.0 * P0;
    }
  }

  // Echo of the resolved configuration.
  json echo = j;
  echo["name"] = sc.name;
  echo["alpha"] = alpha;
  echo["grid"] = {{"n", sc.grid_n}};
  echo["solver"] = {{"tol_fp", sc.solver.tol_fp},
                    {"tol_residual_rel", sc.solver.tol_residual_rel},
                    {"tol_residual_abs", sc.solver.tol_residual_abs},
                    {"theta", sc.solver.theta},
                    {"max_iter", sc.solver.max_iter},
                    {"rank", sc.solver.rank},
                    {"anchor", anchor},
                    {"seed", sc.solver.seed},
                    {"divergence_ceiling", sc.solver.divergence_ceiling},
                    {"anderson", sc.solver.anderson},
                    {"anderson_depth", sc.solver.anderson_depth},
                    {"restarts", sc.solver.restarts}};
  echo["dynamics"]["cfl"] = sc.dynamics.cfl;
  echo["dynamics"]["T"] = sc.dynamics.T;
  echo["dynamics"]["output_times"] = sc.dynamics.output_times;
  echo["dynamics"]["mass_ceiling"] = sc.dynamics.mass_ceiling;
  echo["dynamics"]["trajectory_format"] = fmt;
  echo["stability"]["tol_spec"] = sc.stability.tol_spec;
  echo["stability"]["oracle_n"] = static_cast<int>(sc.stability.oracle_n);
  echo["stability"]["scan_resolution"] = sc.stability.scan_resolution;
  echo["existence"] = {{"radius", sc.existence_radius}};
  echo["assumptions"] = {{"samples", sc.assumptions.samples},
                         {"E_max", sc.assumptions.E_max},
                         {"P_max", sc.assumptions.P_max}};
  sc.echo = std::move(echo);
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError("parse error in " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j, path.stem().string());
}

std::optional<Command> parse_command(const std::string& name) {
  if (name == "check") return Command::check;
  if (name == "steady") return Command::steady;
  if (name == "simulate") return Command::simulate;
  if (name == "stability") return Command::stability;
  if (name == "trivial") return Command::trivial;
  if (name == "all") return Command::all;
  return std::nullopt;
}

const char* command_name(Command c) {
  switch (c) {
    case Command::check: return "check";
    case Command::steady: return "steady";
    case Command::simulate: return "simulate";
    case Command::stability: return "stability";
    case Command::trivial: return "trivial";
    case Command::all: return "all";
  }
  return "?";
}

namespace {

std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class OutputWriter {
 public:
  OutputWriter(const std::filesystem::path& dir, std::vector<std::string>& files)
      : dir_(dir), files_(files) {
    std::filesystem::create_directories(dir_);
  }

  void write_text(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write output file: " + (dir_ / name).string());
    out << content;
    files_.push_back(name);
  }

  void write_json(const std::string& name, const json& j) {
    write_text(name, j.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string>& files_;
};

std::string steady_csv(const SteadyState& ss) {
  std::ostringstream os;
  os << "s,p_star,E_star\n";
  const Grid& g = ss.p_star.grid();
  for (Eigen::Index i = 0; i < ss.p_star.size(); ++i) {
    os << num17(g.node(i)) << ',' << num17(ss.p_star[i]) << ',' << num17(ss.E_star[i]) << '\n';
  }
  return os.str();
}

std::string trajectory_csv(const Trajectory& traj, bool wide) {
  std::ostringstream os;
  if (wide) {
    os << "time";
    if (!traj.snapshots.empty()) {
      for (Eigen::Index i = 0; i < traj.snapshots.front().size(); ++i) os << ",p_" << i;
    }
    os << '\n';
    for (size_t k = 0; k < traj.times.size(); ++k) {
      os << num17(traj.times[k]);
      for (Eigen::Index i = 0; i < traj.snapshots[k].size(); ++i) {
        os << ',' << num17(traj.snapshots[k][i]);
      }
      os << '\n';
    }
  } else {
    os << "time,node,value\n";
    for (size_t k = 0; k < traj.times.size(); ++k) {
      for (Eigen::Index i = 0; i < traj.snapshots[k].size(); ++i) {
        os << num17(traj.times[k]) << ',' << i << ',' << num17(traj.snapshots[k][i]) << '\n';
      }
    }
  }
  return os.str();
}

std::string diagnostics_csv(const Trajectory& traj) {
  std::ostringstream os;
  os << "time,mass,P,outflow\n";
  for (const auto& d : traj.diagnostics) {
    os << num17(d.t) << ',' << num17(d.mass) << ',' << num17(d.P) << ',' << num17(d.outflow)
       << '\n';
  }
  return os.str();
}

std::string roots_csv(const StabilityReport& rep) {
  std::ostringstream os;
  os << "re,im,source\n";
  for (const auto& r : rep.char_roots) {
    os << num17(r.location.real()) << ',' << num17(r.location.imag()) << ',' << r.source
       << '\n';
  }
  // The oracle eigenvalues in a deterministic order.
  std::vector<Complex> eigs(rep.matrix_eigs.data(),
                            rep.matrix_eigs.data() + rep.matrix_eigs.size());
  std::sort(eigs.begin(), eigs.end(), [](Complex a, Complex b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() < b.imag();
  });
  for (const auto& e : eigs) {
    os << num17(e.real()) << ',' << num17(e.imag()) << ",matrix_oracle\n";
  }
  return os.str();
}

json conditions_json(const std::vector<ConditionFinding>& findings) {
  json arr = json::array();
  for (const auto& f : findings) {
    arr.push_back({{"name", f.name},
                   {"passed", f.passed},
                   {"advisory", f.advisory},
                   {"value", f.value},
                   {"detail", f.detail}});
  }
  return arr;
}

json stability_json(const StabilityReport& rep) {
  json j;
  j["verdict"] = verdict_name(rep.verdict);
  j["trivial_state"] = rep.trivial_state;
  j["summary"] = rep.summary;
  j["rightmost"] = {{"re", rep.rightmost.real()}, {"im", rep.rightmost.imag()}};
  j["oracle_n"] = static_cast<int>(rep.oracle_n);
  j["scan_window"] = {{"re_min", rep.scan_window.re_min},
                      {"re_max", rep.scan_window.re_max},
                      {"im_max", rep.scan_window.im_max}};
  j["conditions"] = conditions_json(rep.triggered_conditions);
  json roots = json::array();
  for (const auto& r : rep.char_roots) {
    roots.push_back({{"re", r.location.real()}, {"im", r.location.imag()}, {"source", r.source}});
  }
  j["char_roots"] = roots;
  return j;
}

json steady_json(const SteadyState& ss) {
  json j;
  j["converged"] = ss.converged;
  j["iterations"] = ss.iterations;
  j["P_star"] = ss.P_star;
  j["residual_l1"] = ss.residual_l1;
  j["p_star_l1"] = l1_norm(ss.p_star);
  json fluxes = json::array();
  for (Eigen::Index i = 0; i < ss.birth_fluxes.size(); ++i) fluxes.push_back(ss.birth_fluxes[i]);
  j["birth_fluxes"] = fluxes;
  return j;
}

json existence_json(const ExistenceReport& rep) {
  json j;
  j["supercritical_at_zero"] = rep.supercritical_at_zero;
  j["c_bound"] = std::isfinite(rep.c_bound) ? json(rep.c_bound) : json("inf");
  j["findings"] = conditions_json(rep.findings);
  return j;
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

SteadyState zero_state_on(const Grid& g) {
  return SteadyState{GridFunction::zero(g), GridFunction::zero(g), 0.0, Eigen::VectorXd(), 0.0,
                     0, true};
}

}  // namespace

RunOutcome run_command(Command cmd, const Scenario& sc, const RunOptions& opts) {
  RunOutcome out;
  json& rep = out.report;
  rep["schema_version"] = "1";
  rep["tool_version"] = "0.1.0";
  rep["command"] = command_name(cmd);
  rep["scenario"] = sc.echo;
  rep["generated_at"] = timestamp_utc();
  const auto t_start = std::chrono::steady_clock::now();

  StabilityOptions stab_opts = sc.stability;
  stab_opts.threads = opts.threads;

  // Assumption screening runs for every command; strict mode turns
  // violations into a refusal before any numerics.
  const AssumptionReport assumptions = check_assumptions(sc.ingredients, sc.assumptions);
  {
    json arr = json::array();
    for (const auto& v : assumptions.violations) {
      arr.push_back({{"what", v.what}, {"message", v.message}, {"value", v.value}});
    }
    rep["assumption_violations"] = arr;
  }
  if (opts.strict && !assumptions.ok()) {
    rep["error"] = "assumption violations under --strict";
    out.exit_code = kExitAssumptions;
    return out;
  }

  const Grid grid = sc.make_grid();
  OutputWriter writer(opts.out_dir, out.files);

  auto solve = [&]() {
    SteadyState ss = solve_fixed_point(sc.ingredients, grid, sc.solver);
    rep["steady"] = steady_json(ss);
    const double bound =
        sc.solver.tol_residual_rel * l1_norm(ss.p_star) + sc.solver.tol_residual_abs;
    rep["steady"]["residual_bound"] = bound;
    rep["steady"]["residual_within_tolerance"] = ss.residual_l1 <= bound;
    writer.write_text("steady_state.csv", steady_csv(ss));
    if (!ss.converged) out.exit_code = kExitNumerical;
    return ss;
  };
  auto classify_state = [&](const SteadyState& ss, const char* report_key) {
    const StabilityReport srep = classify(ss, sc.ingredients, stab_opts);
    rep[report_key] = stability_json(srep);
    writer.write_text("roots.csv", roots_csv(srep));
    return srep;
  };
  auto run_simulation = [&](const GridFunction& p0) {
    SimOptions sim;
    sim.cfl = sc.dynamics.cfl;
    sim.output_times = sc.dynamics.output_times;
    sim.mass_ceiling = sc.dynamics.mass_ceiling;
    Trajectory traj = simulate(p0, sc.dynamics.T, sc.ingredients, sim);
    writer.write_text("trajectory.csv", trajectory_csv(traj, sc.dynamics.wide_trajectory));
    writer.write_text("diagnostics.csv", diagnostics_csv(traj));
    double worst_defect = 0.0;
    for (const auto& d : traj.diagnostics) worst_defect = std::max(worst_defect, d.ledger_defect);
    rep["simulation"] = {{"steps", traj.diagnostics.size()},
                         {"final_mass", traj.diagnostics.empty() ? integrate(p0)
                                                                 : traj.diagnostics.back().mass},
                         {"worst_ledger_defect", worst_defect}};
    return traj;
  };

  const char* report_file = "run_report.json";
  try {
    switch (cmd) {
      case Command::check: {
        report_file = "check_report.json";
        bool gamma_usable = true;
        for (const auto& v : assumptions.violations) {
          gamma_usable = gamma_usable && v.what.rfind("gamma", 0) != 0;
        }
        if (!gamma_usable) {
          // The existence conditions integrate 1/gamma; without a positive
          // growth rate they are not evaluable.
          rep["existence"] = {{"skipped", "gamma is not positive on the sampled range"}};
          break;
        }
        FertilityDecomposition dec;
        if (split_finite_rank_fertility(sc.ingredients.beta)) {
          dec = separable_decomposition(sc.ingredients, grid);
        } else {
          dec = decompose_beta(sc.ingredients, GridFunction::zero(grid), sc.solver.rank,
                               sc.solver.anchor);
        }
        rep["existence"] = existence_json(check_existence(dec, sc.ingredients,
                                                          sc.existence_radius));
        rep["decomposition"] = {{"rank", dec.rank()},
                                {"mode", dec.mode == FertilityDecomposition::Mode::user_separable
                                             ? "user_separable"
                                             : "auto_piecewise"},
                                {"sup_error", dec.sup_error}};
        break;
      }
      case Command::steady: {
        report_file = "steady_report.json";
        solve();
        break;
      }
      case Command::simulate: {
        report_file = "simulate_report.json";
        run_simulation(sc.initial_density());
        break;
      }
      case Command::stability: {
        report_file = "stability_report.json";
        const SteadyState ss = solve();
        if (ss.converged) classify_state(ss, "stability");
        break;
      }
      case Command::trivial: {
        report_file = "trivial_report.json";
        classify_state(zero_state_on(grid), "stability");
        break;
      }
      case Command::all: {
        report_file = "run_report.json";
        const SteadyState ss = solve();
        if (ss.converged) {
          classify_state(ss, "stability");
          const double norm = l1_norm(ss.p_star);
          if (norm > 0.0) {
            const Trajectory traj = run_simulation(ss.p_star);
            const GridFunction& last = traj.snapshots.back();
            rep["persistence"] = {
                {"T", sc.dynamics.T},
                {"relative_l1_drift", l1_norm(last - ss.p_star) / norm}};
          }
          if (auto split = split_separable_fertility(sc.ingredients.beta)) {
            rep["net_reproduction_at_steady_state"] =
                net_reproduction(ss.p_star, split->beta1, split->beta2, sc.ingredients);
          }
        }
        break;
      }
    }
  } catch (const SolveError& e) {
    rep["error"] = e.what();
    out.exit_code = kExitNumerical;
  } catch (const BlowUpError& e) {
    rep["error"] = e.what();
    out.exit_code = kExitNumerical;
  }

  const auto t_end = std::chrono::steady_clock::now();
  rep["wall_time_s"] = std::chrono::duration<double>(t_end - t_start).count();
  writer.write_json(report_file, rep);
  return out;
}

}  // namespace hierpop
