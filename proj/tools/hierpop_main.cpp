#include "hierpop/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"hierpop: steady states, dynamics and stability of a hierarchical "
               "size-structured population model with distributed states at birth"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "out";
  int threads = 1;
  bool strict = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    sub->add_option("--out", out_dir, "output directory (default: out)");
    sub->add_option("--threads", threads, "worker threads for scans");
    sub->add_flag("--strict", strict, "treat assumption violations as errors");
  };

  for (const char* name : {"check", "steady", "simulate", "stability", "trivial", "all"}) {
    add_common(app.add_subcommand(name));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return hierpop::kExitUsage;
  }

  const auto cmd = hierpop::parse_command(app.get_subcommands().front()->get_name());
  if (!cmd) {
    std::cerr << "unknown command\n";
    return hierpop::kExitUsage;
  }

  try {
    const hierpop::Scenario sc = hierpop::load_scenario(scenario_path);
    hierpop::RunOptions opts;
    opts.out_dir = out_dir;
    opts.threads = std::max(1, threads);
    opts.strict = strict;
    const hierpop::RunOutcome outcome = hierpop::run_command(*cmd, sc, opts);
    if (outcome.report.contains("error")) {
      std::cerr << "error: " << outcome.report["error"].get<std::string>() << "\n";
    }
    if (outcome.report.contains("steady")) {
      const auto& s = outcome.report["steady"];
      std::printf("steady: converged=%s iterations=%d P_star=%.6g residual_l1=%.3g\n",
                  s["converged"].get<bool>() ? "yes" : "no", s["iterations"].get<int>(),
                  s["P_star"].get<double>(), s["residual_l1"].get<double>());
    }
    if (outcome.report.contains("stability")) {
      std::printf("stability: %s\n",
                  outcome.report["stability"]["summary"].get<std::string>().c_str());
    }
    if (outcome.report.contains("persistence")) {
      std::printf("persistence: relative L1 drift %.3g over T=%.3g\n",
                  outcome.report["persistence"]["relative_l1_drift"].get<double>(),
                  outcome.report["persistence"]["T"].get<double>());
    }
    for (const auto& f : outcome.files) {
      std::printf("wrote %s/%s\n", out_dir.c_str(), f.c_str());
    }
    return outcome.exit_code;
  } catch (const hierpop::ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return hierpop::kExitUsage;
  } catch (const hierpop::SolveError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return hierpop::kExitNumerical;
  } catch (const hierpop::BlowUpError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return hierpop::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return hierpop::kExitUsage;
  }
}
