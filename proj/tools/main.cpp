#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "lyasafe/baseline_suite.hpp"
#include "lyasafe/experiment.hpp"
#include "lyasafe/plot.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  long seed = -1;
  int iterations = -1;
  std::string output_dir;
  std::string beta_mode;
};

lyasafe::ExperimentConfig resolve_config(const CommonFlags& flags) {
  lyasafe::ExperimentConfig config =
      flags.config_path.empty() ? lyasafe::ExperimentConfig{} : lyasafe::load_config(flags.config_path);
  if (flags.seed >= 0) config.seed = flags.seed;
  if (flags.iterations >= 0) config.iterations = flags.iterations;
  if (!flags.output_dir.empty()) config.output_dir = flags.output_dir;
  if (!flags.beta_mode.empty()) config.beta_mode = flags.beta_mode;
  config.validate();
  return config;
}

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "configuration file (key = value lines)");
  cmd->add_option("--seed", flags.seed, "random seed override");
  cmd->add_option("--iterations", flags.iterations, "iteration count override");
  cmd->add_option("--output-dir", flags.output_dir, "artifact directory override");
  cmd->add_option("--beta-mode", flags.beta_mode, "confidence scaling: fixed | theoretical")
      ->check(CLI::IsMember({"fixed", "theoretical"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lyasafe: safe region-of-attraction learning"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string checkpoint, measurements, plot_dir;
  bool print_schema = false;

  auto* run_cmd = app.add_subcommand("run", "run the learning loop and emit artifacts");
  add_common_flags(run_cmd, flags);
  run_cmd->add_flag("--print-config", print_schema, "print the resolved configuration and exit");

  auto* verify_cmd = app.add_subcommand("verify", "certify a stored policy without learning");
  add_common_flags(verify_cmd, flags);
  verify_cmd->add_option("--checkpoint", checkpoint, "policy checkpoint path")->required();
  verify_cmd->add_option("--measurements", measurements,
                         "optional measurements CSV to condition the model on");

  auto* baseline_cmd = app.add_subcommand("baseline", "run the oracle-operator property suite");
  add_common_flags(baseline_cmd, flags);

  auto* plot_cmd = app.add_subcommand("plot", "render SVG panels from run artifacts");
  plot_cmd->add_option("--artifact-dir", plot_dir, "directory with run CSVs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const auto config = resolve_config(flags);
      if (print_schema) {
        lyasafe::write_config(config, std::cout);
        return 0;
      }
      const auto log = lyasafe::run_experiment(config);
      std::cout << "iterations " << log.rows.size() << "\n"
                << "c_initial " << log.c_initial << " (" << log.initial_cells << " cells)\n"
                << "c_final " << log.c_final << " (" << log.final_cells << " cells)\n"
                << "violations " << log.total_violations << "\n"
                << "oracle_sound " << (log.all_oracle_sound ? "yes" : "no") << "\n"
                << "sets_monotone " << (log.sets_monotone ? "yes" : "no") << "\n"
                << "cost initial " << log.initial_policy_cost << " -> learned "
                << log.learned_policy_cost << "\n";
      return log.total_violations == 0 ? 0 : 1;
    }
    if (verify_cmd->parsed()) {
      const auto config = resolve_config(flags);
      const auto result = lyasafe::verify_only(config, checkpoint, measurements);
      std::cout << "certified level " << result.c << " (" << result.certified_cells
                << " cells)\n"
                << "certificate " << result.certificate_path << "\n"
                << "oracle_contained " << (result.oracle_contained ? "yes" : "no") << "\n";
      return result.oracle_contained ? 0 : 1;
    }
    if (baseline_cmd->parsed()) {
      const auto config = resolve_config(flags);
      const auto report = lyasafe::run_baseline_suite(static_cast<uint64_t>(config.seed), 100);
      std::cout << report.to_string();
      return report.all_pass ? 0 : 1;
    }
    if (plot_cmd->parsed()) {
      const auto written = lyasafe::plot_artifacts(plot_dir);
      for (const auto& name : written) std::cout << "wrote " << name << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
