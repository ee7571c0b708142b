#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mice/cmdp.hpp"
#include "mice/harness.hpp"
#include "mice/json_io.hpp"

namespace {

// Errors leave on stderr as a single JSON object so callers can parse them.
int fail(const std::string& command, const std::exception& e) {
  nlohmann::json err;
  err["error"] = e.what();
  err["command"] = command;
  std::cerr << err.dump() << std::endl;
  return 1;
}

mice::ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return mice::default_config();
  return mice::config_from_json(mice::load_json_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained tabular RL laboratory with memory-driven intrinsic costs"};
  app.require_subcommand(0, 1);

  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults,
               "Print the default experiment configuration as JSON and exit");

  // train
  auto* train_cmd = app.add_subcommand("train", "Run training and write metrics/plots");
  std::string train_config, train_out = "out";
  train_cmd->add_option("--config", train_config, "Experiment configuration JSON");
  train_cmd->add_option("--out", train_out, "Output directory");

  // probe-bias
  auto* bias_cmd =
      app.add_subcommand("probe-bias", "Compare critic bias with and without correction");
  std::string bias_out = "out-bias";
  int bias_iterations = 120;
  double bias_noise = 0.02;
  bias_cmd->add_option("--out", bias_out, "Output directory");
  bias_cmd->add_option("--iterations", bias_iterations, "Probe iterations");
  bias_cmd->add_option("--noise-std", bias_noise, "Bootstrap noise standard deviation");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "Check an exact identity or bound");
  std::string which;
  std::string verify_out = "out-verify";
  int verify_pairs = 0;  // 0 picks the per-check default below
  std::uint64_t verify_seed = 7;
  std::string verify_config;
  verify_cmd->add_option("--which", which, "lemma1 | thm1 | thm2")->required();
  verify_cmd->add_option("--out", verify_out, "Output directory");
  verify_cmd->add_option("--pairs", verify_pairs,
                         "Policy pairs per fixture (default 25 for lemma1, 100 for thm1)");
  verify_cmd->add_option("--seed", verify_seed, "Fixture seed");
  verify_cmd->add_option("--config", verify_config,
                         "Training configuration for the per-update bound check");

  // converge
  auto* conv_cmd =
      app.add_subcommand("converge", "Run the critic convergence suite on a fixture");
  std::string fixture_path;
  std::string conv_out = "out-converge";
  std::uint64_t conv_updates = 1000000;
  std::uint64_t conv_seed = 5;
  conv_cmd->add_option("--fixture", fixture_path, "CMDP fixture JSON")->required();
  conv_cmd->add_option("--out", conv_out, "Output directory");
  conv_cmd->add_option("--updates", conv_updates, "Number of critic updates");
  conv_cmd->add_option("--seed", conv_seed, "Stream seed");

  // oracle
  auto* oracle_cmd =
      app.add_subcommand("oracle", "Exact policy evaluation for a CMDP and policy");
  std::string oracle_cmdp, oracle_policy;
  oracle_cmd->add_option("--cmdp", oracle_cmdp, "CMDP JSON file")->required();
  oracle_cmd->add_option("--policy", oracle_policy, "Policy JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  if (print_defaults) {
    std::cout << mice::dump_json(mice::config_to_json(mice::default_config())) << "\n";
    return 0;
  }

  try {
    if (train_cmd->parsed()) {
      const mice::ExperimentConfig cfg = load_config(train_config);
      const mice::TrainResult result = mice::train(cfg);
      mice::emit_outputs(train_out, cfg, result);
      nlohmann::json done;
      done["out"] = train_out;
      done["seeds"] = cfg.seeds.size();
      done["iterations"] = cfg.iterations;
      std::cout << done.dump() << "\n";
      return 0;
    }
    if (bias_cmd->parsed()) {
      mice::BiasProbeConfig cfg;
      cfg.iterations = bias_iterations;
      cfg.noise_std = bias_noise;
      const mice::BiasFigureResult result = mice::run_bias_figure(cfg);
      mice::emit_bias_outputs(bias_out, cfg, result);
      nlohmann::json done;
      done["out"] = bias_out;
      for (const auto& s : result.summaries) {
        done["summaries"].push_back({{"seed", s.seed},
                                     {"baseline_final_third", s.baseline_final_third},
                                     {"corrected_final_third", s.mice_final_third}});
      }
      std::cout << done.dump() << "\n";
      return 0;
    }
    if (verify_cmd->parsed()) {
      std::vector<mice::BoundReport> reports;
      nlohmann::json extra;
      if (which == "lemma1") {
        reports = mice::run_lemma1_suite(verify_pairs > 0 ? verify_pairs : 25, verify_seed);
      } else if (which == "thm1") {
        reports = mice::run_theorem1_suite(verify_pairs > 0 ? verify_pairs : 100, verify_seed);
      } else if (which == "thm2") {
        mice::ExperimentConfig cfg = load_config(verify_config);
        if (verify_config.empty()) {
          cfg.iterations = 60;
          cfg.seeds = {1};
        }
        const mice::Theorem2SuiteResult suite = mice::run_theorem2_suite(cfg);
        reports = suite.reports;
        extra["feasible_accepted"] = suite.feasible_accepted;
        extra["recovery_steps"] = suite.recovery_steps;
        extra["rejected_steps"] = suite.rejected_steps;
      } else {
        throw std::runtime_error("--which must be lemma1, thm1 or thm2");
      }
      mice::emit_bound_reports(verify_out, reports);
      std::size_t failures = 0;
      for (const auto& r : reports) {
        if (!r.holds) ++failures;
      }
      nlohmann::json done;
      done["which"] = which;
      done["checked"] = reports.size();
      done["failures"] = failures;
      done["out"] = verify_out;
      if (!extra.is_null()) done["detail"] = extra;
      std::cout << done.dump() << "\n";
      return failures == 0 ? 0 : 2;
    }
    if (conv_cmd->parsed()) {
      const mice::CmdpSpec fixture = mice::load_cmdp(fixture_path);
      const mice::ConvergenceReport report =
          mice::convergence_suite(fixture, conv_updates, conv_seed);
      mice::emit_convergence_outputs(conv_out, report);
      nlohmann::json done;
      done["out"] = conv_out;
      done["final_err_beta_zero"] = report.final_err_beta_zero;
      done["final_err_beta_scheduled"] = report.final_err_beta_scheduled;
      done["final_err_beta_const_vs_modified"] = report.final_err_beta_const;
      done["const_fixed_point_gap"] = report.const_fixed_point_gap;
      std::cout << done.dump() << "\n";
      return 0;
    }
    if (oracle_cmd->parsed()) {
      const mice::CmdpSpec spec = mice::load_cmdp(oracle_cmdp);
      const mice::PolicyTable pi =
          mice::policy_from_json(mice::load_json_file(oracle_policy), spec);
      std::cout << mice::dump_json(mice::oracle_report(spec, pi)) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::string cmd = "none";
    if (train_cmd->parsed()) cmd = "train";
    if (bias_cmd->parsed()) cmd = "probe-bias";
    if (verify_cmd->parsed()) cmd = "verify";
    if (conv_cmd->parsed()) cmd = "converge";
    if (oracle_cmd->parsed()) cmd = "oracle";
    return fail(cmd, e);
  }

  std::cout << app.help() << "\n";
  return 0;
}
