#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mice/cmdp.hpp"
#include "mice/critic.hpp"
#include "mice/envs.hpp"
#include "mice/memory.hpp"
#include "mice/policy_opt.hpp"
#include "mice/softmax_policy.hpp"

namespace mice {

enum class EnvKind { kGrid, kChain };
enum class OptimizerKind { kMiceCpo, kMicePidLag, kCpo, kPidLag };
enum class IntrinsicMode { kMemory, kConstant };

struct MemoryConfig {
  double xi = 1e-3;
  int k = 10;
  int projection_dim = 4;  // clamped to the feature dimension
  std::uint64_t projection_seed = 97;
  std::optional<std::size_t> capacity = 4096;
};

struct CriticConfig {
  double alpha = 0.1;
  double beta0 = 1.0;
};

struct ExperimentConfig {
  EnvKind env_kind = EnvKind::kGrid;
  GridConfig grid;
  ChainConfig chain;
  OptimizerKind optimizer = OptimizerKind::kMiceCpo;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6};
  int iterations = 300;
  int batch_episodes = 90;
  int horizon = 1000;
  double gae_lambda = 0.95;
  TrustRegionConfig trust;
  PidConfig pid;
  double actor_lr = 3e-4;
  MemoryConfig memory;
  CriticConfig critic;
  IntrinsicMode intrinsic_mode = IntrinsicMode::kMemory;
  double intrinsic_constant = 0.1;
  FeatureMode policy_features = FeatureMode::kOneHot;
};

// Gridworld experiment with the standard defaults (8x8, 8 hazards,
// horizon 200, budget 5).
ExperimentConfig default_config();

// Cost budget of the active environment.
double env_threshold(const ExperimentConfig& cfg);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

struct MetricsRow {
  int iteration = 0;
  double j_r_hat = 0.0;
  double j_c_hat = 0.0;
  double j_c_exact = 0.0;
  double j_r_exact = 0.0;
  double beta = 0.0;
  double mean_intrinsic = 0.0;
  std::size_t memory_size = 0;
  std::string branch;  // feasible | recovery | rejected | pid
  double lambda = 0.0;
  double nu = 0.0;
  double q = 0.0;
  double u = 0.0;
  double v = 0.0;
  double measured_kl = 0.0;
  double c_surplus = 0.0;
  bool violation = false;           // exact J_C above the budget
  double undiscounted_cost = 0.0;   // episodic cost, reported as a metric only
};

// Per-iteration artifacts needed to check the per-update cost bound after
// the fact.
struct IterationSnapshot {
  int iteration = 0;
  Eigen::VectorXd theta_before;
  Eigen::VectorXd theta_after;
  double beta = 0.0;
  Eigen::VectorXd ci_table;  // frozen per-state intrinsic cost
  std::string branch;
  bool accepted = false;
};

struct SeedRunResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> metrics;
  std::vector<IterationSnapshot> snapshots;
  Eigen::VectorXd final_theta;
};

struct TrainResult {
  std::vector<SeedRunResult> runs;
};

TrainResult train(const ExperimentConfig& cfg, bool record_snapshots = false);

// Writes metrics_<seed>.csv, trace_<seed>.csv, config.json and aggregate
// SVG plots into out_dir. Output bytes depend only on cfg and results.
void emit_outputs(const std::string& out_dir, const ExperimentConfig& cfg,
                  const TrainResult& result);

struct BoundReport {
  std::string which;
  int index = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  bool holds = false;
};

// Exact two-sided check of the performance-difference identity for the
// combined cost: J^EI(pi') - J_C(pi) against the discounted advantage sum.
BoundReport lemma1_identity(const CmdpSpec& spec, const PolicyTable& pi,
                            const PolicyTable& pi_prime, const Eigen::VectorXd& ci_table,
                            double beta, int index = 0);

// Trust-region style upper bound on J^EI(pi') - J^EI(pi).
BoundReport theorem1_bound(const CmdpSpec& spec, const PolicyTable& pi,
                           const PolicyTable& pi_prime, const Eigen::VectorXd& ci_table,
                           double beta, int index = 0);

// Per-update cost bound J_C(pi_{k+1}) <= d - I + sqrt(2 phi) gamma eps/(1-gamma)^2.
BoundReport theorem2_bound(const CmdpSpec& spec, const PolicyTable& pi_k,
                           const PolicyTable& pi_next, const Eigen::VectorXd& ci_table,
                           double beta, double phi, int index = 0);

// Deterministic random CMDPs and policies for verification fixtures.
CmdpSpec make_random_cmdp(int n_states, int n_actions, double gamma, std::uint64_t seed);
PolicyTable make_random_policy(int n_states, int n_actions, std::uint64_t seed,
                               double logit_scale = 1.5);

// Identity / bound sweeps over the built-in fixture family.
std::vector<BoundReport> run_lemma1_suite(int pairs_per_fixture, std::uint64_t seed);
std::vector<BoundReport> run_theorem1_suite(int pairs_per_fixture, std::uint64_t seed);

struct Theorem2SuiteResult {
  std::vector<BoundReport> reports;  // one per accepted feasible update
  int feasible_accepted = 0;
  int recovery_steps = 0;
  int rejected_steps = 0;
  int pid_steps = 0;
};

// Trains with snapshot recording and checks the per-update bound on every
// accepted feasible-branch update; recovery and rejected steps are excluded
// but counted.
Theorem2SuiteResult run_theorem2_suite(const ExperimentConfig& cfg);

struct ConvergencePoint {
  std::uint64_t updates = 0;
  double err_beta_zero = 0.0;
  double err_beta_scheduled = 0.0;
  double err_beta_const = 0.0;  // distance to the inflated fixed point
};

struct ConvergenceReport {
  std::vector<ConvergencePoint> trace;
  double final_err_beta_zero = 0.0;
  double final_err_beta_scheduled = 0.0;
  double final_err_beta_const = 0.0;   // vs the modified-cost fixed point
  double const_fixed_point_gap = 0.0;  // min over pairs of Q_mod* - Q*
  Eigen::VectorXd ci_table;
};

// Tabular min-greedy Q-learning with Robbins-Monro steps and exploring
// starts, run three ways: beta = 0, scheduled beta, constant beta without
// the discounting.
ConvergenceReport convergence_suite(const CmdpSpec& fixture, std::uint64_t n_updates,
                                    std::uint64_t seed);

struct BiasProbeConfig {
  GridConfig grid;
  std::vector<std::uint64_t> seeds = {11, 12, 13, 14, 15, 16};
  int iterations = 120;
  int episodes_per_iteration = 12;
  int horizon = 200;
  double noise_std = 0.02;
  double alpha = 0.1;
  double beta0 = 1.0;
  MemoryConfig memory;
};

struct BiasSeedSummary {
  std::uint64_t seed = 0;
  double baseline_final_third = 0.0;  // mean bias, beta = 0
  double mice_final_third = 0.0;      // mean bias, scheduled beta
};

struct BiasFigureResult {
  // Mean bias per iteration, averaged over probe states; one row per
  // (variant, seed, iteration, state) goes to CSV.
  std::vector<BiasRecord> baseline_records;  // aggregated per iteration (state = -1)
  std::vector<BiasRecord> mice_records;
  std::vector<std::vector<BiasRecord>> baseline_state_records;  // per seed
  std::vector<std::vector<BiasRecord>> mice_state_records;
  std::vector<BiasSeedSummary> summaries;
};

// Min-greedy critic with zero-mean bootstrap noise, run paired with and
// without the intrinsic correction against the exact min-cost fixed point.
BiasFigureResult run_bias_figure(const BiasProbeConfig& cfg);

void emit_bias_outputs(const std::string& out_dir, const BiasProbeConfig& cfg,
                       const BiasFigureResult& result);
void emit_bound_reports(const std::string& out_dir, const std::vector<BoundReport>& reports);
void emit_convergence_outputs(const std::string& out_dir, const ConvergenceReport& report);

// Exact-oracle answer for a CMDP + policy file pair (CLI `oracle`).
nlohmann::json oracle_report(const CmdpSpec& spec, const PolicyTable& policy);

PolicyTable policy_from_json(const nlohmann::json& j, const CmdpSpec& spec);

std::string format_csv_field(double v);

}  // namespace mice
