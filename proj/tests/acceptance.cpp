// Acceptance gate: one check per shipped claim, each printed as a single
// [PASS]/[FAIL] line. Exit status is nonzero when any selected check fails.
//
// Usage: acceptance [criterion numbers...]   (no arguments runs all nine)

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mice/cmdp.hpp"
#include "mice/critic.hpp"
#include "mice/harness.hpp"
#include "mice/policy_opt.hpp"
#include "mice/rng.hpp"
#include "mice/softmax_policy.hpp"

using namespace mice;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixture_file(const std::string& name) {
  for (const char* prefix : {"../../fixtures/", "fixtures/", "../fixtures/"}) {
    const std::string candidate = prefix + name;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in.good()) return std::string("<missing:") + p.string() + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

// --------------------------------------------------------------------------
// 1. Exact performance-difference identity on the fixture family.
// --------------------------------------------------------------------------
Outcome criterion1() {
  const std::vector<BoundReport> reports = run_lemma1_suite(20, 7);
  double worst = 0.0;
  for (const auto& r : reports) worst = std::max(worst, std::abs(r.lhs - r.rhs));
  Outcome out;
  out.pass = reports.size() >= 60 && worst <= 1e-9;
  out.detail = std::to_string(reports.size()) + " pairs across 4 fixtures, max |lhs-rhs| = " +
               fmt(worst) + " (tol 1e-9)";
  return out;
}

// --------------------------------------------------------------------------
// 2. Trust-region upper bound with exact visitation and total variation.
// --------------------------------------------------------------------------
Outcome criterion2() {
  const std::vector<BoundReport> reports = run_theorem1_suite(100, 7);
  double min_slack = std::numeric_limits<double>::infinity();
  for (const auto& r : reports) min_slack = std::min(min_slack, r.slack);
  Outcome out;
  out.pass = reports.size() == 400 && min_slack >= -1e-8;
  out.detail = std::to_string(reports.size()) + " pairs, min slack = " + fmt(min_slack) +
               " (floor -1e-8)";
  return out;
}

// --------------------------------------------------------------------------
// 3. Per-update cost bound over a 200-iteration corrected-optimizer run.
// --------------------------------------------------------------------------
Outcome criterion3() {
  ExperimentConfig cfg = default_config();
  cfg.seeds = {1};
  cfg.iterations = 200;
  const Theorem2SuiteResult res = run_theorem2_suite(cfg);
  int failures = 0;
  double min_slack = std::numeric_limits<double>::infinity();
  for (const auto& r : res.reports) {
    if (!r.holds) ++failures;
    min_slack = std::min(min_slack, r.slack);
  }
  Outcome out;
  out.pass = failures == 0 && res.feasible_accepted > 0 &&
             res.feasible_accepted == static_cast<int>(res.reports.size());
  out.detail = std::to_string(res.feasible_accepted) + " feasible updates all hold (min slack " +
               fmt(min_slack) + "); " + std::to_string(res.recovery_steps) + " recovery and " +
               std::to_string(res.rejected_steps) + " rejected steps excluded";
  return out;
}

// --------------------------------------------------------------------------
// 4. Critic convergence against the value-iteration oracle.
// --------------------------------------------------------------------------
Outcome criterion4() {
  const CmdpSpec fixture = load_cmdp(fixture_file("convergence_chain.json"));
  const ConvergenceReport rep = convergence_suite(fixture, 1000000, 5);
  Outcome out;
  const bool scheduled_ok = rep.final_err_beta_scheduled < 1e-2;
  const bool zero_ok = rep.final_err_beta_zero < 1e-3;
  // The negative control must settle at a fixed point strictly above the true
  // minimum-cost values. Witness: the iterate ends within 0.05 of the exact
  // inflated fixed point, and its certified elevation above the true values
  // (oracle gap minus the remaining iterate error) clears the 0.05 margin.
  const bool const_converged = rep.final_err_beta_const < 0.05;
  const double learned_gap = rep.const_fixed_point_gap - rep.final_err_beta_const;
  const bool gap_ok = learned_gap > 0.05;
  out.pass = scheduled_ok && zero_ok && gap_ok && const_converged;
  out.detail = "scheduled err " + fmt(rep.final_err_beta_scheduled) + " (<1e-2), zero-control err " +
               fmt(rep.final_err_beta_zero) + " (<1e-3), inflated fixed-point gap " +
               fmt(rep.const_fixed_point_gap) + " reached within " + fmt(rep.final_err_beta_const) +
               " (learned table >" + fmt(learned_gap) + " above the true values; need >0.05)";
  return out;
}

// --------------------------------------------------------------------------
// 5. Underestimation of the noisy-min critic and its correction.
// --------------------------------------------------------------------------
Outcome criterion5() {
  const BiasProbeConfig cfg;  // six seeds, defaults
  const BiasFigureResult res = run_bias_figure(cfg);
  double baseline_mean = 0.0;
  int smaller = 0;
  for (const auto& s : res.summaries) {
    baseline_mean += s.baseline_final_third;
    if (std::abs(s.mice_final_third) < std::abs(s.baseline_final_third)) ++smaller;
  }
  baseline_mean /= static_cast<double>(res.summaries.size());
  Outcome out;
  out.pass = res.summaries.size() == 6 && baseline_mean < 0.0 && smaller >= 5;
  out.detail = "uncorrected mean final-third bias " + fmt(baseline_mean) +
               " (<0); corrected |bias| smaller on " + std::to_string(smaller) + "/6 seeds (need 5)";
  return out;
}

// --------------------------------------------------------------------------
// 6. Recorded-target replay of the error recursion.
// --------------------------------------------------------------------------
Outcome criterion6() {
  Rng rng(606);
  double worst = 0.0;
  const int streams = 20;
  const int m = 100;
  for (int stream = 0; stream < streams; ++stream) {
    const int S = 2 + static_cast<int>(rng.next_u64() % 5);
    const int A = 2 + static_cast<int>(rng.next_u64() % 3);
    EiQTable table(S, A, 0.05 + 0.25 * rng.uniform(), 0.9);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) table.q(s, a) = rng.normal();
    }
    const int s0 = static_cast<int>(rng.next_u64() % S);
    const int a0 = static_cast<int>(rng.next_u64() % A);
    const double q_star = rng.normal();
    const double gap_start = q_star - table.q(s0, a0);
    const double alpha = table.alpha;
    std::vector<double> targets;
    for (int i = 0; i < m; ++i) {
      Transition t;
      t.state = s0;
      t.action = a0;
      t.cost = rng.uniform();
      t.intrinsic_cost = rng.uniform();
      t.next_state = static_cast<int>(rng.next_u64() % S);
      Eigen::VectorXd dist(A);
      for (int a = 0; a < A; ++a) dist(a) = rng.uniform() + 1e-3;
      dist /= dist.sum();
      targets.push_back(ei_q_update(table, t, rng.uniform(), dist));
      // Replay: gap after i+1 hits from the recorded targets alone.
      double predicted = std::pow(1.0 - alpha, i + 1) * gap_start;
      for (int j = 0; j <= i; ++j) {
        predicted += alpha * std::pow(1.0 - alpha, i - j) * (q_star - targets[static_cast<std::size_t>(j)]);
      }
      const double actual = q_star - table.q(s0, a0);
      worst = std::max(worst, std::abs(predicted - actual));
    }
  }
  Outcome out;
  out.pass = worst <= 1e-10;
  out.detail = std::to_string(streams) + " random streams, " + std::to_string(m) +
               " recorded-target updates each, max replay error " + fmt(worst) + " (tol 1e-10)";
  return out;
}

// --------------------------------------------------------------------------
// 7. Step-subproblem solver: dual optimality, gradient fidelity, recovery.
// --------------------------------------------------------------------------
struct DualFixture {
  SoftmaxPolicy policy;
  std::vector<int> states;
  GradientBundle bundle;
  TrustRegionConfig cfg;
};

DualFixture random_dual_fixture(std::uint64_t seed, double c_value) {
  DualFixture fx;
  Eigen::MatrixXd feats = Eigen::MatrixXd::Identity(4, 4);
  fx.policy = make_softmax_policy(feats, 3);
  Rng rng(seed);
  for (int i = 0; i < fx.policy.theta.size(); ++i) fx.policy.theta(i) = 0.5 * rng.normal();
  for (int s = 0; s < 4; ++s) {
    fx.states.push_back(s);
    fx.states.push_back(s);
  }
  fx.bundle.g = Eigen::VectorXd(fx.policy.param_dim());
  fx.bundle.g_c_ei = Eigen::VectorXd(fx.policy.param_dim());
  for (int i = 0; i < fx.bundle.g.size(); ++i) {
    fx.bundle.g(i) = rng.normal();
    fx.bundle.g_c_ei(i) = rng.normal();
  }
  fx.bundle.c_surplus = c_value;
  return fx;
}

Outcome criterion7() {
  // (a) The solved dual beats a dense 200 x 200 multiplier grid.
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; k < 50; ++k) {
    Rng rng(700 + k);
    const double c = -0.3 * rng.uniform() - 0.01;  // strictly feasible instances
    DualFixture fx = random_dual_fixture(7000 + 13 * k, c);
    const FisherOperator fvp(fx.policy, fx.states, fx.cfg.cg_damping);
    const DualSolution sol = cpo_dual_solve(fx.bundle, fvp, fx.cfg);
    if (!sol.feasible) {
      return {false, "instance " + std::to_string(k) + " unexpectedly infeasible"};
    }
    const double lam_hi = 3.0 * sol.lambda_star + 1.0;
    const double nu_hi = 3.0 * sol.nu_star + 1.0;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 1; i <= 200; ++i) {
      const double lam = lam_hi * static_cast<double>(i) / 200.0;
      for (int j = 0; j < 200; ++j) {
        const double nu = nu_hi * static_cast<double>(j) / 199.0;
        best = std::max(best,
                        cpo_dual_value(lam, nu, sol.q, sol.u, sol.v, c, fx.cfg.phi));
      }
    }
    worst_gap = std::max(worst_gap, best - sol.dual_value);
  }
  if (!(worst_gap <= 1e-6)) {
    return {false, "grid beat the dual solver by " + fmt(worst_gap)};
  }

  // (b) Analytic surrogate gradients match central finite differences.
  SoftmaxPolicy policy = random_dual_fixture(7777, 0.0).policy;
  PolicyBatch batch;
  batch.gamma = 0.9;
  batch.j_c_hat = 1.0;
  Rng rng(7778);
  for (int i = 0; i < 4000; ++i) {
    const int s = static_cast<int>(rng.next_u64() % 4);
    const Eigen::VectorXd dist = action_dist(policy, s);
    std::vector<double> w(dist.data(), dist.data() + dist.size());
    const int a = rng.categorical(w);
    batch.states.push_back(s);
    batch.actions.push_back(a);
    batch.adv_r.push_back(rng.normal());
    batch.adv_ei.push_back(rng.normal() + 0.2);
    batch.logp_old.push_back(action_log_probs(policy, s)(a));
  }
  const GradientBundle bundle = surrogate_gradients(policy, batch, 0.5);
  const double h = 1e-5;
  double worst_rel = 0.0;
  for (int i = 0; i < policy.theta.size(); ++i) {
    SoftmaxPolicy plus = policy, minus = policy;
    plus.theta(i) += h;
    minus.theta(i) -= h;
    const double fd_r =
        (surrogate_reward_value(plus, batch) - surrogate_reward_value(minus, batch)) / (2.0 * h);
    const double fd_c = (surrogate_constraint_value(plus, batch, 0.5) -
                         surrogate_constraint_value(minus, batch, 0.5)) /
                        (2.0 * h);
    worst_rel = std::max(worst_rel,
                         std::abs(bundle.g(i) - fd_r) / std::max(1.0, std::abs(bundle.g(i))));
    worst_rel = std::max(
        worst_rel, std::abs(bundle.g_c_ei(i) - fd_c) / std::max(1.0, std::abs(bundle.g_c_ei(i))));
  }
  if (!(worst_rel <= 1e-4)) {
    return {false, "finite-difference mismatch " + fmt(worst_rel) + " (tol 1e-4)"};
  }

  // (c) The recovery direction saturates the trust region.
  double worst_sat = 0.0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    DualFixture fx = random_dual_fixture(7900 + 11 * k, 2.0);
    const FisherOperator fvp(fx.policy, fx.states, fx.cfg.cg_damping);
    const Eigen::VectorXd step = recovery_step(fx.bundle, fvp, fx.cfg);
    const double quad = 0.5 * step.dot(fvp(step));
    worst_sat = std::max(worst_sat, std::abs(quad - fx.cfg.phi) / fx.cfg.phi);
  }
  Outcome out;
  out.pass = worst_sat <= 1e-6;
  out.detail = "dual within " + fmt(std::max(worst_gap, 0.0)) +
               " of a 200x200 grid on 50 instances; max FD gradient error " + fmt(worst_rel) +
               "; recovery trust-region saturation off by " + fmt(worst_sat) + " rel";
  return out;
}

// --------------------------------------------------------------------------
// 8. Direction of effect on safety: fewer violating iterations, same return.
// --------------------------------------------------------------------------
Outcome criterion8() {
  ExperimentConfig mice_cfg = default_config();
  ExperimentConfig plain_cfg = mice_cfg;
  plain_cfg.optimizer = OptimizerKind::kCpo;
  const TrainResult mice_res = train(mice_cfg);
  const TrainResult plain_res = train(plain_cfg);
  if (mice_res.runs.size() != 6 || plain_res.runs.size() != 6) {
    return {false, "expected six seeds per optimizer"};
  }
  int wins = 0;
  std::ostringstream per_seed;
  double mice_ret = 0.0, plain_ret = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    int v_mice = 0, v_plain = 0;
    for (const auto& row : mice_res.runs[i].metrics) v_mice += row.violation ? 1 : 0;
    for (const auto& row : plain_res.runs[i].metrics) v_plain += row.violation ? 1 : 0;
    if (v_mice <= v_plain) ++wins;
    per_seed << (i ? " " : "") << v_mice << "<=" << v_plain;
    const auto tail_mean = [](const std::vector<MetricsRow>& rows) {
      double acc = 0.0;
      for (std::size_t j = rows.size() - 10; j < rows.size(); ++j) acc += rows[j].j_r_exact;
      return acc / 10.0;
    };
    mice_ret += tail_mean(mice_res.runs[i].metrics) / 6.0;
    plain_ret += tail_mean(plain_res.runs[i].metrics) / 6.0;
  }
  const bool return_ok = std::abs(mice_ret - plain_ret) <= 0.10 * std::abs(plain_ret);
  Outcome out;
  out.pass = wins >= 5 && return_ok;
  out.detail = "violation iterations per seed (corrected<=plain): " + per_seed.str() + "; " +
               std::to_string(wins) + "/6 seeds (need 5); final returns " + fmt(mice_ret) +
               " vs " + fmt(plain_ret) + " (within 10%: " + (return_ok ? "yes" : "no") + ")";
  return out;
}

// --------------------------------------------------------------------------
// 9. Byte-identical reruns of every artifact-producing pipeline.
// --------------------------------------------------------------------------
Outcome criterion9() {
  namespace fs = std::filesystem;
  const fs::path base = "acceptance_determinism";
  fs::remove_all(base);
  std::vector<std::string> mismatches;

  ExperimentConfig cfg = default_config();
  cfg.seeds = {1, 2};
  cfg.iterations = 10;
  emit_outputs((base / "train_a").string(), cfg, train(cfg));
  emit_outputs((base / "train_b").string(), cfg, train(cfg));
  for (const char* name : {"metrics_1.csv", "metrics_2.csv", "trace_1.csv", "trace_2.csv",
                           "config.json", "return.svg", "cost.svg"}) {
    if (slurp(base / "train_a" / name) != slurp(base / "train_b" / name)) {
      mismatches.push_back(std::string("train/") + name);
    }
  }

  emit_bound_reports((base / "verify_a").string(), run_lemma1_suite(5, 7));
  emit_bound_reports((base / "verify_b").string(), run_lemma1_suite(5, 7));
  if (slurp(base / "verify_a" / "bounds.csv") != slurp(base / "verify_b" / "bounds.csv")) {
    mismatches.push_back("verify/bounds.csv");
  }

  const CmdpSpec fixture = load_cmdp(fixture_file("convergence_chain.json"));
  emit_convergence_outputs((base / "conv_a").string(), convergence_suite(fixture, 50000, 5));
  emit_convergence_outputs((base / "conv_b").string(), convergence_suite(fixture, 50000, 5));
  if (slurp(base / "conv_a" / "convergence.csv") != slurp(base / "conv_b" / "convergence.csv")) {
    mismatches.push_back("converge/convergence.csv");
  }

  BiasProbeConfig bias_cfg;
  bias_cfg.iterations = 20;
  bias_cfg.seeds = {11, 12};
  emit_bias_outputs((base / "bias_a").string(), bias_cfg, run_bias_figure(bias_cfg));
  emit_bias_outputs((base / "bias_b").string(), bias_cfg, run_bias_figure(bias_cfg));
  if (slurp(base / "bias_a" / "bias_summary.csv") != slurp(base / "bias_b" / "bias_summary.csv")) {
    mismatches.push_back("probe-bias/bias_summary.csv");
  }

  fs::remove_all(base);
  Outcome out;
  out.pass = mismatches.empty();
  if (out.pass) {
    out.detail = "train, verify, converge and probe-bias reruns byte-identical";
  } else {
    out.detail = "differing outputs:";
    for (const auto& m : mismatches) out.detail += " " + m;
  }
  return out;
}

struct Criterion {
  int number;
  const char* label;
  Outcome (*run)();
  double time_limit_s;  // 0 = unlimited
};

const Criterion kCriteria[] = {
    {1, "exact cost-difference identity", criterion1, 10.0},
    {2, "visitation-shift upper bound", criterion2, 30.0},
    {3, "per-update cost bound during training", criterion3, 300.0},
    {4, "critic convergence to the exact fixed point", criterion4, 120.0},
    {5, "noisy-min underestimation and its correction", criterion5, 600.0},
    {6, "recorded-target error recursion replay", criterion6, 0.0},
    {7, "step subproblem: dual, gradients, recovery", criterion7, 0.0},
    {8, "fewer violations at matched return", criterion8, 1800.0},
    {9, "byte-identical reruns", criterion9, 0.0},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  bool all_pass = true;
  for (const Criterion& c : kCriteria) {
    if (!selected.empty() && selected.count(c.number) == 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0.0 && secs > c.time_limit_s) {
      out.pass = false;
      out.detail += " [exceeded " + fmt(c.time_limit_s) + "s budget]";
    }
    std::cout << (out.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": " << c.label
              << " — " << out.detail << " (" << fmt(secs) << "s)" << std::endl;
    if (!out.pass) all_pass = false;
  }
  return all_pass ? 0 : 1;
}