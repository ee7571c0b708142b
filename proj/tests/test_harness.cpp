#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mice/harness.hpp"

using namespace mice;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = default_config();
  cfg.grid.width = 4;
  cfg.grid.height = 4;
  cfg.grid.n_hazards = 2;
  cfg.grid.d = 1.0;
  cfg.grid.env_seed = 5;
  cfg.seeds = {1, 2};
  cfg.iterations = 4;
  cfg.batch_episodes = 6;
  cfg.horizon = 60;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tests run from the build tree; direct invocation may start elsewhere.
std::string fixture_path(const std::string& name) {
  for (const char* prefix : {"../../fixtures/", "fixtures/", "../fixtures/"}) {
    const std::string candidate = prefix + name;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return name;
}

}  // namespace

TEST_CASE("config survives a json round trip byte-for-byte") {
  const ExperimentConfig cfg = default_config();
  const nlohmann::json j = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back).dump(2) == j.dump(2));
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.grid.env_seed == cfg.grid.env_seed);
  CHECK(back.trust.phi == cfg.trust.phi);
  // Partial configs inherit defaults; junk roots are rejected.
  const ExperimentConfig sparse = config_from_json(nlohmann::json::object());
  CHECK(sparse.batch_episodes == cfg.batch_episodes);
  CHECK_THROWS(config_from_json(nlohmann::json::array()));
  nlohmann::json bad = nlohmann::json::object();
  bad["optimizer"] = "sgd";
  CHECK_THROWS(config_from_json(bad));
}

TEST_CASE("environment threshold follows the active environment") {
  ExperimentConfig cfg = default_config();
  cfg.grid.d = 5.0;
  cfg.chain.d = 2.0;
  cfg.env_kind = EnvKind::kGrid;
  CHECK(env_threshold(cfg) == 5.0);
  cfg.env_kind = EnvKind::kChain;
  CHECK(env_threshold(cfg) == 2.0);
}

TEST_CASE("training twice with one config yields byte-identical outputs") {
  const ExperimentConfig cfg = tiny_config();
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  REQUIRE(a.runs.size() == 2);
  REQUIRE(b.runs.size() == 2);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    CHECK((a.runs[i].final_theta - b.runs[i].final_theta).lpNorm<Eigen::Infinity>() == 0.0);
  }
  const std::filesystem::path base = std::filesystem::path("harness_determinism");
  std::filesystem::remove_all(base);
  emit_outputs((base / "one").string(), cfg, a);
  emit_outputs((base / "two").string(), cfg, b);
  for (const char* name : {"config.json", "metrics_1.csv", "metrics_2.csv", "trace_1.csv",
                           "trace_2.csv", "return.svg", "cost.svg", "beta.svg",
                           "intrinsic.svg"}) {
    CHECK(slurp(base / "one" / name) == slurp(base / "two" / name));
    CHECK(!slurp(base / "one" / name).empty());
  }
  std::filesystem::remove_all(base);
}

TEST_CASE("metrics rows carry coherent diagnostics") {
  const ExperimentConfig cfg = tiny_config();
  const TrainResult res = train(cfg);
  for (const auto& run : res.runs) {
    REQUIRE(static_cast<int>(run.metrics.size()) == cfg.iterations);
    for (const auto& row : run.metrics) {
      CHECK(std::isfinite(row.j_r_hat));
      CHECK(std::isfinite(row.j_c_exact));
      CHECK(row.violation == (row.j_c_exact > cfg.grid.d));
      CHECK(row.mean_intrinsic >= 0.0);
      CHECK((row.branch == "feasible" || row.branch == "recovery" || row.branch == "rejected"));
      CHECK(row.measured_kl <= cfg.trust.phi * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("with no hazards the corrected optimizer collapses onto plain cpo") {
  ExperimentConfig cfg = tiny_config();
  cfg.grid.n_hazards = 0;
  cfg.seeds = {3};
  cfg.iterations = 5;
  ExperimentConfig plain = cfg;
  plain.optimizer = OptimizerKind::kCpo;
  const TrainResult mice_run = train(cfg);
  const TrainResult cpo_run = train(plain);
  REQUIRE(mice_run.runs.size() == 1);
  REQUIRE(cpo_run.runs.size() == 1);
  CHECK((mice_run.runs[0].final_theta - cpo_run.runs[0].final_theta)
            .lpNorm<Eigen::Infinity>() == 0.0);
  for (int i = 0; i < cfg.iterations; ++i) {
    CHECK(mice_run.runs[0].metrics[static_cast<std::size_t>(i)].j_r_hat ==
          cpo_run.runs[0].metrics[static_cast<std::size_t>(i)].j_r_hat);
    CHECK(mice_run.runs[0].metrics[static_cast<std::size_t>(i)].memory_size == 0);
    CHECK(mice_run.runs[0].metrics[static_cast<std::size_t>(i)].mean_intrinsic == 0.0);
    CHECK(cpo_run.runs[0].metrics[static_cast<std::size_t>(i)].beta == 0.0);
  }
}

TEST_CASE("beta stays pinned to zero for the uncorrected optimizers") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {4};
  cfg.optimizer = OptimizerKind::kPidLag;
  const TrainResult res = train(cfg);
  for (const auto& row : res.runs[0].metrics) {
    CHECK(row.beta == 0.0);
    CHECK(row.mean_intrinsic == 0.0);
    CHECK(row.branch == "pid");
    CHECK(row.lambda >= 0.0);
  }
}

TEST_CASE("constant intrinsic mode charges the configured constant from iteration one") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {5};
  cfg.intrinsic_mode = IntrinsicMode::kConstant;
  cfg.intrinsic_constant = 0.25;
  const TrainResult res = train(cfg);
  const auto& rows = res.runs[0].metrics;
  CHECK(rows[0].mean_intrinsic == 0.0);  // nothing to remember yet
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].mean_intrinsic == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(rows[i].memory_size == 0);
  }
}

TEST_CASE("identity suite reports match an independent exact recomputation") {
  const std::vector<BoundReport> reports = run_lemma1_suite(3, 42);
  REQUIRE(reports.size() == 12);  // four fixtures, three pairs each
  for (const auto& r : reports) {
    CHECK(r.holds);
    CHECK(std::abs(r.lhs - r.rhs) <= 1e-9 * std::max(1.0, std::abs(r.lhs)));
  }

  // Recompute one report from scratch: both sides of the identity via two
  // independent exact solves.
  const CmdpSpec spec = make_random_cmdp(6, 3, 0.9, 2024);
  const PolicyTable pi = make_random_policy(6, 3, 7);
  const PolicyTable pi_prime = make_random_policy(6, 3, 8);
  Eigen::VectorXd ci(6);
  for (int s = 0; s < 6; ++s) ci(s) = 0.1 * (s + 1);
  const double beta = 0.7;
  const BoundReport rep = lemma1_identity(spec, pi, pi_prime, ci, beta);

  // The identity anchors at the plain extrinsic cost of the old policy: the
  // combined cost of pi' equals J_C(pi) plus the visitation-weighted sum of
  // combined-cost advantages taken against the extrinsic cost value of pi.
  Eigen::MatrixXd cost_ei = spec.C;
  for (int s = 0; s < spec.n_states; ++s) cost_ei.row(s).array() += beta * ci(s);
  const ExactCostValues ei_new = exact_eval_with_cost(spec, pi_prime, cost_ei);
  const ExactValues old_vals = exact_policy_eval(spec, pi);
  const double lhs = ei_new.j - old_vals.j_c;
  const Eigen::VectorXd d_new = discounted_visitation(spec, pi_prime);
  double rhs = 0.0;
  for (int s = 0; s < spec.n_states; ++s) {
    for (int a = 0; a < spec.n_actions; ++a) {
      double exp_next = 0.0;
      for (int sp = 0; sp < spec.n_states; ++sp) {
        exp_next += spec.P[static_cast<std::size_t>(a)](s, sp) * old_vals.v_c(sp);
      }
      const double adv = cost_ei(s, a) + spec.gamma * exp_next - old_vals.v_c(s);
      rhs += d_new(s) * pi_prime(s, a) * adv;
    }
  }
  rhs /= (1.0 - spec.gamma);
  CHECK(rep.lhs == doctest::Approx(lhs).epsilon(1e-10));
  CHECK(rep.rhs == doctest::Approx(rhs).epsilon(1e-10));
  CHECK(std::abs(lhs - rhs) <= 1e-9);
}

TEST_CASE("trust-region bound suite holds with exact divergences") {
  const std::vector<BoundReport> reports = run_theorem1_suite(6, 99);
  REQUIRE(reports.size() == 24);
  for (const auto& r : reports) {
    CHECK(r.holds);
    CHECK(r.slack >= -1e-8 * std::max(1.0, std::abs(r.rhs)));
  }
}

TEST_CASE("per-update cost bound holds on every accepted feasible step") {
  ExperimentConfig cfg = default_config();
  cfg.seeds = {1};
  cfg.iterations = 25;
  const Theorem2SuiteResult res = run_theorem2_suite(cfg);
  CHECK(res.feasible_accepted == static_cast<int>(res.reports.size()));
  CHECK(res.feasible_accepted + res.recovery_steps + res.rejected_steps + res.pid_steps ==
        cfg.iterations);
  CHECK(res.pid_steps == 0);
  CHECK(res.feasible_accepted > 0);
  for (const auto& r : res.reports) {
    CHECK(r.holds);
    CHECK(std::isfinite(r.lhs));
    CHECK(std::isfinite(r.rhs));
  }
}

TEST_CASE("critic convergence trace descends toward the exact fixed point") {
  const CmdpSpec fixture = load_cmdp(fixture_path("convergence_chain.json"));
  const ConvergenceReport rep = convergence_suite(fixture, 200000, 7);
  REQUIRE(!rep.trace.empty());
  CHECK(rep.trace.front().err_beta_zero > rep.final_err_beta_zero);
  CHECK(rep.final_err_beta_zero < 0.05);
  CHECK(rep.final_err_beta_scheduled < 0.2);
  CHECK(rep.const_fixed_point_gap > 0.0);
  CHECK(rep.ci_table.size() == fixture.n_states);
  // The trace is cumulative in updates and ends at the requested count.
  for (std::size_t i = 1; i < rep.trace.size(); ++i) {
    CHECK(rep.trace[i].updates > rep.trace[i - 1].updates);
  }
  CHECK(rep.trace.back().updates == 200000);
}

TEST_CASE("oracle report matches direct exact evaluation") {
  const CmdpSpec spec = make_random_cmdp(4, 2, 0.85, 11);
  const PolicyTable pol = make_random_policy(4, 2, 12);
  const ExactValues ex = exact_policy_eval(spec, pol);
  const nlohmann::json j = oracle_report(spec, pol);
  CHECK(j.at("j_r").get<double>() == doctest::Approx(ex.j_r).epsilon(1e-14));
  CHECK(j.at("j_c").get<double>() == doctest::Approx(ex.j_c).epsilon(1e-14));
  CHECK(j.at("feasible").get<bool>() == (ex.j_c <= spec.d));
  REQUIRE(j.at("v_c").size() == 4);
  for (int s = 0; s < 4; ++s) {
    CHECK(j.at("v_c").at(static_cast<std::size_t>(s)).get<double>() ==
          doctest::Approx(ex.v_c(s)).epsilon(1e-14));
  }
  const double dsum = j.at("d_pi").at(0).get<double>() + j.at("d_pi").at(1).get<double>() +
                      j.at("d_pi").at(2).get<double>() + j.at("d_pi").at(3).get<double>();
  CHECK(dsum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("policy files are validated on load") {
  const CmdpSpec spec = make_random_cmdp(3, 2, 0.9, 21);
  nlohmann::json good;
  good["policy"] = {{0.5, 0.5}, {1.0, 0.0}, {0.25, 0.75}};
  const PolicyTable pol = policy_from_json(good, spec);
  CHECK(pol(1, 0) == 1.0);

  CHECK_THROWS(policy_from_json(nlohmann::json::array(), spec));
  nlohmann::json missing;
  missing["policies"] = {{1.0, 0.0}};
  CHECK_THROWS(policy_from_json(missing, spec));
  nlohmann::json short_rows;
  short_rows["policy"] = {{0.5, 0.5}, {1.0, 0.0}};
  CHECK_THROWS(policy_from_json(short_rows, spec));
  nlohmann::json bad_sum;
  bad_sum["policy"] = {{0.9, 0.0}, {1.0, 0.0}, {0.25, 0.75}};
  CHECK_THROWS(policy_from_json(bad_sum, spec));
}

TEST_CASE("random verification fixtures are valid cmdps with stochastic policies") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const CmdpSpec spec = make_random_cmdp(7, 3, 0.92, seed);
    spec.validate();
    const PolicyTable pol = make_random_policy(7, 3, seed + 50);
    validate_policy(spec, pol);
    // Distinct seeds give distinct kernels.
    const CmdpSpec other = make_random_cmdp(7, 3, 0.92, seed + 1000);
    CHECK((spec.P[0] - other.P[0]).lpNorm<Eigen::Infinity>() > 0.0);
  }
}

TEST_CASE("csv fields render with full round-trip precision") {
  for (double v : {1.0 / 3.0, 2.0 / 7.0, 1e-17, -123456.789012345678, 0.0}) {
    const std::string s = format_csv_field(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
}