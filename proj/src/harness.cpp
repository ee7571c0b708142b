#include "mice/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mice/json_io.hpp"
#include "mice/rng.hpp"
#include "mice/svg_plot.hpp"

namespace mice {
namespace {

std::string optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kMiceCpo: return "mice-cpo";
    case OptimizerKind::kMicePidLag: return "mice-pidlag";
    case OptimizerKind::kCpo: return "cpo";
    case OptimizerKind::kPidLag: return "pidlag";
  }
  throw std::runtime_error("unknown optimizer kind");
}

OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "mice-cpo") return OptimizerKind::kMiceCpo;
  if (s == "mice-pidlag") return OptimizerKind::kMicePidLag;
  if (s == "cpo") return OptimizerKind::kCpo;
  if (s == "pidlag") return OptimizerKind::kPidLag;
  throw std::runtime_error("unknown optimizer '" + s +
                           "' (expected mice-cpo, mice-pidlag, cpo or pidlag)");
}

std::string env_name(EnvKind k) {
  return k == EnvKind::kGrid ? "grid" : "chain";
}

EnvKind env_from_name(const std::string& s) {
  if (s == "grid") return EnvKind::kGrid;
  if (s == "chain") return EnvKind::kChain;
  throw std::runtime_error("unknown env '" + s + "' (expected grid or chain)");
}

std::string feature_name(FeatureMode m) {
  return m == FeatureMode::kOneHot ? "onehot" : "coords";
}

FeatureMode feature_from_name(const std::string& s) {
  if (s == "onehot") return FeatureMode::kOneHot;
  if (s == "coords") return FeatureMode::kCoords;
  throw std::runtime_error("unknown feature mode '" + s + "' (expected onehot or coords)");
}

std::string intrinsic_name(IntrinsicMode m) {
  return m == IntrinsicMode::kMemory ? "memory" : "constant";
}

IntrinsicMode intrinsic_from_name(const std::string& s) {
  if (s == "memory") return IntrinsicMode::kMemory;
  if (s == "constant") return IntrinsicMode::kConstant;
  throw std::runtime_error("unknown intrinsic mode '" + s + "' (expected memory or constant)");
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

bool uses_intrinsic(OptimizerKind k) {
  return k == OptimizerKind::kMiceCpo || k == OptimizerKind::kMicePidLag;
}

bool uses_trust_region(OptimizerKind k) {
  return k == OptimizerKind::kMiceCpo || k == OptimizerKind::kCpo;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.horizon = 200;  // gridworld episode cap
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["env"] = env_name(cfg.env_kind);
  j["grid"] = {{"width", cfg.grid.width},
               {"height", cfg.grid.height},
               {"n_hazards", cfg.grid.n_hazards},
               {"hazard_cost", cfg.grid.hazard_cost},
               {"goal_reward", cfg.grid.goal_reward},
               {"step_reward", cfg.grid.step_reward},
               {"slip_prob", cfg.grid.slip_prob},
               {"env_seed", cfg.grid.env_seed},
               {"gamma", cfg.grid.gamma},
               {"d", cfg.grid.d}};
  j["chain"] = {{"n_positions", cfg.chain.n_positions},
                {"n_velocities", cfg.chain.n_velocities},
                {"speed_limit", cfg.chain.speed_limit},
                {"overspeed_cost", cfg.chain.overspeed_cost},
                {"reward_scale", cfg.chain.reward_scale},
                {"gamma", cfg.chain.gamma},
                {"d", cfg.chain.d}};
  j["optimizer"] = optimizer_name(cfg.optimizer);
  j["seeds"] = cfg.seeds;
  j["iterations"] = cfg.iterations;
  j["batch_episodes"] = cfg.batch_episodes;
  j["horizon"] = cfg.horizon;
  j["gae_lambda"] = cfg.gae_lambda;
  j["trust_region"] = {{"phi", cfg.trust.phi},
                       {"cg_damping", cfg.trust.cg_damping},
                       {"cg_iters", cfg.trust.cg_iters},
                       {"cg_tol", cfg.trust.cg_tol},
                       {"backtrack_coef", cfg.trust.backtrack_coef},
                       {"max_backtracks", cfg.trust.max_backtracks}};
  j["pid"] = {{"kp", cfg.pid.kp},
              {"ki", cfg.pid.ki},
              {"kd", cfg.pid.kd},
              {"init_lambda", cfg.pid.init_lambda}};
  j["actor_lr"] = cfg.actor_lr;
  nlohmann::json mem = {{"xi", cfg.memory.xi},
                        {"k", cfg.memory.k},
                        {"projection_dim", cfg.memory.projection_dim},
                        {"projection_seed", cfg.memory.projection_seed}};
  if (cfg.memory.capacity.has_value()) {
    mem["capacity"] = *cfg.memory.capacity;
  } else {
    mem["capacity"] = nullptr;
  }
  j["memory"] = mem;
  j["critic"] = {{"alpha", cfg.critic.alpha}, {"beta0", cfg.critic.beta0}};
  j["intrinsic_mode"] = intrinsic_name(cfg.intrinsic_mode);
  j["intrinsic_constant"] = cfg.intrinsic_constant;
  j["policy_features"] = feature_name(cfg.policy_features);
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg = default_config();
  if (!j.is_object()) throw std::runtime_error("config root must be a JSON object");
  if (j.contains("env")) cfg.env_kind = env_from_name(j.at("env").get<std::string>());
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    maybe_get(g, "width", cfg.grid.width);
    maybe_get(g, "height", cfg.grid.height);
    maybe_get(g, "n_hazards", cfg.grid.n_hazards);
    maybe_get(g, "hazard_cost", cfg.grid.hazard_cost);
    maybe_get(g, "goal_reward", cfg.grid.goal_reward);
    maybe_get(g, "step_reward", cfg.grid.step_reward);
    maybe_get(g, "slip_prob", cfg.grid.slip_prob);
    maybe_get(g, "env_seed", cfg.grid.env_seed);
    maybe_get(g, "gamma", cfg.grid.gamma);
    maybe_get(g, "d", cfg.grid.d);
  }
  if (j.contains("chain")) {
    const auto& c = j.at("chain");
    maybe_get(c, "n_positions", cfg.chain.n_positions);
    maybe_get(c, "n_velocities", cfg.chain.n_velocities);
    maybe_get(c, "speed_limit", cfg.chain.speed_limit);
    maybe_get(c, "overspeed_cost", cfg.chain.overspeed_cost);
    maybe_get(c, "reward_scale", cfg.chain.reward_scale);
    maybe_get(c, "gamma", cfg.chain.gamma);
    maybe_get(c, "d", cfg.chain.d);
  }
  if (j.contains("optimizer"))
    cfg.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  maybe_get(j, "iterations", cfg.iterations);
  maybe_get(j, "batch_episodes", cfg.batch_episodes);
  maybe_get(j, "horizon", cfg.horizon);
  maybe_get(j, "gae_lambda", cfg.gae_lambda);
  if (j.contains("trust_region")) {
    const auto& t = j.at("trust_region");
    maybe_get(t, "phi", cfg.trust.phi);
    maybe_get(t, "cg_damping", cfg.trust.cg_damping);
    maybe_get(t, "cg_iters", cfg.trust.cg_iters);
    maybe_get(t, "cg_tol", cfg.trust.cg_tol);
    maybe_get(t, "backtrack_coef", cfg.trust.backtrack_coef);
    maybe_get(t, "max_backtracks", cfg.trust.max_backtracks);
  }
  if (j.contains("pid")) {
    const auto& p = j.at("pid");
    maybe_get(p, "kp", cfg.pid.kp);
    maybe_get(p, "ki", cfg.pid.ki);
    maybe_get(p, "kd", cfg.pid.kd);
    maybe_get(p, "init_lambda", cfg.pid.init_lambda);
  }
  maybe_get(j, "actor_lr", cfg.actor_lr);
  if (j.contains("memory")) {
    const auto& m = j.at("memory");
    maybe_get(m, "xi", cfg.memory.xi);
    maybe_get(m, "k", cfg.memory.k);
    maybe_get(m, "projection_dim", cfg.memory.projection_dim);
    maybe_get(m, "projection_seed", cfg.memory.projection_seed);
    if (m.contains("capacity")) {
      if (m.at("capacity").is_null()) {
        cfg.memory.capacity.reset();
      } else {
        cfg.memory.capacity = m.at("capacity").get<std::size_t>();
      }
    }
  }
  if (j.contains("critic")) {
    const auto& c = j.at("critic");
    maybe_get(c, "alpha", cfg.critic.alpha);
    maybe_get(c, "beta0", cfg.critic.beta0);
  }
  if (j.contains("intrinsic_mode"))
    cfg.intrinsic_mode = intrinsic_from_name(j.at("intrinsic_mode").get<std::string>());
  maybe_get(j, "intrinsic_constant", cfg.intrinsic_constant);
  if (j.contains("policy_features"))
    cfg.policy_features = feature_from_name(j.at("policy_features").get<std::string>());
  if (cfg.iterations <= 0) throw std::runtime_error("iterations must be positive");
  if (cfg.batch_episodes <= 0) throw std::runtime_error("batch_episodes must be positive");
  if (cfg.horizon <= 0) throw std::runtime_error("horizon must be positive");
  if (cfg.seeds.empty()) throw std::runtime_error("seeds must be non-empty");
  return cfg;
}

namespace {

struct EnvBundle {
  CmdpSpec spec;
  Eigen::MatrixXd features;  // memory / embedding features (coords flavor)
  Eigen::MatrixXd policy_features;
};

EnvBundle build_env(const ExperimentConfig& cfg) {
  EnvBundle out;
  if (cfg.env_kind == EnvKind::kGrid) {
    GridHazardWorld world(cfg.grid);
    out.spec = world.to_cmdp();
    out.features = world.state_features(FeatureMode::kCoords);
    out.policy_features = world.state_features(cfg.policy_features);
  } else {
    ChainVelocityWorld world(cfg.chain);
    out.spec = world.to_cmdp();
    out.features = world.state_features(FeatureMode::kCoords);
    out.policy_features = world.state_features(cfg.policy_features);
  }
  return out;
}

// Refit a per-state value table toward lambda-return targets computed with
// the previous table; states missing from the batch keep their old value.
// The cost table estimates the extrinsic cost value, the baseline of the
// combined-cost advantages.
void refit_values(const std::vector<Trajectory>& batch, Eigen::VectorXd& v,
                  bool use_cost, double gamma, double lambda) {
  std::map<int, std::pair<double, int>> sums;
  for (const auto& traj : batch) {
    const int T = static_cast<int>(traj.size());
    double gae = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      const auto& tr = traj[static_cast<std::size_t>(t)];
      const double signal = use_cost ? tr.cost : tr.reward;
      const double v_next = tr.terminal ? 0.0 : v(tr.next_state);
      const double delta = signal + gamma * v_next - v(tr.state);
      gae = delta + gamma * lambda * (tr.terminal ? 0.0 : gae);
      const double target = v(tr.state) + gae;
      auto& slot = sums[tr.state];
      slot.first += target;
      slot.second += 1;
    }
  }
  for (const auto& [s, acc] : sums) {
    v(s) = acc.first / acc.second;
  }
}

struct OptimizerScratch {
  PidState pid;
};

struct StepOutcome {
  std::string branch;
  bool accepted = false;
  double lambda = 0.0;
  double nu = 0.0;
  double q = 0.0;
  double u = 0.0;
  double v = 0.0;
  double measured_kl = 0.0;
  Eigen::VectorXd theta_after;
};

StepOutcome optimizer_step(const ExperimentConfig& cfg, SoftmaxPolicy& policy,
                           const PolicyBatch& batch, const GradientBundle& bundle,
                           OptimizerScratch& scratch) {
  StepOutcome out;
  if (uses_trust_region(cfg.optimizer)) {
    FisherOperator fvp(policy, batch.states, cfg.trust.cg_damping);
    DualSolution sol = cpo_dual_solve(bundle, fvp, cfg.trust);
    out.q = sol.q;
    out.u = sol.u;
    out.v = sol.v;
    if (sol.feasible) {
      LineSearchResult ls = line_search_apply(policy, sol.step, batch, bundle, cfg.trust,
                                              StepKind::kFeasible, env_threshold(cfg));
      out.branch = ls.accepted ? "feasible" : "rejected";
      out.accepted = ls.accepted;
      out.lambda = sol.lambda_star;
      out.nu = sol.nu_star;
      out.measured_kl = ls.measured_kl;
      policy.theta = ls.theta;
    } else {
      Eigen::VectorXd rec = recovery_step(bundle, fvp, cfg.trust);
      LineSearchResult ls = line_search_apply(policy, rec, batch, bundle, cfg.trust,
                                              StepKind::kRecovery, env_threshold(cfg));
      out.branch = ls.accepted ? "recovery" : "rejected";
      out.accepted = ls.accepted;
      out.lambda = 0.0;
      out.nu = 0.0;
      out.measured_kl = ls.measured_kl;
      policy.theta = ls.theta;
    }
  } else {
    const double constraint_now = bundle.c_surplus + env_threshold(cfg);
    const double lam =
        pid_lambda_update(scratch.pid, cfg.pid, constraint_now, env_threshold(cfg));
    const Eigen::VectorXd old_theta = policy.theta;
    policy.theta = pid_step(policy, bundle, scratch.pid, cfg.actor_lr);
    SoftmaxPolicy before = policy;
    before.theta = old_theta;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(policy.n_states());
    for (int s : batch.states) w(s) += 1.0;
    const Divergences div = kl_and_tv(policy, before, w);
    out.branch = "pid";
    out.accepted = true;
    out.lambda = lam;
    out.nu = 0.0;
    out.measured_kl = div.kl;
  }
  out.theta_after = policy.theta;
  return out;
}

}  // namespace

double env_threshold(const ExperimentConfig& cfg) {
  return cfg.env_kind == EnvKind::kGrid ? cfg.grid.d : cfg.chain.d;
}

namespace {

SeedRunResult train_one_seed(const ExperimentConfig& cfg, const EnvBundle& env,
                             std::uint64_t seed, bool record_snapshots) {
  const CmdpSpec& spec = env.spec;
  const int S = spec.n_states;
  const double gamma = spec.gamma;
  const double d = spec.d;

  SeedRunResult result;
  result.seed = seed;

  SoftmaxPolicy policy = make_softmax_policy(env.policy_features, spec.n_actions);

  // Projection and per-state embeddings are fixed for the whole run.
  const int feat_dim = static_cast<int>(env.features.cols());
  const int proj_dim = std::min(cfg.memory.projection_dim, feat_dim);
  ProjectionMatrix proj = make_projection(feat_dim, proj_dim, cfg.memory.projection_seed);
  Eigen::MatrixXd state_embeddings(S, proj_dim);
  for (int s = 0; s < S; ++s) {
    state_embeddings.row(s) = embed(proj, env.features.row(s).transpose()).transpose();
  }

  FlashbulbMemory memory;
  memory.capacity = cfg.memory.capacity;
  IntrinsicNormalizer normalizer;
  std::vector<Eigen::VectorXd> prev_unsafe;

  Eigen::VectorXd v_c_hat = Eigen::VectorXd::Zero(S);
  Eigen::VectorXd v_r_hat = Eigen::VectorXd::Zero(S);

  BetaState beta_state;
  beta_state.beta = cfg.critic.beta0;
  beta_state.gamma = gamma;
  beta_state.alpha = cfg.critic.alpha;
  const bool intrinsic_on = uses_intrinsic(cfg.optimizer);
  if (!intrinsic_on) beta_state.beta = 0.0;

  OptimizerScratch scratch;
  scratch.pid.lambda = cfg.pid.init_lambda;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    // 1. Sample a batch under the current policy.
    const PolicyTable table = policy_table(policy);
    std::vector<Trajectory> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_episodes));
    for (int e = 0; e < cfg.batch_episodes; ++e) {
      const std::uint64_t ep_seed =
          derive_seed(seed, static_cast<std::uint64_t>(iter),
                      0x4550000ULL + static_cast<std::uint64_t>(e));
      batch.push_back(sample_trajectory(spec, table, cfg.horizon, ep_seed));
    }

    // 2. Rebuild the memory from the previous iteration's unsafe states.
    if (intrinsic_on && cfg.intrinsic_mode == IntrinsicMode::kMemory) {
      memory = rebuild_memory(prev_unsafe, proj, iter, cfg.memory.capacity,
                              derive_seed(seed, 0xFBULL, static_cast<std::uint64_t>(iter)));
    }

    // 3. Annotate intrinsic costs. Raw kernel scores per state are cached;
    //    the normalizer still advances once per annotated transition.
    double ci_sum = 0.0;
    std::size_t ci_count = 0;
    std::vector<double> raw_cache(static_cast<std::size_t>(S),
                                  std::numeric_limits<double>::quiet_NaN());
    bool memory_live = intrinsic_on && cfg.intrinsic_mode == IntrinsicMode::kMemory &&
                       !memory.embeddings.empty();
    bool constant_live = intrinsic_on && cfg.intrinsic_mode == IntrinsicMode::kConstant &&
                         iter > 0;
    for (auto& traj : batch) {
      for (auto& tr : traj) {
        double ci = 0.0;
        if (memory_live) {
          double& raw = raw_cache[static_cast<std::size_t>(tr.state)];
          if (std::isnan(raw)) {
            raw = intrinsic_cost_raw(memory, state_embeddings.row(tr.state).transpose(),
                                     cfg.memory.k, cfg.memory.xi);
          }
          normalizer.update(raw);
          ci = raw == 0.0 ? 0.0 : raw / normalizer.scale();
        } else if (constant_live) {
          ci = cfg.intrinsic_constant;
        }
        tr.intrinsic_cost = ci;
        ci_sum += ci;
        ci_count += 1;
      }
    }
    const double mean_ci = ci_count > 0 ? ci_sum / static_cast<double>(ci_count) : 0.0;

    // 4. Remember this iteration's unsafe origin states for the next rebuild.
    if (intrinsic_on && cfg.intrinsic_mode == IntrinsicMode::kMemory) {
      prev_unsafe.clear();
      for (const auto& traj : batch) {
        for (const auto& tr : traj) {
          if (tr.cost > 0.0) {
            prev_unsafe.push_back(env.features.row(tr.state).transpose());
          }
        }
      }
    }

    // Exact diagnostics at the pre-update policy.
    const ExactValues exact = exact_policy_eval(spec, table);

    // 5. Critic-bias feedback and the correction-weight update, using the
    //    value table from before this iteration's refit.
    if (intrinsic_on) {
      const double eps = spec.rho.dot(v_c_hat) - exact.j_c;
      beta_update(beta_state, eps, mean_ci);
    }
    const double beta_k = intrinsic_on ? beta_state.beta : 0.0;

    // 6. Refit the value baselines on lambda-return targets. The first fit
    //    starts from zero tables, so it uses pure Monte-Carlo returns
    //    (lambda = 1) instead of bootstrapping the uninformed initializer.
    const double fit_lambda = iter == 0 ? 1.0 : cfg.gae_lambda;
    refit_values(batch, v_c_hat, /*use_cost=*/true, gamma, fit_lambda);
    refit_values(batch, v_r_hat, /*use_cost=*/false, gamma, fit_lambda);

    // 7. Advantages with the refreshed baselines.
    PolicyBatch pb;
    pb.gamma = gamma;
    double jc_hat_sum = 0.0;
    double jr_hat_sum = 0.0;
    double undiscounted_sum = 0.0;
    for (const auto& traj : batch) {
      const GaeResult gae = gae_advantages(traj, v_c_hat, v_r_hat, beta_k, gamma,
                                           cfg.gae_lambda);
      double disc_c = 0.0, disc_r = 0.0, undisc = 0.0, g = 1.0;
      for (std::size_t t = 0; t < traj.size(); ++t) {
        pb.states.push_back(traj[t].state);
        pb.actions.push_back(traj[t].action);
        pb.adv_ei.push_back(gae.adv_ei[t]);
        pb.adv_r.push_back(gae.adv_r[t]);
        const double v_next = traj[t].terminal ? 0.0 : v_c_hat(traj[t].next_state);
        pb.adv_ei_one.push_back(traj[t].cost + beta_k * traj[t].intrinsic_cost.value_or(0.0) +
                                gamma * v_next - v_c_hat(traj[t].state));
        disc_c += g * traj[t].cost;
        disc_r += g * traj[t].reward;
        undisc += traj[t].cost;
        g *= gamma;
      }
      jc_hat_sum += disc_c;
      jr_hat_sum += disc_r;
      undiscounted_sum += undisc;
    }
    const double n_eps = static_cast<double>(batch.size());
    pb.j_c_hat = jc_hat_sum / n_eps;
    pb.logp_old.reserve(pb.states.size());
    for (std::size_t i = 0; i < pb.states.size(); ++i) {
      pb.logp_old.push_back(action_log_probs(policy, pb.states[i])(pb.actions[i]));
    }

    // 8. One optimizer update.
    const Eigen::VectorXd theta_before = policy.theta;
    const GradientBundle bundle = surrogate_gradients(policy, pb, d);
    StepOutcome step = optimizer_step(cfg, policy, pb, bundle, scratch);

    MetricsRow row;
    row.iteration = iter;
    row.j_r_hat = jr_hat_sum / n_eps;
    row.j_c_hat = pb.j_c_hat;
    row.j_c_exact = exact.j_c;
    row.j_r_exact = exact.j_r;
    row.beta = beta_k;
    row.mean_intrinsic = mean_ci;
    row.memory_size = memory.embeddings.size();
    row.branch = step.branch;
    row.lambda = step.lambda;
    row.nu = step.nu;
    row.q = step.q;
    row.u = step.u;
    row.v = step.v;
    row.measured_kl = step.measured_kl;
    row.c_surplus = bundle.c_surplus;
    row.violation = exact.j_c > d;
    row.undiscounted_cost = undiscounted_sum / n_eps;
    result.metrics.push_back(std::move(row));

    if (record_snapshots) {
      IterationSnapshot snap;
      snap.iteration = iter;
      snap.theta_before = theta_before;
      snap.theta_after = step.theta_after;
      snap.beta = beta_k;
      snap.ci_table = Eigen::VectorXd::Zero(S);
      if (memory_live) {
        for (int s = 0; s < S; ++s) {
          snap.ci_table(s) = intrinsic_cost_peek(
              memory, state_embeddings.row(s).transpose(), cfg.memory.k, cfg.memory.xi,
              normalizer);
        }
      } else if (constant_live) {
        snap.ci_table.setConstant(cfg.intrinsic_constant);
      }
      snap.branch = step.branch;
      snap.accepted = step.accepted;
      result.snapshots.push_back(std::move(snap));
    }
  }

  result.final_theta = policy.theta;
  return result;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, bool record_snapshots) {
  const EnvBundle env = build_env(cfg);
  TrainResult out;
  out.runs.resize(cfg.seeds.size());
  std::vector<std::future<SeedRunResult>> futures;
  futures.reserve(cfg.seeds.size());
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&cfg, &env, record_snapshots,
                                                      seed = cfg.seeds[i]]() {
      return train_one_seed(cfg, env, seed, record_snapshots);
    }));
  }
  for (std::size_t i = 0; i < futures.size(); ++i) {
    out.runs[i] = futures[i].get();
  }
  return out;
}

std::string format_csv_field(double v) { return format_real(v); }

namespace {

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "iteration,j_r_hat,j_c_hat,j_r_exact,j_c_exact,beta,mean_intrinsic,memory_size,"
        "branch,lambda,nu,q,u,v,measured_kl,c_surplus,violation,undiscounted_cost\n";
  for (const auto& r : rows) {
    os << r.iteration << ',' << format_real(r.j_r_hat) << ',' << format_real(r.j_c_hat)
       << ',' << format_real(r.j_r_exact) << ',' << format_real(r.j_c_exact) << ','
       << format_real(r.beta) << ',' << format_real(r.mean_intrinsic) << ','
       << r.memory_size << ',' << r.branch << ',' << format_real(r.lambda) << ','
       << format_real(r.nu) << ',' << format_real(r.q) << ',' << format_real(r.u) << ','
       << format_real(r.v) << ',' << format_real(r.measured_kl) << ','
       << format_real(r.c_surplus) << ',' << (r.violation ? 1 : 0) << ','
       << format_real(r.undiscounted_cost) << '\n';
  }
  return os.str();
}

std::string trace_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "iteration,branch,lambda,nu,q,u,v,measured_kl,c_surplus\n";
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.branch << ',' << format_real(r.lambda) << ','
       << format_real(r.nu) << ',' << format_real(r.q) << ',' << format_real(r.u) << ','
       << format_real(r.v) << ',' << format_real(r.measured_kl) << ','
       << format_real(r.c_surplus) << '\n';
  }
  return os.str();
}

PlotSeries aggregate_series(const TrainResult& result, const std::string& name,
                            double (*pick)(const MetricsRow&)) {
  PlotSeries s;
  s.name = name;
  if (result.runs.empty()) return s;
  const std::size_t n_iter = result.runs.front().metrics.size();
  for (std::size_t t = 0; t < n_iter; ++t) {
    double sum = 0.0, sq = 0.0;
    for (const auto& run : result.runs) {
      const double v = pick(run.metrics[t]);
      sum += v;
      sq += v * v;
    }
    const double n = static_cast<double>(result.runs.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    const double sd = std::sqrt(var);
    s.xs.push_back(static_cast<double>(t));
    s.ys.push_back(mean);
    s.band_lo.push_back(mean - sd);
    s.band_hi.push_back(mean + sd);
  }
  return s;
}

}  // namespace

void emit_outputs(const std::string& out_dir, const ExperimentConfig& cfg,
                  const TrainResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_json_file(out_dir + "/config.json", config_to_json(cfg));
  for (const auto& run : result.runs) {
    write_text_file(out_dir + "/metrics_" + std::to_string(run.seed) + ".csv",
                    metrics_csv(run.metrics));
    write_text_file(out_dir + "/trace_" + std::to_string(run.seed) + ".csv",
                    trace_csv(run.metrics));
  }

  PlotSpec ret;
  ret.title = "Discounted return (exact, mean +/- sd over seeds)";
  ret.x_label = "iteration";
  ret.y_label = "J_R";
  ret.series.push_back(
      aggregate_series(result, "J_R", [](const MetricsRow& r) { return r.j_r_exact; }));
  write_svg(out_dir + "/return.svg", ret);

  PlotSpec cost;
  cost.title = "Discounted cost (exact, mean +/- sd over seeds)";
  cost.x_label = "iteration";
  cost.y_label = "J_C";
  cost.series.push_back(
      aggregate_series(result, "J_C", [](const MetricsRow& r) { return r.j_c_exact; }));
  cost.hline = env_threshold(cfg);
  write_svg(out_dir + "/cost.svg", cost);

  PlotSpec beta;
  beta.title = "Correction weight (mean +/- sd over seeds)";
  beta.x_label = "iteration";
  beta.y_label = "beta";
  beta.series.push_back(
      aggregate_series(result, "beta", [](const MetricsRow& r) { return r.beta; }));
  write_svg(out_dir + "/beta.svg", beta);

  PlotSpec intr;
  intr.title = "Mean intrinsic cost (mean +/- sd over seeds)";
  intr.x_label = "iteration";
  intr.y_label = "c_I";
  intr.series.push_back(aggregate_series(
      result, "mean_c_I", [](const MetricsRow& r) { return r.mean_intrinsic; }));
  write_svg(out_dir + "/intrinsic.svg", intr);
}

// ---------------------------------------------------------------------------
// Bound checks
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd ei_cost_table(const CmdpSpec& spec, const Eigen::VectorXd& ci_table,
                              double beta) {
  Eigen::MatrixXd c = spec.C;
  for (int s = 0; s < spec.n_states; ++s) {
    c.row(s).array() += beta * ci_table(s);
  }
  return c;
}

// Advantage of the combined cost with the plain-cost value as baseline:
// A(s,a) = c(s,a) + beta ci(s) + gamma E[V_C(s')] - V_C(s).
Eigen::MatrixXd ei_advantages(const CmdpSpec& spec, const PolicyTable& pi,
                              const Eigen::VectorXd& ci_table, double beta) {
  const ExactValues ex = exact_policy_eval(spec, pi);
  Eigen::MatrixXd adv(spec.n_states, spec.n_actions);
  for (int a = 0; a < spec.n_actions; ++a) {
    adv.col(a) = spec.C.col(a) + beta * ci_table + spec.gamma * (spec.P[a] * ex.v_c) -
                 ex.v_c;
  }
  return adv;
}

Eigen::VectorXd unnormalized_visitation(const CmdpSpec& spec, const PolicyTable& pi) {
  return discounted_visitation(spec, pi) / (1.0 - spec.gamma);
}

}  // namespace

BoundReport lemma1_identity(const CmdpSpec& spec, const PolicyTable& pi,
                            const PolicyTable& pi_prime, const Eigen::VectorXd& ci_table,
                            double beta, int index) {
  const ExactCostValues jei = exact_eval_with_cost(spec, pi_prime,
                                                   ei_cost_table(spec, ci_table, beta));
  const ExactValues base = exact_policy_eval(spec, pi);
  const double lhs = jei.j - base.j_c;

  const Eigen::MatrixXd adv = ei_advantages(spec, pi, ci_table, beta);
  const Eigen::VectorXd occ = unnormalized_visitation(spec, pi_prime);
  double rhs = 0.0;
  for (int s = 0; s < spec.n_states; ++s) {
    rhs += occ(s) * pi_prime.row(s).dot(adv.row(s));
  }

  BoundReport rep;
  rep.which = "lemma1";
  rep.index = index;
  rep.lhs = lhs;
  rep.rhs = rhs;
  rep.slack = rhs - lhs;
  rep.holds = std::abs(rep.slack) <= 1e-9 * std::max(1.0, std::abs(lhs));
  return rep;
}

BoundReport theorem1_bound(const CmdpSpec& spec, const PolicyTable& pi,
                           const PolicyTable& pi_prime, const Eigen::VectorXd& ci_table,
                           double beta, int index) {
  const Eigen::MatrixXd c_ei = ei_cost_table(spec, ci_table, beta);
  const double j_ei_prime = exact_eval_with_cost(spec, pi_prime, c_ei).j;
  const double j_ei = exact_eval_with_cost(spec, pi, c_ei).j;
  const double lhs = j_ei_prime - j_ei;

  const Eigen::MatrixXd adv = ei_advantages(spec, pi, ci_table, beta);
  Eigen::VectorXd exp_adv(spec.n_states);   // E_{a ~ pi'} A(s,a)
  Eigen::VectorXd tv(spec.n_states);        // D_TV(pi' || pi)(s)
  for (int s = 0; s < spec.n_states; ++s) {
    exp_adv(s) = pi_prime.row(s).dot(adv.row(s));
    tv(s) = 0.5 * (pi_prime.row(s) - pi.row(s)).cwiseAbs().sum();
  }
  const double eps = exp_adv.cwiseAbs().maxCoeff();
  const Eigen::VectorXd d_pi = discounted_visitation(spec, pi);
  const double gamma = spec.gamma;
  double rhs = 0.0;
  for (int s = 0; s < spec.n_states; ++s) {
    rhs += d_pi(s) * (exp_adv(s) + 2.0 * gamma * eps / (1.0 - gamma) * tv(s));
  }
  rhs /= (1.0 - gamma);

  BoundReport rep;
  rep.which = "thm1";
  rep.index = index;
  rep.lhs = lhs;
  rep.rhs = rhs;
  rep.slack = rhs - lhs;
  rep.holds = rep.slack >= -1e-8 * std::max(1.0, std::abs(rhs));
  return rep;
}

BoundReport theorem2_bound(const CmdpSpec& spec, const PolicyTable& pi_k,
                           const PolicyTable& pi_next, const Eigen::VectorXd& ci_table,
                           double beta, double phi, int index) {
  const ExactValues next = exact_policy_eval(spec, pi_next);
  const double lhs = next.j_c;

  // Discounted intrinsic surcharge accumulated by the new policy.
  Eigen::MatrixXd intr(spec.n_states, spec.n_actions);
  for (int a = 0; a < spec.n_actions; ++a) intr.col(a) = beta * ci_table;
  const double i_term = exact_eval_with_cost(spec, pi_next, intr).j;

  const Eigen::MatrixXd adv = ei_advantages(spec, pi_k, ci_table, beta);
  double eps = 0.0;
  for (int s = 0; s < spec.n_states; ++s) {
    eps = std::max(eps, std::abs(pi_next.row(s).dot(adv.row(s))));
  }
  const double gamma = spec.gamma;
  const double rhs = spec.d - i_term +
                     std::sqrt(2.0 * phi) * gamma * eps / ((1.0 - gamma) * (1.0 - gamma));

  BoundReport rep;
  rep.which = "thm2";
  rep.index = index;
  rep.lhs = lhs;
  rep.rhs = rhs;
  rep.slack = rhs - lhs;
  rep.holds = rep.slack >= -1e-8 * std::max(1.0, std::abs(rhs));
  return rep;
}

CmdpSpec make_random_cmdp(int n_states, int n_actions, double gamma, std::uint64_t seed) {
  Rng rng(seed);
  CmdpSpec spec;
  spec.n_states = n_states;
  spec.n_actions = n_actions;
  spec.gamma = gamma;
  spec.P.assign(static_cast<std::size_t>(n_actions),
                Eigen::MatrixXd::Zero(n_states, n_states));
  for (int a = 0; a < n_actions; ++a) {
    for (int s = 0; s < n_states; ++s) {
      Eigen::VectorXd w(n_states);
      for (int t = 0; t < n_states; ++t) w(t) = std::exp(1.5 * rng.normal());
      spec.P[static_cast<std::size_t>(a)].row(s) = (w / w.sum()).transpose();
    }
  }
  spec.R.resize(n_states, n_actions);
  spec.C.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      spec.R(s, a) = rng.normal();
      spec.C(s, a) = rng.uniform() < 0.5 ? 0.0 : rng.uniform();
    }
  }
  Eigen::VectorXd rho(n_states);
  for (int s = 0; s < n_states; ++s) rho(s) = 0.1 + rng.uniform();
  spec.rho = rho / rho.sum();
  spec.d = 0.5 / (1.0 - gamma) * 0.2;
  spec.validate();
  return spec;
}

PolicyTable make_random_policy(int n_states, int n_actions, std::uint64_t seed,
                               double logit_scale) {
  Rng rng(seed);
  PolicyTable pi(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    Eigen::VectorXd logits(n_actions);
    for (int a = 0; a < n_actions; ++a) logits(a) = logit_scale * rng.normal();
    const double m = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - m).exp();
    pi.row(s) = (w / w.sum()).transpose();
  }
  return pi;
}

namespace {

struct Fixture {
  CmdpSpec spec;
  std::string name;
};

std::vector<Fixture> bound_fixtures(std::uint64_t seed) {
  std::vector<Fixture> out;
  out.push_back({make_random_cmdp(5, 3, 0.9, derive_seed(seed, 1, 0)), "random5x3"});
  out.push_back({make_random_cmdp(8, 2, 0.8, derive_seed(seed, 2, 0)), "random8x2"});
  GridConfig g;
  g.width = 4;
  g.height = 4;
  g.n_hazards = 3;
  g.env_seed = derive_seed(seed, 3, 0);
  g.gamma = 0.95;
  out.push_back({GridHazardWorld(g).to_cmdp(), "grid4x4"});
  ChainConfig c;
  c.n_positions = 5;
  c.n_velocities = 3;
  c.speed_limit = 1;
  c.gamma = 0.9;
  out.push_back({ChainVelocityWorld(c).to_cmdp(), "chain5x3"});
  return out;
}

Eigen::VectorXd random_ci_table(int n_states, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd ci(n_states);
  for (int s = 0; s < n_states; ++s) ci(s) = rng.uniform();
  return ci;
}

template <typename Check>
std::vector<BoundReport> run_pair_suite(int pairs_per_fixture, std::uint64_t seed,
                                        Check check) {
  std::vector<BoundReport> reports;
  const double betas[] = {0.0, 0.5, 1.7};
  int index = 0;
  for (const auto& fx : bound_fixtures(seed)) {
    for (int p = 0; p < pairs_per_fixture; ++p) {
      const std::uint64_t s1 = derive_seed(seed, 10, static_cast<std::uint64_t>(index));
      const std::uint64_t s2 = derive_seed(seed, 11, static_cast<std::uint64_t>(index));
      const PolicyTable pi = make_random_policy(fx.spec.n_states, fx.spec.n_actions, s1);
      const PolicyTable pi_prime =
          make_random_policy(fx.spec.n_states, fx.spec.n_actions, s2);
      Eigen::VectorXd ci =
          p % 3 == 2 ? Eigen::VectorXd::Zero(fx.spec.n_states)
                     : random_ci_table(fx.spec.n_states,
                                       derive_seed(seed, 12, static_cast<std::uint64_t>(index)));
      const double beta = betas[p % 3];
      reports.push_back(check(fx.spec, pi, pi_prime, ci, beta, index));
      ++index;
    }
  }
  return reports;
}

}  // namespace

std::vector<BoundReport> run_lemma1_suite(int pairs_per_fixture, std::uint64_t seed) {
  return run_pair_suite(pairs_per_fixture, seed,
                        [](const CmdpSpec& spec, const PolicyTable& pi,
                           const PolicyTable& pi_prime, const Eigen::VectorXd& ci,
                           double beta, int index) {
                          return lemma1_identity(spec, pi, pi_prime, ci, beta, index);
                        });
}

std::vector<BoundReport> run_theorem1_suite(int pairs_per_fixture, std::uint64_t seed) {
  return run_pair_suite(pairs_per_fixture, seed,
                        [](const CmdpSpec& spec, const PolicyTable& pi,
                           const PolicyTable& pi_prime, const Eigen::VectorXd& ci,
                           double beta, int index) {
                          return theorem1_bound(spec, pi, pi_prime, ci, beta, index);
                        });
}

Theorem2SuiteResult run_theorem2_suite(const ExperimentConfig& cfg) {
  const EnvBundle env = build_env(cfg);
  TrainResult tr = train(cfg, /*record_snapshots=*/true);
  Theorem2SuiteResult out;
  int index = 0;
  for (const auto& run : tr.runs) {
    SoftmaxPolicy probe = make_softmax_policy(env.policy_features, env.spec.n_actions);
    for (const auto& snap : run.snapshots) {
      if (snap.branch == "pid") {
        out.pid_steps += 1;
        continue;
      }
      if (snap.branch == "rejected" || !snap.accepted) {
        out.rejected_steps += 1;
        continue;
      }
      if (snap.branch == "recovery") {
        out.recovery_steps += 1;
        continue;
      }
      out.feasible_accepted += 1;
      probe.theta = snap.theta_before;
      const PolicyTable pi_k = policy_table(probe);
      probe.theta = snap.theta_after;
      const PolicyTable pi_next = policy_table(probe);
      out.reports.push_back(theorem2_bound(env.spec, pi_k, pi_next, snap.ci_table,
                                           snap.beta, cfg.trust.phi, index));
      ++index;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convergence suite
// ---------------------------------------------------------------------------

namespace {

// Fixed, batch-normalized intrinsic table for a fixture: kernel scores
// against the embedded unsafe states, divided by their mean.
Eigen::VectorXd fixture_ci_table(const CmdpSpec& spec, std::uint64_t seed) {
  const int S = spec.n_states;
  Eigen::MatrixXd features(S, 1);
  for (int s = 0; s < S; ++s) features(s, 0) = (s + 0.5) / static_cast<double>(S);
  ProjectionMatrix proj = make_projection(1, 1, derive_seed(seed, 0xC1, 0));
  std::vector<Eigen::VectorXd> unsafe;
  for (int s = 0; s < S; ++s) {
    if (spec.C.row(s).maxCoeff() > 0.0) unsafe.push_back(features.row(s).transpose());
  }
  FlashbulbMemory mem = rebuild_memory(unsafe, proj, 0, std::nullopt,
                                       derive_seed(seed, 0xC2, 0));
  Eigen::VectorXd raw(S);
  for (int s = 0; s < S; ++s) {
    raw(s) = intrinsic_cost_raw(mem, embed(proj, features.row(s).transpose()), 10, 1e-3);
  }
  const double mean = raw.mean();
  if (mean <= 1e-8) return Eigen::VectorXd::Ones(S);
  return raw / mean;
}

double sup_q_error(const Eigen::MatrixXd& q, const Eigen::MatrixXd& q_ref) {
  return (q - q_ref).cwiseAbs().maxCoeff();
}

}  // namespace

ConvergenceReport convergence_suite(const CmdpSpec& fixture, std::uint64_t n_updates,
                                    std::uint64_t seed) {
  const int S = fixture.n_states;
  const int A = fixture.n_actions;
  const double gamma = fixture.gamma;
  const Eigen::VectorXd ci = fixture_ci_table(fixture, seed);

  const Eigen::MatrixXd q_star = optimal_min_cost_q(fixture);
  CmdpSpec modified = fixture;
  for (int s = 0; s < S; ++s) modified.C.row(s).array() += ci(s);
  const Eigen::MatrixXd q_mod = optimal_min_cost_q(modified);

  EiQTable table_zero(S, A, 0.1, gamma);
  EiQTable table_sched(S, A, 0.1, gamma);
  EiQTable table_const(S, A, 0.1, gamma);
  BetaState beta_sched;
  beta_sched.gamma = gamma;
  beta_sched.alpha = 0.1;

  Rng rng(derive_seed(seed, 0xC3, 1));
  ConvergenceReport report;
  report.ci_table = ci;
  const std::uint64_t beta_update_every = 1000;

  for (std::uint64_t step = 0; step < n_updates; ++step) {
    // Exploring starts: one synchronized transition for all three learners.
    const int s = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(S));
    const int a = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(A));
    const Eigen::VectorXd row_w = fixture.P[static_cast<std::size_t>(a)].row(s).transpose();
    const std::vector<double> w(row_w.data(), row_w.data() + row_w.size());
    const int s_next = rng.categorical(w);

    Transition t;
    t.state = s;
    t.action = a;
    t.cost = fixture.C(s, a);
    t.reward = fixture.R(s, a);
    t.next_state = s_next;
    t.intrinsic_cost = ci(s);
    t.terminal = false;

    ei_q_update_min(table_zero, t, 0.0, StepRule::kPolynomial);
    ei_q_update_min(table_sched, t, beta_sched.beta, StepRule::kPolynomial);
    ei_q_update_min(table_const, t, 1.0, StepRule::kPolynomial);

    if ((step + 1) % beta_update_every == 0) {
      const double eps = (table_sched.q - q_star).mean();
      beta_update(beta_sched, eps, ci.mean());
    }
    const std::uint64_t stride = std::max<std::uint64_t>(1, n_updates / 20);
    if ((step + 1) % stride == 0 || step + 1 == n_updates) {
      ConvergencePoint pt;
      pt.updates = step + 1;
      pt.err_beta_zero = sup_q_error(table_zero.q, q_star);
      pt.err_beta_scheduled = sup_q_error(table_sched.q, q_star);
      pt.err_beta_const = sup_q_error(table_const.q, q_mod);
      report.trace.push_back(pt);
    }
  }

  report.final_err_beta_zero = sup_q_error(table_zero.q, q_star);
  report.final_err_beta_scheduled = sup_q_error(table_sched.q, q_star);
  report.final_err_beta_const = sup_q_error(table_const.q, q_mod);
  report.const_fixed_point_gap = (q_mod - q_star).minCoeff();
  return report;
}

// ---------------------------------------------------------------------------
// Bias probe
// ---------------------------------------------------------------------------

namespace {

struct BiasVariantState {
  EiQTable table;
  BetaState beta;
  FlashbulbMemory memory;
  IntrinsicNormalizer normalizer;
  std::vector<Eigen::VectorXd> prev_unsafe;
  bool corrected = false;

  BiasVariantState(int S, int A, double alpha, double gamma)
      : table(S, A, alpha, gamma) {}
};

double mean_min_bias(const EiQTable& table, const Eigen::MatrixXd& q_star,
                     const std::vector<int>& probe_states) {
  double sum = 0.0;
  for (int s : probe_states) {
    sum += table.q.row(s).minCoeff() - q_star.row(s).minCoeff();
  }
  return sum / static_cast<double>(probe_states.size());
}

}  // namespace

BiasFigureResult run_bias_figure(const BiasProbeConfig& cfg) {
  GridHazardWorld world(cfg.grid);
  const CmdpSpec spec = world.to_cmdp();
  const Eigen::MatrixXd features = world.state_features(FeatureMode::kCoords);
  const int S = spec.n_states;
  const int A = spec.n_actions;
  const double gamma = spec.gamma;

  const int feat_dim = static_cast<int>(features.cols());
  const int proj_dim = std::min(cfg.memory.projection_dim, feat_dim);
  ProjectionMatrix proj = make_projection(feat_dim, proj_dim, cfg.memory.projection_seed);
  Eigen::MatrixXd state_embeddings(S, proj_dim);
  for (int s = 0; s < S; ++s) {
    state_embeddings.row(s) = embed(proj, features.row(s).transpose()).transpose();
  }

  const Eigen::MatrixXd q_star = optimal_min_cost_q(spec);
  std::vector<int> probe_states;
  const std::vector<bool> absorbing = spec.absorbing_states();
  for (int s = 0; s < S; ++s) {
    if (!absorbing[static_cast<std::size_t>(s)]) probe_states.push_back(s);
  }

  // Uniform behavior policy; trajectories and bootstrap noise are shared
  // between the paired variants.
  PolicyTable uniform = PolicyTable::Constant(S, A, 1.0 / A);

  BiasFigureResult out;
  out.baseline_state_records.resize(cfg.seeds.size());
  out.mice_state_records.resize(cfg.seeds.size());

  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    BiasVariantState baseline(S, A, cfg.alpha, gamma);
    BiasVariantState mice(S, A, cfg.alpha, gamma);
    mice.corrected = true;
    mice.beta.beta = cfg.beta0;
    mice.beta.gamma = gamma;
    mice.beta.alpha = cfg.alpha;

    double base_sum = 0.0, mice_sum = 0.0;
    int tail_count = 0;
    const int tail_start = cfg.iterations - cfg.iterations / 3;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      std::vector<Trajectory> batch;
      for (int e = 0; e < cfg.episodes_per_iteration; ++e) {
        batch.push_back(sample_trajectory(
            spec, uniform, cfg.horizon,
            derive_seed(seed, static_cast<std::uint64_t>(iter),
                        0xB1A5000ULL + static_cast<std::uint64_t>(e))));
      }

      // Correction-weight feedback from the probe before this iteration's
      // updates.
      const double eps_pre = mean_min_bias(mice.table, q_star, probe_states);

      // Rebuild the corrected variant's memory from last iteration's unsafe
      // origins and annotate intrinsic costs per state.
      mice.memory = rebuild_memory(mice.prev_unsafe, proj, iter, cfg.memory.capacity,
                                   derive_seed(seed, 0xFBULL,
                                               static_cast<std::uint64_t>(iter)));
      Eigen::VectorXd ci = Eigen::VectorXd::Zero(S);
      double ci_sum = 0.0;
      std::size_t ci_n = 0;
      if (!mice.memory.embeddings.empty()) {
        std::vector<double> raw_cache(static_cast<std::size_t>(S),
                                      std::numeric_limits<double>::quiet_NaN());
        for (const auto& traj : batch) {
          for (const auto& tr : traj) {
            double& raw = raw_cache[static_cast<std::size_t>(tr.state)];
            if (std::isnan(raw)) {
              raw = intrinsic_cost_raw(mice.memory,
                                       state_embeddings.row(tr.state).transpose(),
                                       cfg.memory.k, cfg.memory.xi);
            }
            mice.normalizer.update(raw);
            ci(tr.state) = raw == 0.0 ? 0.0 : raw / mice.normalizer.scale();
            ci_sum += ci(tr.state);
            ci_n += 1;
          }
        }
      }
      const double mean_ci = ci_n > 0 ? ci_sum / static_cast<double>(ci_n) : 0.0;
      beta_update(mice.beta, eps_pre, mean_ci);

      mice.prev_unsafe.clear();
      for (const auto& traj : batch) {
        for (const auto& tr : traj) {
          if (tr.cost > 0.0) mice.prev_unsafe.push_back(features.row(tr.state).transpose());
        }
      }

      // Paired noisy min-greedy updates.
      Rng noise_rng(derive_seed(seed, 0x4015E, static_cast<std::uint64_t>(iter)));
      for (const auto& traj : batch) {
        for (const auto& tr : traj) {
          Eigen::VectorXd noise(A);
          for (int a = 0; a < A; ++a) noise(a) = cfg.noise_std * noise_rng.normal();
          Transition tb = tr;
          tb.intrinsic_cost = 0.0;
          ei_q_update_min(baseline.table, tb, 0.0, StepRule::kFixedAlpha, &noise);
          Transition tm = tr;
          tm.intrinsic_cost = ci(tr.state);
          ei_q_update_min(mice.table, tm, mice.beta.beta, StepRule::kFixedAlpha, &noise);
        }
      }

      const double bias_base = mean_min_bias(baseline.table, q_star, probe_states);
      const double bias_mice = mean_min_bias(mice.table, q_star, probe_states);
      if (si == 0) {
        out.baseline_records.push_back({iter, -1, bias_base, 0.0, bias_base});
        out.mice_records.push_back({iter, -1, bias_mice, 0.0, bias_mice});
      } else {
        out.baseline_records[static_cast<std::size_t>(iter)].estimated += bias_base;
        out.baseline_records[static_cast<std::size_t>(iter)].bias += bias_base;
        out.mice_records[static_cast<std::size_t>(iter)].estimated += bias_mice;
        out.mice_records[static_cast<std::size_t>(iter)].bias += bias_mice;
      }

      for (int s : probe_states) {
        const double est_b = baseline.table.q.row(s).minCoeff();
        const double est_m = mice.table.q.row(s).minCoeff();
        const double truth = q_star.row(s).minCoeff();
        out.baseline_state_records[si].push_back({iter, s, est_b, truth, est_b - truth});
        out.mice_state_records[si].push_back({iter, s, est_m, truth, est_m - truth});
      }

      if (iter >= tail_start) {
        base_sum += bias_base;
        mice_sum += bias_mice;
        tail_count += 1;
      }
    }

    BiasSeedSummary summary;
    summary.seed = seed;
    summary.baseline_final_third = base_sum / tail_count;
    summary.mice_final_third = mice_sum / tail_count;
    out.summaries.push_back(summary);
  }

  const double n_seeds = static_cast<double>(cfg.seeds.size());
  for (auto& r : out.baseline_records) {
    r.estimated /= n_seeds;
    r.bias /= n_seeds;
  }
  for (auto& r : out.mice_records) {
    r.estimated /= n_seeds;
    r.bias /= n_seeds;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output emission for the verification CLIs
// ---------------------------------------------------------------------------

void emit_bound_reports(const std::string& out_dir,
                        const std::vector<BoundReport>& reports) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ostringstream os;
  os << "which,index,lhs,rhs,slack,holds\n";
  for (const auto& r : reports) {
    os << r.which << ',' << r.index << ',' << format_real(r.lhs) << ','
       << format_real(r.rhs) << ',' << format_real(r.slack) << ',' << (r.holds ? 1 : 0)
       << '\n';
  }
  write_text_file(out_dir + "/bounds.csv", os.str());
}

void emit_convergence_outputs(const std::string& out_dir, const ConvergenceReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ostringstream os;
  os << "updates,err_beta_zero,err_beta_scheduled,err_beta_const_vs_modified\n";
  for (const auto& pt : report.trace) {
    os << pt.updates << ',' << format_real(pt.err_beta_zero) << ','
       << format_real(pt.err_beta_scheduled) << ',' << format_real(pt.err_beta_const)
       << '\n';
  }
  write_text_file(out_dir + "/convergence.csv", os.str());

  PlotSpec plot;
  plot.title = "Sup-norm distance to the relevant fixed point";
  plot.x_label = "updates";
  plot.y_label = "sup-norm error";
  PlotSeries a, b, c;
  a.name = "beta = 0 vs Q*";
  b.name = "scheduled beta vs Q*";
  c.name = "constant beta vs modified Q*";
  for (const auto& pt : report.trace) {
    a.xs.push_back(static_cast<double>(pt.updates));
    a.ys.push_back(pt.err_beta_zero);
    b.xs.push_back(static_cast<double>(pt.updates));
    b.ys.push_back(pt.err_beta_scheduled);
    c.xs.push_back(static_cast<double>(pt.updates));
    c.ys.push_back(pt.err_beta_const);
  }
  plot.series = {a, b, c};
  write_svg(out_dir + "/convergence.svg", plot);
}

void emit_bias_outputs(const std::string& out_dir, const BiasProbeConfig& cfg,
                       const BiasFigureResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    for (int variant = 0; variant < 2; ++variant) {
      const auto& recs = variant == 0 ? result.baseline_state_records[si]
                                      : result.mice_state_records[si];
      std::ostringstream os;
      os << "iteration,state,estimated,true,bias\n";
      for (const auto& r : recs) {
        os << r.iteration << ',' << r.state << ',' << format_real(r.estimated) << ','
           << format_real(r.true_value) << ',' << format_real(r.bias) << '\n';
      }
      const std::string name = std::string(variant == 0 ? "bias_baseline_" : "bias_mice_") +
                               std::to_string(cfg.seeds[si]) + ".csv";
      write_text_file(out_dir + "/" + name, os.str());
    }
  }

  std::ostringstream sum;
  sum << "seed,baseline_final_third,mice_final_third\n";
  for (const auto& s : result.summaries) {
    sum << s.seed << ',' << format_real(s.baseline_final_third) << ','
        << format_real(s.mice_final_third) << '\n';
  }
  write_text_file(out_dir + "/bias_summary.csv", sum.str());

  PlotSpec plot;
  plot.title = "Mean critic bias vs exact min-cost values";
  plot.x_label = "iteration";
  plot.y_label = "mean bias";
  PlotSeries a, b;
  a.name = "uncorrected (beta = 0)";
  b.name = "corrected";
  for (const auto& r : result.baseline_records) {
    a.xs.push_back(static_cast<double>(r.iteration));
    a.ys.push_back(r.bias);
  }
  for (const auto& r : result.mice_records) {
    b.xs.push_back(static_cast<double>(r.iteration));
    b.ys.push_back(r.bias);
  }
  plot.series = {a, b};
  plot.hline = 0.0;
  write_svg(out_dir + "/bias.svg", plot);
}

nlohmann::json oracle_report(const CmdpSpec& spec, const PolicyTable& policy) {
  validate_policy(spec, policy);
  const ExactValues ex = exact_policy_eval(spec, policy);
  nlohmann::json j;
  j["j_r"] = ex.j_r;
  j["j_c"] = ex.j_c;
  j["feasible"] = ex.j_c <= spec.d;
  j["v_r"] = std::vector<double>(ex.v_r.data(), ex.v_r.data() + ex.v_r.size());
  j["v_c"] = std::vector<double>(ex.v_c.data(), ex.v_c.data() + ex.v_c.size());
  j["d_pi"] = std::vector<double>(ex.d_pi.data(), ex.d_pi.data() + ex.d_pi.size());
  return j;
}

PolicyTable policy_from_json(const nlohmann::json& j, const CmdpSpec& spec) {
  if (!j.is_object() || !j.contains("policy")) {
    throw std::runtime_error("policy file must be an object with a 'policy' matrix");
  }
  const auto& rows = j.at("policy");
  if (!rows.is_array() || static_cast<int>(rows.size()) != spec.n_states) {
    throw std::runtime_error("policy matrix must have n_states rows");
  }
  PolicyTable pi(spec.n_states, spec.n_actions);
  for (int s = 0; s < spec.n_states; ++s) {
    const auto& row = rows.at(static_cast<std::size_t>(s));
    if (!row.is_array() || static_cast<int>(row.size()) != spec.n_actions) {
      throw std::runtime_error("policy row " + std::to_string(s) +
                               " must have n_actions entries");
    }
    for (int a = 0; a < spec.n_actions; ++a) {
      pi(s, a) = row.at(static_cast<std::size_t>(a)).get<double>();
    }
  }
  validate_policy(spec, pi);
  return pi;
}

}  // namespace mice
