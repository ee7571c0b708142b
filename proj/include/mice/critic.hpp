#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mice/cmdp.hpp"

namespace mice {

// Tabular Q estimate over extrinsic-plus-intrinsic cost.
struct EiQTable {
  Eigen::MatrixXd q;  // n_states x n_actions
  double alpha = 0.1;
  double gamma = 0.99;
  std::uint64_t update_count = 0;                 // global n
  Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic> visits;

  EiQTable() = default;
  EiQTable(int n_states, int n_actions, double alpha_in, double gamma_in);
};

enum class StepRule {
  kFixedAlpha,   // table.alpha
  kPolynomial,   // 1 / (1 + prior visits)^0.7
};

// Q[s][a] <- (1-a) Q[s][a] + a (c^E + beta c^I + gamma E_{a'~dist} Q[s'][a']).
// Returns the target value used, so update streams can be replayed.
// Throws when the transition's intrinsic cost was never filled.
double ei_q_update(EiQTable& table, const Transition& t, double beta,
                   const Eigen::VectorXd& next_action_dist);

// Min-greedy bootstrap variant. Optional per-action noise is added to the
// bootstrap values before the min; step size follows the rule.
double ei_q_update_min(EiQTable& table, const Transition& t, double beta, StepRule rule,
                       const Eigen::VectorXd* bootstrap_noise = nullptr);

// Bias-corrected target: Q'_T = Q_T - alpha (Q_n - Q*).
double modified_target(double target, double prev_estimate, double q_star_value, double alpha);

// Balancing factor with its schedule counter. gamma and alpha are frozen at
// construction; last_bias records the most recent eps fed in.
struct BetaState {
  double beta = 1.0;
  std::uint64_t n = 0;
  double gamma = 0.99;
  double alpha = 0.1;
  double last_bias = 0.0;
};

// beta <- max(gamma^n (beta - alpha * eps / ci), 0) and n <- n + 1 when
// ci > 0; no-op when ci == 0; negative ci rejected.
void beta_update(BetaState& state, double eps, double ci);

struct QStarEstimate {
  double value = 0.0;
  int n_rollouts = 0;
  int horizon = 0;
  double std_err = 0.0;
  // Worst-case contribution of the truncated tail, gamma^H c_max / (1-gamma).
  double tail_bound = 0.0;
};

// Monte-Carlo discounted extrinsic cost from the initial distribution.
QStarEstimate estimate_q_star(const CmdpSpec& spec, const PolicyTable& policy, int n_rollouts,
                              int horizon, std::uint64_t seed);

struct GaeResult {
  std::vector<double> adv_ei;  // advantages on extrinsic + beta * intrinsic cost
  std::vector<double> adv_r;   // reward advantages
};

// Generalized advantage estimation along one trajectory, truncated at the
// trajectory end. The cost baseline v_c is the extrinsic cost value; the
// beta-scaled intrinsic cost enters through the per-step delta.
GaeResult gae_advantages(const Trajectory& traj, const Eigen::VectorXd& v_c,
                         const Eigen::VectorXd& v_r, double beta, double gamma, double lambda);

struct BiasRecord {
  int iteration = 0;
  int state = 0;
  double estimated = 0.0;
  double true_value = 0.0;
  double bias = 0.0;  // estimated - true
};

}  // namespace mice
