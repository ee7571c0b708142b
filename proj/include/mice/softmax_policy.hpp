#pragma once

#include <Eigen/Dense>

namespace mice {

// Softmax-linear policy over a fixed per-state feature matrix. theta is laid
// out column-major as one feature-sized block per action.
struct SoftmaxPolicy {
  Eigen::MatrixXd features;  // n_states x feature_dim
  Eigen::VectorXd theta;     // feature_dim * n_actions
  int n_actions = 0;

  int n_states() const { return static_cast<int>(features.rows()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  int param_dim() const { return feature_dim() * n_actions; }
};

SoftmaxPolicy make_softmax_policy(const Eigen::MatrixXd& features, int n_actions);

// Numerically stable softmax of theta_a . phi(s) over actions.
Eigen::VectorXd action_dist(const SoftmaxPolicy& policy, int state);
Eigen::VectorXd action_log_probs(const SoftmaxPolicy& policy, int state);

// Materializes the policy as an n_states x n_actions table.
Eigen::MatrixXd policy_table(const SoftmaxPolicy& policy);

// Score vector d/dtheta log pi(a|s).
Eigen::VectorXd score(const SoftmaxPolicy& policy, int state, int action);

// State-weighted average KL(a||b) and total variation between two policies
// sharing a feature map. Weights are normalized internally.
struct Divergences {
  double kl = 0.0;
  double tv = 0.0;
};
Divergences kl_and_tv(const SoftmaxPolicy& a, const SoftmaxPolicy& b,
                      const Eigen::VectorXd& state_weights);

// Per-state divergences, used where a max over states is needed.
double kl_at_state(const SoftmaxPolicy& a, const SoftmaxPolicy& b, int state);
double tv_at_state(const SoftmaxPolicy& a, const SoftmaxPolicy& b, int state);

}  // namespace mice
