#include "mice/softmax_policy.hpp"

#include <cmath>
#include <stdexcept>

namespace mice {

SoftmaxPolicy make_softmax_policy(const Eigen::MatrixXd& features, int n_actions) {
  if (features.rows() < 1 || features.cols() < 1) {
    throw std::invalid_argument("policy features must be non-empty");
  }
  if (n_actions < 2) throw std::invalid_argument("policy needs at least 2 actions");
  SoftmaxPolicy p;
  p.features = features;
  p.n_actions = n_actions;
  p.theta = Eigen::VectorXd::Zero(features.cols() * n_actions);
  return p;
}

namespace {

Eigen::VectorXd logits(const SoftmaxPolicy& policy, int state) {
  if (state < 0 || state >= policy.n_states()) {
    throw std::out_of_range("policy query for unknown state " + std::to_string(state));
  }
  const int f = policy.feature_dim();
  Eigen::VectorXd out(policy.n_actions);
  const Eigen::VectorXd phi = policy.features.row(state).transpose();
  for (int a = 0; a < policy.n_actions; ++a) {
    out(a) = policy.theta.segment(a * f, f).dot(phi);
  }
  return out;
}

}  // namespace

Eigen::VectorXd action_log_probs(const SoftmaxPolicy& policy, int state) {
  Eigen::VectorXd z = logits(policy, state);
  const double zmax = z.maxCoeff();
  const double lse = zmax + std::log((z.array() - zmax).exp().sum());
  return z.array() - lse;
}

Eigen::VectorXd action_dist(const SoftmaxPolicy& policy, int state) {
  return action_log_probs(policy, state).array().exp();
}

Eigen::MatrixXd policy_table(const SoftmaxPolicy& policy) {
  Eigen::MatrixXd table(policy.n_states(), policy.n_actions);
  for (int s = 0; s < policy.n_states(); ++s) {
    table.row(s) = action_dist(policy, s).transpose();
  }
  return table;
}

Eigen::VectorXd score(const SoftmaxPolicy& policy, int state, int action) {
  if (action < 0 || action >= policy.n_actions) {
    throw std::out_of_range("score: action out of range");
  }
  const int f = policy.feature_dim();
  const Eigen::VectorXd phi = policy.features.row(state).transpose();
  const Eigen::VectorXd pi = action_dist(policy, state);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.param_dim());
  for (int a = 0; a < policy.n_actions; ++a) {
    const double coef = (a == action ? 1.0 : 0.0) - pi(a);
    g.segment(a * f, f) = coef * phi;
  }
  return g;
}

double kl_at_state(const SoftmaxPolicy& a, const SoftmaxPolicy& b, int state) {
  const Eigen::VectorXd lp_a = action_log_probs(a, state);
  const Eigen::VectorXd lp_b = action_log_probs(b, state);
  const Eigen::VectorXd p_a = lp_a.array().exp();
  return (p_a.array() * (lp_a - lp_b).array()).sum();
}

double tv_at_state(const SoftmaxPolicy& a, const SoftmaxPolicy& b, int state) {
  const Eigen::VectorXd p_a = action_dist(a, state);
  const Eigen::VectorXd p_b = action_dist(b, state);
  return 0.5 * (p_a - p_b).lpNorm<1>();
}

Divergences kl_and_tv(const SoftmaxPolicy& a, const SoftmaxPolicy& b,
                      const Eigen::VectorXd& state_weights) {
  if (a.n_states() != b.n_states() || a.n_actions != b.n_actions) {
    throw std::invalid_argument("kl_and_tv: policy shape mismatch");
  }
  if (state_weights.size() != a.n_states()) {
    throw std::invalid_argument("kl_and_tv: weight vector must cover all states");
  }
  const double total = state_weights.sum();
  if (!(total > 0.0)) throw std::invalid_argument("kl_and_tv: weights must have positive mass");
  Divergences out;
  for (int s = 0; s < a.n_states(); ++s) {
    const double w = state_weights(s);
    if (w < 0.0) throw std::invalid_argument("kl_and_tv: negative state weight");
    if (w == 0.0) continue;
    out.kl += w * kl_at_state(a, b, s);
    out.tv += w * tv_at_state(a, b, s);
  }
  out.kl /= total;
  out.tv /= total;
  return out;
}

}  // namespace mice
