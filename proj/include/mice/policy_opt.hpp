#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "mice/softmax_policy.hpp"

namespace mice {

// Flattened batch of on-policy steps with advantages, assembled by the
// training loop. logp_old pins the sampling policy's log-probabilities so
// importance ratios stay well-defined after theta moves.
struct PolicyBatch {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> adv_r;
  std::vector<double> adv_ei;
  // One-step combined-cost advantages c^E + beta*c^I + gamma*V(s') - V(s).
  // They set the constraint level: their batch mean estimates the gap between
  // the combined and extrinsic cost objectives without the multi-step
  // accumulation that inflates the mean of the GAE vector. When empty, the
  // constraint level falls back to the GAE advantages.
  std::vector<double> adv_ei_one;
  std::vector<double> logp_old;
  double j_c_hat = 0.0;  // batch mean discounted extrinsic episode cost
  double gamma = 0.99;

  std::size_t size() const { return states.size(); }

  const std::vector<double>& level_advantages() const {
    return adv_ei_one.empty() ? adv_ei : adv_ei_one;
  }
};

struct TrustRegionConfig {
  double phi = 1e-2;  // bound on the quadratic KL form 0.5 x^T H x
  double cg_damping = 0.1;
  int cg_iters = 256;
  double cg_tol = 1e-12;
  double backtrack_coef = 0.8;
  int max_backtracks = 10;
};

struct GradientBundle {
  Eigen::VectorXd g;       // gradient of the reward surrogate
  Eigen::VectorXd g_c_ei;  // gradient of the cost surrogate, 1/(1-gamma) scaled
  double c_surplus = 0.0;  // cost surrogate value at theta_k minus budget d
  double j_c_hat = 0.0;
};

// Likelihood-ratio gradients of both surrogates at theta_k, plus the
// constraint value there. The cost side carries the 1/(1-gamma) occupancy
// scale and, through the advantage mean, the intrinsic surcharge.
GradientBundle surrogate_gradients(const SoftmaxPolicy& policy, const PolicyBatch& batch,
                                   double d);

// Sampled surrogate values at an arbitrary policy, for line search checks
// and derivative oracles.
double surrogate_reward_value(const SoftmaxPolicy& policy, const PolicyBatch& batch);
double surrogate_constraint_value(const SoftmaxPolicy& policy, const PolicyBatch& batch,
                                  double d);

// Matrix-free damped Fisher information averaged over the batch states.
class FisherOperator {
 public:
  FisherOperator(const SoftmaxPolicy& policy, const std::vector<int>& states, double damping);
  Eigen::VectorXd operator()(const Eigen::VectorXd& vec) const;
  int dim() const { return static_cast<int>(policy_->param_dim()); }

 private:
  const SoftmaxPolicy* policy_;
  std::vector<std::pair<int, double>> state_weights_;  // state id -> weight
  double damping_;
};

struct CgResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  int iterations = 0;
};

CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& op,
                            const Eigen::VectorXd& b, int max_iters, double tol);

struct DualSolution {
  bool feasible = true;
  double lambda_star = 0.0;
  double nu_star = 0.0;
  double q = 0.0;  // g  H^-1 g
  double u = 0.0;  // g  H^-1 g_c
  double v = 0.0;  // g_c H^-1 g_c
  double dual_value = 0.0;
  Eigen::VectorXd step;       // empty when infeasible
  Eigen::VectorXd h_inv_g;
  Eigen::VectorXd h_inv_gc;
};

// Dual value of the step subproblem
//   max g.x  s.t.  c + g_c.x <= 0,  0.5 x^T H x <= phi
// at multipliers (lambda, nu).
double cpo_dual_value(double lambda, double nu, double q, double u, double v, double c,
                      double phi);

// Solves the subproblem through its two-branch dual. Infeasible when c > 0
// and c^2 / (2v) > phi; then no step is produced and the caller should fall
// back to the recovery direction.
DualSolution cpo_dual_solve(const GradientBundle& bundle, const FisherOperator& fvp,
                            const TrustRegionConfig& cfg);

// Pure constraint-reduction direction -sqrt(2 phi / v) H^-1 g_c, saturating
// the trust region. Throws when the constraint gradient vanishes.
Eigen::VectorXd recovery_step(const GradientBundle& bundle, const FisherOperator& fvp,
                              const TrustRegionConfig& cfg);

enum class StepKind { kFeasible, kRecovery };

struct LineSearchResult {
  bool accepted = false;
  int backtracks = 0;
  double measured_kl = 0.0;
  double constraint_value = 0.0;  // sampled cost surrogate at the accepted point
  Eigen::VectorXd theta;          // accepted parameters (theta_k when rejected)
};

// Backtracking acceptance: average KL over batch states must stay within
// phi; feasible-branch steps additionally must not increase the sampled
// cost surrogate.
LineSearchResult line_search_apply(const SoftmaxPolicy& policy, const Eigen::VectorXd& step,
                                   const PolicyBatch& batch, const GradientBundle& bundle,
                                   const TrustRegionConfig& cfg, StepKind kind, double d);

struct PidConfig {
  double kp = 0.25;
  double ki = 0.005;
  double kd = 0.1;
  double init_lambda = 1e-3;
};

struct PidState {
  double lambda = 1e-3;
  double integral = 0.0;
  std::optional<double> prev_constraint;
};

// Proportional-integral-derivative multiplier on the cost surrogate:
//   delta = constraint_now - d, I <- max(I + delta, 0),
//   deriv = max(constraint_now - prev, 0),
//   lambda = max(kp delta + ki I + kd deriv, 0).
double pid_lambda_update(PidState& state, const PidConfig& cfg, double constraint_now, double d);

// Single ascent step theta + lr (g - lambda g_c_ei).
Eigen::VectorXd pid_step(const SoftmaxPolicy& policy, const GradientBundle& bundle,
                         const PidState& state, double lr);

}  // namespace mice
