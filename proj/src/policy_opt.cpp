#include "mice/policy_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace mice {
namespace {

constexpr double kTiny = 1e-12;

void check_batch(const SoftmaxPolicy& policy, const PolicyBatch& batch) {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("policy batch is empty");
  if (batch.actions.size() != n || batch.adv_r.size() != n || batch.adv_ei.size() != n ||
      batch.logp_old.size() != n) {
    throw std::invalid_argument("policy batch fields have mismatched lengths");
  }
  if (!batch.adv_ei_one.empty() && batch.adv_ei_one.size() != n) {
    throw std::invalid_argument("policy batch fields have mismatched lengths");
  }
  if (!(batch.gamma > 0.0 && batch.gamma < 1.0)) {
    throw std::invalid_argument("policy batch gamma must lie in (0, 1)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.states[i] < 0 || batch.states[i] >= policy.n_states() || batch.actions[i] < 0 ||
        batch.actions[i] >= policy.n_actions) {
      throw std::out_of_range("policy batch indexes outside the policy tables");
    }
  }
}

}  // namespace

GradientBundle surrogate_gradients(const SoftmaxPolicy& policy, const PolicyBatch& batch,
                                   double d) {
  check_batch(policy, batch);
  const double n = static_cast<double>(batch.size());
  const double occ = 1.0 / (1.0 - batch.gamma);
  GradientBundle out;
  out.g = Eigen::VectorXd::Zero(policy.param_dim());
  out.g_c_ei = Eigen::VectorXd::Zero(policy.param_dim());
  const std::vector<double>& level = batch.level_advantages();
  double mean_level = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd sc = score(policy, batch.states[i], batch.actions[i]);
    out.g += sc * batch.adv_r[i];
    out.g_c_ei += sc * batch.adv_ei[i];
    mean_level += level[i];
  }
  out.g /= n;
  out.g_c_ei *= occ / n;
  mean_level /= n;
  out.j_c_hat = batch.j_c_hat;
  out.c_surplus = (batch.j_c_hat - d) + occ * mean_level;
  return out;
}

namespace {

double ratio_weighted_mean(const SoftmaxPolicy& policy, const PolicyBatch& batch,
                           const std::vector<double>& values) {
  // Log-probs cached per state; line search evaluates this repeatedly.
  std::map<int, Eigen::VectorXd> lp_cache;
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto it = lp_cache.find(batch.states[i]);
    if (it == lp_cache.end()) {
      it = lp_cache.emplace(batch.states[i], action_log_probs(policy, batch.states[i])).first;
    }
    const double ratio = std::exp(it->second(batch.actions[i]) - batch.logp_old[i]);
    acc += ratio * values[i];
  }
  return acc / static_cast<double>(batch.size());
}

}  // namespace

double surrogate_reward_value(const SoftmaxPolicy& policy, const PolicyBatch& batch) {
  check_batch(policy, batch);
  return ratio_weighted_mean(policy, batch, batch.adv_r);
}

double surrogate_constraint_value(const SoftmaxPolicy& policy, const PolicyBatch& batch,
                                  double d) {
  check_batch(policy, batch);
  const double occ = 1.0 / (1.0 - batch.gamma);
  return (batch.j_c_hat - d) + occ * ratio_weighted_mean(policy, batch, batch.level_advantages());
}

FisherOperator::FisherOperator(const SoftmaxPolicy& policy, const std::vector<int>& states,
                               double damping)
    : policy_(&policy), damping_(damping) {
  if (states.empty()) throw std::invalid_argument("FisherOperator: empty state batch");
  if (damping < 0.0) throw std::invalid_argument("FisherOperator: damping must be >= 0");
  std::map<int, double> counts;
  for (int s : states) {
    if (s < 0 || s >= policy.n_states()) {
      throw std::out_of_range("FisherOperator: state outside the policy table");
    }
    counts[s] += 1.0;
  }
  const double total = static_cast<double>(states.size());
  state_weights_.reserve(counts.size());
  for (const auto& [s, cnt] : counts) state_weights_.emplace_back(s, cnt / total);
}

Eigen::VectorXd FisherOperator::operator()(const Eigen::VectorXd& vec) const {
  if (vec.size() != policy_->param_dim()) {
    throw std::invalid_argument("FisherOperator: vector has wrong dimension");
  }
  const int f = policy_->feature_dim();
  const int A = policy_->n_actions;
  const Eigen::Map<const Eigen::MatrixXd> W(vec.data(), f, A);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(vec.size());
  Eigen::Map<Eigen::MatrixXd> Out(out.data(), f, A);
  for (const auto& [s, w] : state_weights_) {
    const Eigen::VectorXd phi = policy_->features.row(s).transpose();
    const Eigen::VectorXd pi = action_dist(*policy_, s);
    // For score vectors y_a = phi (x) (e_a - pi):
    //   y_a . vec = t_a - t.pi  with t = W^T phi,
    //   sum_a pi_a (y_a . vec) y_a = phi (pi*m - (pi.m) pi)^T.
    const Eigen::VectorXd t = W.transpose() * phi;
    const double t_bar = t.dot(pi);
    const Eigen::VectorXd m = t.array() - t_bar;
    Eigen::VectorXd z = pi.array() * m.array();
    z -= pi.dot(m) * pi;
    Out.noalias() += w * phi * z.transpose();
  }
  out += damping_ * vec;
  return out;
}

CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& op,
                            const Eigen::VectorXd& b, int max_iters, double tol) {
  CgResult res;
  res.x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  const double b_norm = std::sqrt(std::max(b.squaredNorm(), kTiny));
  for (int it = 0; it < max_iters; ++it) {
    if (std::sqrt(rs) <= tol * b_norm) break;
    const Eigen::VectorXd ap = op(p);
    const double p_ap = p.dot(ap);
    if (!(p_ap > 0.0) || !std::isfinite(p_ap)) {
      throw std::runtime_error("conjugate_gradient: operator lost positive definiteness");
    }
    const double a = rs / p_ap;
    res.x += a * p;
    r -= a * ap;
    const double rs_new = r.squaredNorm();
    if (!std::isfinite(rs_new)) {
      throw std::runtime_error("conjugate_gradient: non-finite residual");
    }
    p = r + (rs_new / rs) * p;
    rs = rs_new;
    res.iterations = it + 1;
  }
  res.residual_norm = std::sqrt(rs);
  return res;
}

double cpo_dual_value(double lambda, double nu, double q, double u, double v, double c,
                      double phi) {
  if (!(lambda > 0.0)) return -std::numeric_limits<double>::infinity();
  return nu * c - lambda * phi - (q - 2.0 * nu * u + nu * nu * v) / (2.0 * lambda);
}

namespace {

double best_nu(double lambda, double c, double u, double v) {
  if (v <= kTiny) return 0.0;
  return std::max(0.0, (lambda * c + u) / v);
}

double dual_1d(double lambda, double q, double u, double v, double c, double phi) {
  return cpo_dual_value(lambda, best_nu(lambda, c, u, v), q, u, v, c, phi);
}

}  // namespace

DualSolution cpo_dual_solve(const GradientBundle& bundle, const FisherOperator& fvp,
                            const TrustRegionConfig& cfg) {
  if (!(cfg.phi > 0.0)) throw std::invalid_argument("cpo_dual_solve: phi must be > 0");
  DualSolution sol;
  auto op = [&fvp](const Eigen::VectorXd& x) { return fvp(x); };
  sol.h_inv_g = conjugate_gradient(op, bundle.g, cfg.cg_iters, cfg.cg_tol).x;
  sol.h_inv_gc = conjugate_gradient(op, bundle.g_c_ei, cfg.cg_iters, cfg.cg_tol).x;
  sol.q = std::max(0.0, bundle.g.dot(sol.h_inv_g));
  sol.u = bundle.g.dot(sol.h_inv_gc);
  sol.v = std::max(0.0, bundle.g_c_ei.dot(sol.h_inv_gc));
  const double c = bundle.c_surplus;

  if (c > 0.0 && (sol.v <= kTiny || c * c / (2.0 * sol.v) > cfg.phi)) {
    sol.feasible = false;
    return sol;
  }

  // One-dimensional dual over lambda with nu maximized in closed form.
  // Closed-form branch optima first, then a log grid with golden-section
  // refinement to guard the degenerate coefficient cases.
  std::vector<double> candidates;
  const double lambda_b = std::sqrt(sol.q / (2.0 * cfg.phi));
  if (lambda_b > 0.0) candidates.push_back(lambda_b);
  if (sol.v > kTiny) {
    const double a_coef = c * c / sol.v - 2.0 * cfg.phi;
    const double b_coef = sol.u * sol.u / sol.v - sol.q;
    if (a_coef < 0.0 && b_coef < 0.0) {
      candidates.push_back(std::sqrt(b_coef / a_coef));
    }
    if (c != 0.0 && -sol.u / c > 0.0) {
      candidates.push_back(-sol.u / c);  // region boundary lambda c + u = 0
    }
  }
  for (int i = 0; i <= 200; ++i) {
    candidates.push_back(std::pow(10.0, -8.0 + 16.0 * i / 200.0));
  }

  double best_lambda = kTiny;
  double best_val = -std::numeric_limits<double>::infinity();
  for (double lam : candidates) {
    if (!(lam > 0.0) || !std::isfinite(lam)) continue;
    const double val = dual_1d(lam, sol.q, sol.u, sol.v, c, cfg.phi);
    if (val > best_val) {
      best_val = val;
      best_lambda = lam;
    }
  }
  // Golden-section refinement around the best candidate.
  double lo = best_lambda / 4.0;
  double hi = best_lambda * 4.0;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - gr * (hi - lo);
  double x2 = lo + gr * (hi - lo);
  double f1 = dual_1d(x1, sol.q, sol.u, sol.v, c, cfg.phi);
  double f2 = dual_1d(x2, sol.q, sol.u, sol.v, c, cfg.phi);
  for (int it = 0; it < 200; ++it) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = dual_1d(x2, sol.q, sol.u, sol.v, c, cfg.phi);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = dual_1d(x1, sol.q, sol.u, sol.v, c, cfg.phi);
    }
  }
  const double refined = 0.5 * (lo + hi);
  if (dual_1d(refined, sol.q, sol.u, sol.v, c, cfg.phi) > best_val) {
    best_lambda = refined;
    best_val = dual_1d(refined, sol.q, sol.u, sol.v, c, cfg.phi);
  }

  sol.lambda_star = std::max(best_lambda, kTiny);
  sol.nu_star = best_nu(sol.lambda_star, c, sol.u, sol.v);
  sol.dual_value = cpo_dual_value(sol.lambda_star, sol.nu_star, sol.q, sol.u, sol.v, c, cfg.phi);
  Eigen::VectorXd dir = sol.h_inv_g - sol.nu_star * sol.h_inv_gc;
  // When the reward direction cancels against nu* times the constraint
  // direction (parallel gradients), the optimum is no movement; dividing the
  // cancellation noise by a vanishing lambda* would fabricate a step.
  const double ref = sol.h_inv_g.norm() + sol.nu_star * sol.h_inv_gc.norm();
  if (dir.norm() <= 1e-9 * std::max(ref, kTiny)) dir.setZero();
  sol.step = dir / sol.lambda_star;
  return sol;
}

Eigen::VectorXd recovery_step(const GradientBundle& bundle, const FisherOperator& fvp,
                              const TrustRegionConfig& cfg) {
  auto op = [&fvp](const Eigen::VectorXd& x) { return fvp(x); };
  const Eigen::VectorXd h_inv_gc = conjugate_gradient(op, bundle.g_c_ei, cfg.cg_iters, cfg.cg_tol).x;
  const double v = bundle.g_c_ei.dot(h_inv_gc);
  if (!(v > kTiny)) {
    throw std::runtime_error("recovery_step: constraint gradient vanishes, no descent direction");
  }
  return -std::sqrt(2.0 * cfg.phi / v) * h_inv_gc;
}

LineSearchResult line_search_apply(const SoftmaxPolicy& policy, const Eigen::VectorXd& step,
                                   const PolicyBatch& batch, const GradientBundle& bundle,
                                   const TrustRegionConfig& cfg, StepKind kind, double d) {
  check_batch(policy, batch);
  if (step.size() != policy.theta.size()) {
    throw std::invalid_argument("line_search_apply: step has wrong dimension");
  }
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(policy.n_states());
  for (int s : batch.states) weights(s) += 1.0;

  LineSearchResult res;
  res.theta = policy.theta;
  res.constraint_value = bundle.c_surplus;
  SoftmaxPolicy trial = policy;
  double scale = 1.0;
  for (int j = 0; j < cfg.max_backtracks; ++j, scale *= cfg.backtrack_coef) {
    trial.theta = policy.theta + scale * step;
    const Divergences div = kl_and_tv(trial, policy, weights);
    if (!(div.kl <= cfg.phi)) continue;
    const double constraint = surrogate_constraint_value(trial, batch, d);
    if (kind == StepKind::kFeasible && constraint > bundle.c_surplus + 1e-12) continue;
    res.accepted = true;
    res.backtracks = j;
    res.measured_kl = div.kl;
    res.constraint_value = constraint;
    res.theta = trial.theta;
    return res;
  }
  res.backtracks = cfg.max_backtracks;
  return res;
}

double pid_lambda_update(PidState& state, const PidConfig& cfg, double constraint_now, double d) {
  const double delta = constraint_now - d;
  state.integral = std::max(state.integral + delta, 0.0);
  const double deriv =
      state.prev_constraint ? std::max(constraint_now - *state.prev_constraint, 0.0) : 0.0;
  state.lambda = std::max(cfg.kp * delta + cfg.ki * state.integral + cfg.kd * deriv, 0.0);
  state.prev_constraint = constraint_now;
  return state.lambda;
}

Eigen::VectorXd pid_step(const SoftmaxPolicy& policy, const GradientBundle& bundle,
                         const PidState& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("pid_step: lr must be > 0");
  return policy.theta + lr * (bundle.g - state.lambda * bundle.g_c_ei);
}

}  // namespace mice
