#include "mice/critic.hpp"

#include <cmath>
#include <stdexcept>

namespace mice {

EiQTable::EiQTable(int n_states, int n_actions, double alpha_in, double gamma_in) {
  if (n_states < 1 || n_actions < 1) throw std::invalid_argument("EiQTable: bad shape");
  if (!(alpha_in > 0.0 && alpha_in <= 1.0)) {
    throw std::invalid_argument("EiQTable: alpha must lie in (0, 1]");
  }
  if (!(gamma_in > 0.0 && gamma_in < 1.0)) {
    throw std::invalid_argument("EiQTable: gamma must lie in (0, 1)");
  }
  q = Eigen::MatrixXd::Zero(n_states, n_actions);
  alpha = alpha_in;
  gamma = gamma_in;
  visits.setZero(n_states, n_actions);
}

namespace {

void check_transition(const EiQTable& table, const Transition& t) {
  if (t.state < 0 || t.state >= table.q.rows() || t.next_state < 0 ||
      t.next_state >= table.q.rows() || t.action < 0 || t.action >= table.q.cols()) {
    throw std::out_of_range("ei_q_update: transition indexes outside the table");
  }
  if (!t.intrinsic_cost.has_value()) {
    throw std::invalid_argument("ei_q_update: transition has no intrinsic cost filled");
  }
  if (*t.intrinsic_cost < 0.0) {
    throw std::invalid_argument("ei_q_update: negative intrinsic cost");
  }
}

double apply(EiQTable& table, const Transition& t, double target, double step) {
  table.q(t.state, t.action) = (1.0 - step) * table.q(t.state, t.action) + step * target;
  table.visits(t.state, t.action) += 1;
  table.update_count += 1;
  return target;
}

}  // namespace

double ei_q_update(EiQTable& table, const Transition& t, double beta,
                   const Eigen::VectorXd& next_action_dist) {
  check_transition(table, t);
  if (next_action_dist.size() != table.q.cols()) {
    throw std::invalid_argument("ei_q_update: next action distribution has wrong arity");
  }
  const double boot = (table.q.row(t.next_state) * next_action_dist).value();
  const double target = t.cost + beta * *t.intrinsic_cost + table.gamma * boot;
  return apply(table, t, target, table.alpha);
}

double ei_q_update_min(EiQTable& table, const Transition& t, double beta, StepRule rule,
                       const Eigen::VectorXd* bootstrap_noise) {
  check_transition(table, t);
  Eigen::VectorXd next = table.q.row(t.next_state).transpose();
  if (bootstrap_noise != nullptr) {
    if (bootstrap_noise->size() != next.size()) {
      throw std::invalid_argument("ei_q_update_min: noise vector has wrong arity");
    }
    next += *bootstrap_noise;
  }
  const double target = t.cost + beta * *t.intrinsic_cost + table.gamma * next.minCoeff();
  double step = table.alpha;
  if (rule == StepRule::kPolynomial) {
    step = 1.0 / std::pow(1.0 + static_cast<double>(table.visits(t.state, t.action)), 0.7);
  }
  return apply(table, t, target, step);
}

double modified_target(double target, double prev_estimate, double q_star_value, double alpha) {
  return target - alpha * (prev_estimate - q_star_value);
}

void beta_update(BetaState& state, double eps, double ci) {
  if (ci < 0.0) throw std::invalid_argument("beta_update: intrinsic cost must be >= 0");
  if (ci == 0.0) return;
  const double discount = std::pow(state.gamma, static_cast<double>(state.n));
  state.beta = std::max(discount * (state.beta - state.alpha * eps / ci), 0.0);
  state.last_bias = eps;
  state.n += 1;
}

QStarEstimate estimate_q_star(const CmdpSpec& spec, const PolicyTable& policy, int n_rollouts,
                              int horizon, std::uint64_t seed) {
  if (n_rollouts < 1) throw std::invalid_argument("estimate_q_star: n_rollouts must be >= 1");
  QStarEstimate est;
  est.n_rollouts = n_rollouts;
  est.horizon = horizon;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_rollouts; ++i) {
    const Trajectory traj =
        sample_trajectory(spec, policy, horizon, derive_seed(seed, 0x51u, static_cast<std::uint64_t>(i)));
    std::vector<double> costs;
    costs.reserve(traj.size());
    for (const auto& tr : traj) costs.push_back(tr.cost);
    const double g = discounted_return(costs, spec.gamma);
    sum += g;
    sum_sq += g * g;
  }
  const double n = static_cast<double>(n_rollouts);
  est.value = sum / n;
  const double var = std::max(0.0, (sum_sq - n * est.value * est.value) / std::max(1.0, n - 1.0));
  est.std_err = std::sqrt(var / n);
  est.tail_bound = std::pow(spec.gamma, horizon) * spec.C.cwiseAbs().maxCoeff() /
                   (1.0 - spec.gamma);
  return est;
}

GaeResult gae_advantages(const Trajectory& traj, const Eigen::VectorXd& v_c,
                         const Eigen::VectorXd& v_r, double beta, double gamma, double lambda) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gae: gamma must lie in (0,1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("gae: lambda must lie in [0,1]");
  GaeResult out;
  out.adv_ei.assign(traj.size(), 0.0);
  out.adv_r.assign(traj.size(), 0.0);
  double acc_c = 0.0;
  double acc_r = 0.0;
  for (std::size_t i = traj.size(); i-- > 0;) {
    const Transition& t = traj[i];
    if (t.state < 0 || t.state >= v_c.size() || t.next_state < 0 || t.next_state >= v_c.size() ||
        t.next_state >= v_r.size() || t.state >= v_r.size()) {
      throw std::out_of_range("gae: baseline does not cover a visited state");
    }
    const double ci = beta * t.intrinsic_cost.value_or(0.0);
    const double delta_c = t.cost + ci + gamma * v_c(t.next_state) - v_c(t.state);
    const double delta_r = t.reward + gamma * v_r(t.next_state) - v_r(t.state);
    acc_c = delta_c + gamma * lambda * acc_c;
    acc_r = delta_r + gamma * lambda * acc_r;
    out.adv_ei[i] = acc_c;
    out.adv_r[i] = acc_r;
  }
  return out;
}

}  // namespace mice
