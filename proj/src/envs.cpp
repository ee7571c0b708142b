#include "mice/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mice {
namespace {

// dir: 0 up (y-1), 1 down (y+1), 2 left (x-1), 3 right (x+1)
constexpr int kDx[4] = {0, 0, -1, 1};
constexpr int kDy[4] = {-1, 1, 0, 0};
constexpr int kPerp[4][2] = {{2, 3}, {2, 3}, {0, 1}, {0, 1}};

}  // namespace

GridHazardWorld::GridHazardWorld(const GridConfig& cfg) : cfg_(cfg) {
  if (cfg.width < 2 || cfg.height < 2) throw std::invalid_argument("grid must be at least 2x2");
  if (!(cfg.slip_prob >= 0.0 && cfg.slip_prob <= 1.0)) {
    throw std::invalid_argument("slip_prob must lie in [0, 1]");
  }
  if (cfg.hazard_cost < 0.0) throw std::invalid_argument("hazard_cost must be >= 0");
  const int cells = n_states();
  if (cfg.n_hazards < 0 || cfg.n_hazards > cells - 2) {
    throw std::invalid_argument("n_hazards must leave room for start and goal");
  }
  // Hazard cells drawn without replacement, never on start or goal.
  std::vector<int> pool;
  pool.reserve(static_cast<std::size_t>(cells - 2));
  for (int s = 0; s < cells; ++s) {
    if (s != start_state() && s != goal_state()) pool.push_back(s);
  }
  Rng rng(derive_seed(cfg.env_seed, 0x6824u));
  for (int i = 0; i < cfg.n_hazards; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) +
                          static_cast<std::size_t>(rng.next_u64() % (pool.size() - static_cast<std::size_t>(i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  hazards_.assign(pool.begin(), pool.begin() + cfg.n_hazards);
  std::sort(hazards_.begin(), hazards_.end());
  is_hazard_.assign(static_cast<std::size_t>(cells), false);
  for (int h : hazards_) is_hazard_[static_cast<std::size_t>(h)] = true;
}

int GridHazardWorld::move(int state, int dir) const {
  const int x = state % cfg_.width;
  const int y = state / cfg_.width;
  const int nx = std::clamp(x + kDx[dir], 0, cfg_.width - 1);
  const int ny = std::clamp(y + kDy[dir], 0, cfg_.height - 1);
  return ny * cfg_.width + nx;
}

CmdpSpec GridHazardWorld::to_cmdp() const {
  CmdpSpec spec;
  spec.n_states = n_states();
  spec.n_actions = n_actions();
  spec.gamma = cfg_.gamma;
  spec.d = cfg_.d;
  spec.P.assign(4, Eigen::MatrixXd::Zero(spec.n_states, spec.n_states));
  spec.R = Eigen::MatrixXd::Zero(spec.n_states, spec.n_actions);
  spec.C = Eigen::MatrixXd::Zero(spec.n_states, spec.n_actions);
  spec.rho = Eigen::VectorXd::Zero(spec.n_states);
  spec.rho(start_state()) = 1.0;
  const int goal = goal_state();
  for (int s = 0; s < spec.n_states; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {
        spec.P[a](s, s) = 1.0;
        continue;
      }
      spec.P[a](s, move(s, a)) += 1.0 - cfg_.slip_prob;
      spec.P[a](s, move(s, kPerp[a][0])) += cfg_.slip_prob / 2.0;
      spec.P[a](s, move(s, kPerp[a][1])) += cfg_.slip_prob / 2.0;
      spec.R(s, a) = cfg_.step_reward + cfg_.goal_reward * spec.P[a](s, goal);
      spec.C(s, a) = is_hazard_[static_cast<std::size_t>(s)] ? cfg_.hazard_cost : 0.0;
    }
  }
  spec.validate();
  return spec;
}

Eigen::MatrixXd GridHazardWorld::state_features(FeatureMode mode) const {
  const int S = n_states();
  if (mode == FeatureMode::kOneHot) {
    return Eigen::MatrixXd::Identity(S, S);
  }
  // Normalized coordinates plus hazard flags for the four neighbor cells.
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(S, 6);
  for (int s = 0; s < S; ++s) {
    f(s, 0) = static_cast<double>(s % cfg_.width) / cfg_.width;
    f(s, 1) = static_cast<double>(s / cfg_.width) / cfg_.height;
    for (int dir = 0; dir < 4; ++dir) {
      const int n = move(s, dir);
      f(s, 2 + dir) = (n != s && is_hazard_[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
    }
  }
  return f;
}

int GridHazardWorld::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  state_ = start_state();
  done_ = false;
  return state_;
}

Transition GridHazardWorld::step(int action) {
  if (done_) throw std::logic_error("step called on a finished episode");
  if (action < 0 || action >= 4) throw std::out_of_range("grid action out of range");
  const double u = rng_.uniform();
  int dir = action;
  if (u >= 1.0 - cfg_.slip_prob) {
    dir = (u < 1.0 - cfg_.slip_prob / 2.0) ? kPerp[action][0] : kPerp[action][1];
  }
  const int next = move(state_, dir);
  Transition t;
  t.state = state_;
  t.action = action;
  t.reward = cfg_.step_reward + (next == goal_state() ? cfg_.goal_reward : 0.0);
  t.cost = is_hazard_[static_cast<std::size_t>(state_)] ? cfg_.hazard_cost : 0.0;
  t.next_state = next;
  t.terminal = next == goal_state();
  state_ = next;
  done_ = t.terminal;
  return t;
}

ChainVelocityWorld::ChainVelocityWorld(const ChainConfig& cfg) : cfg_(cfg) {
  if (cfg.n_positions < 2 || cfg.n_velocities < 2) {
    throw std::invalid_argument("chain needs at least 2 positions and 2 velocity levels");
  }
  if (cfg.speed_limit < 0 || cfg.speed_limit >= cfg.n_velocities) {
    throw std::invalid_argument("speed_limit must name a valid velocity level");
  }
  if (cfg.overspeed_cost < 0.0) throw std::invalid_argument("overspeed_cost must be >= 0");
}

int ChainVelocityWorld::next_state(int state, int action) const {
  const int pos = state / cfg_.n_velocities;
  const int vel = state % cfg_.n_velocities;
  const int nvel = std::clamp(vel + (action - 1), 0, cfg_.n_velocities - 1);
  const int npos = (pos + nvel) % cfg_.n_positions;
  return state_id(npos, nvel);
}

CmdpSpec ChainVelocityWorld::to_cmdp() const {
  CmdpSpec spec;
  spec.n_states = n_states();
  spec.n_actions = n_actions();
  spec.gamma = cfg_.gamma;
  spec.d = cfg_.d;
  spec.P.assign(static_cast<std::size_t>(n_actions()),
                Eigen::MatrixXd::Zero(spec.n_states, spec.n_states));
  spec.R = Eigen::MatrixXd::Zero(spec.n_states, spec.n_actions);
  spec.C = Eigen::MatrixXd::Zero(spec.n_states, spec.n_actions);
  spec.rho = Eigen::VectorXd::Zero(spec.n_states);
  spec.rho(state_id(0, 0)) = 1.0;
  for (int s = 0; s < spec.n_states; ++s) {
    const int vel = s % cfg_.n_velocities;
    for (int a = 0; a < n_actions(); ++a) {
      const int ns = next_state(s, a);
      spec.P[static_cast<std::size_t>(a)](s, ns) = 1.0;
      spec.R(s, a) = cfg_.reward_scale * static_cast<double>(ns % cfg_.n_velocities);
      spec.C(s, a) = vel > cfg_.speed_limit ? cfg_.overspeed_cost : 0.0;
    }
  }
  spec.validate();
  return spec;
}

Eigen::MatrixXd ChainVelocityWorld::state_features(FeatureMode mode) const {
  const int S = n_states();
  if (mode == FeatureMode::kOneHot) {
    return Eigen::MatrixXd::Identity(S, S);
  }
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(S, 2);
  for (int s = 0; s < S; ++s) {
    f(s, 0) = static_cast<double>(s / cfg_.n_velocities) / cfg_.n_positions;
    f(s, 1) = static_cast<double>(s % cfg_.n_velocities) / cfg_.n_velocities;
  }
  return f;
}

int ChainVelocityWorld::reset(std::uint64_t seed) {
  (void)seed;  // transitions are deterministic; kept for interface parity
  state_ = state_id(0, 0);
  active_ = true;
  return state_;
}

Transition ChainVelocityWorld::step(int action) {
  if (!active_) throw std::logic_error("step called before reset");
  if (action < 0 || action >= n_actions()) throw std::out_of_range("chain action out of range");
  const int vel = state_ % cfg_.n_velocities;
  const int ns = next_state(state_, action);
  Transition t;
  t.state = state_;
  t.action = action;
  t.reward = cfg_.reward_scale * static_cast<double>(ns % cfg_.n_velocities);
  t.cost = vel > cfg_.speed_limit ? cfg_.overspeed_cost : 0.0;
  t.next_state = ns;
  t.terminal = false;
  state_ = ns;
  return t;
}

}  // namespace mice
