#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mice/cmdp.hpp"

namespace mice {

enum class FeatureMode {
  kOneHot,  // tabular features, one coordinate per state
  kCoords,  // low-dimensional geometric encoding
};

// Gridworld with randomly placed hazard cells. Stepping moves in the chosen
// direction with probability 1 - slip_prob and perpendicular with slip_prob/2
// per side; bumping a wall keeps the position. Cost accrues on transitions
// leaving a hazard cell; reaching the goal ends the episode (absorbing state
// in the exact model).
struct GridConfig {
  int width = 8;
  int height = 8;
  int n_hazards = 8;
  double hazard_cost = 1.0;
  double goal_reward = 10.0;
  double step_reward = -0.05;
  double slip_prob = 0.1;
  std::uint64_t env_seed = 2024;
  double gamma = 0.99;
  double d = 5.0;
};

class GridHazardWorld {
 public:
  explicit GridHazardWorld(const GridConfig& cfg);

  int n_states() const { return cfg_.width * cfg_.height; }
  int n_actions() const { return 4; }  // up, down, left, right
  int start_state() const { return 0; }
  int goal_state() const { return n_states() - 1; }
  const std::vector<int>& hazards() const { return hazards_; }
  const GridConfig& config() const { return cfg_; }

  CmdpSpec to_cmdp() const;
  Eigen::MatrixXd state_features(FeatureMode mode) const;

  int reset(std::uint64_t seed);
  Transition step(int action);

 private:
  int move(int state, int dir) const;

  GridConfig cfg_;
  std::vector<int> hazards_;
  std::vector<bool> is_hazard_;
  Rng rng_{0};
  int state_ = 0;
  bool done_ = true;
};

// Circular track where the state carries (position, velocity). Actions
// decelerate, hold, or accelerate; reward is proportional to the resulting
// velocity and cost accrues while the current velocity exceeds the limit.
struct ChainConfig {
  int n_positions = 8;
  int n_velocities = 4;
  int speed_limit = 2;  // velocities strictly above this cost
  double overspeed_cost = 1.0;
  double reward_scale = 1.0 / 3.0;
  double gamma = 0.99;
  double d = 2.0;
};

class ChainVelocityWorld {
 public:
  explicit ChainVelocityWorld(const ChainConfig& cfg);

  int n_states() const { return cfg_.n_positions * cfg_.n_velocities; }
  int n_actions() const { return 3; }
  int state_id(int pos, int vel) const { return pos * cfg_.n_velocities + vel; }
  const ChainConfig& config() const { return cfg_; }

  CmdpSpec to_cmdp() const;
  Eigen::MatrixXd state_features(FeatureMode mode) const;

  int reset(std::uint64_t seed);
  Transition step(int action);

 private:
  int next_state(int state, int action) const;

  ChainConfig cfg_;
  int state_ = 0;
  bool active_ = false;
};

}  // namespace mice
