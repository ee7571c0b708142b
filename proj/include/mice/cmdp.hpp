#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mice/rng.hpp"

namespace mice {

// Schema or dimension problem in a CMDP description; message carries the
// offending field.
class CmdpSchemaError : public std::runtime_error {
 public:
  explicit CmdpSchemaError(const std::string& what) : std::runtime_error(what) {}
};

// A transition row of P that does not sum to one (or has negative mass).
class StochasticityError : public CmdpSchemaError {
 public:
  StochasticityError(int s, int a, const std::string& what)
      : CmdpSchemaError(what), state(s), action(a) {}
  int state;
  int action;
};

// A cost entry below zero.
class NegativeCostError : public CmdpSchemaError {
 public:
  NegativeCostError(int s, int a, const std::string& what)
      : CmdpSchemaError(what), state(s), action(a) {}
  int state;
  int action;
};

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  double cost = 0.0;                     // extrinsic cost c^E
  std::optional<double> intrinsic_cost;  // c^I, filled by the memory stage
  int next_state = 0;
  bool terminal = false;
};

using Trajectory = std::vector<Transition>;

// Tabular policy: row s is the action distribution at state s.
using PolicyTable = Eigen::MatrixXd;

// Finite CMDP (S, A, P, R, C, rho, gamma) with cost budget d.
struct CmdpSpec {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Eigen::MatrixXd> P;  // per action: S x S, row = current state
  Eigen::MatrixXd R;               // S x A
  Eigen::MatrixXd C;               // S x A, nonnegative
  Eigen::VectorXd rho;             // initial distribution
  double gamma = 0.99;
  double d = 0.0;

  // Throws StochasticityError / NegativeCostError / CmdpSchemaError.
  void validate() const;

  // States with unit self-loop mass, zero reward and zero cost under every
  // action. Sampling treats entering one as episode end.
  std::vector<bool> absorbing_states() const;
};

struct ExactValues {
  Eigen::VectorXd v_r;
  Eigen::VectorXd v_c;
  Eigen::MatrixXd q_r;
  Eigen::MatrixXd q_c;
  Eigen::VectorXd d_pi;  // discounted visitation, sums to 1
  double j_r = 0.0;
  double j_c = 0.0;
};

// Values for a single cost table (used with modified cost tables such as
// extrinsic + beta * intrinsic).
struct ExactCostValues {
  Eigen::VectorXd v;
  Eigen::MatrixXd q;
  double j = 0.0;
};

// Dense policy evaluation by direct linear solve; residuals are refined and
// checked against 1e-10 sup norm.
ExactValues exact_policy_eval(const CmdpSpec& spec, const PolicyTable& policy);

// Same solve with an arbitrary S x A cost table in place of R/C.
ExactCostValues exact_eval_with_cost(const CmdpSpec& spec, const PolicyTable& policy,
                                     const Eigen::MatrixXd& cost_table);

// Normalized discounted state visitation (1-gamma) * (I - gamma P_pi^T)^-1 rho.
Eigen::VectorXd discounted_visitation(const CmdpSpec& spec, const PolicyTable& policy);

// Q for the cost-minimizing Bellman operator, iterated until the Bellman
// residual drops below tol.
Eigen::MatrixXd optimal_min_cost_q(const CmdpSpec& spec, double tol = 1e-12);

double discounted_return(const std::vector<double>& per_step, double gamma);

Trajectory sample_trajectory(const CmdpSpec& spec, const PolicyTable& policy, int horizon,
                             std::uint64_t seed);

// Checks that a policy table has the right shape and stochastic rows.
void validate_policy(const CmdpSpec& spec, const PolicyTable& policy);

nlohmann::json cmdp_to_json(const CmdpSpec& spec);
CmdpSpec cmdp_from_json(const nlohmann::json& j);
CmdpSpec load_cmdp(const std::string& path);
void save_cmdp(const std::string& path, const CmdpSpec& spec);

}  // namespace mice
