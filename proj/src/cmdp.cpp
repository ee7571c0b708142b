#include "mice/cmdp.hpp"

#include <cmath>
#include <sstream>

#include "mice/json_io.hpp"

namespace mice {
namespace {

constexpr double kRowSumTol = 1e-9;
constexpr double kSolveTol = 1e-10;

std::string loc(int s, int a) {
  std::ostringstream os;
  os << "(s=" << s << ",a=" << a << ")";
  return os.str();
}

// P_pi, r_pi, c_pi for a fixed policy.
struct PolicyInduced {
  Eigen::MatrixXd p;
  Eigen::VectorXd r;
  Eigen::VectorXd c;
};

PolicyInduced induce(const CmdpSpec& spec, const PolicyTable& policy) {
  const int S = spec.n_states;
  PolicyInduced out;
  out.p = Eigen::MatrixXd::Zero(S, S);
  out.r = Eigen::VectorXd::Zero(S);
  out.c = Eigen::VectorXd::Zero(S);
  for (int a = 0; a < spec.n_actions; ++a) {
    out.p += policy.col(a).asDiagonal() * spec.P[a];
  }
  out.r = (spec.R.array() * policy.array()).rowwise().sum();
  out.c = (spec.C.array() * policy.array()).rowwise().sum();
  return out;
}

// Solves (I - gamma P) x = b with one step of iterative refinement and a
// residual guard.
Eigen::VectorXd solve_bellman(const Eigen::MatrixXd& p, double gamma, const Eigen::VectorXd& b) {
  const Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(p.rows(), p.cols()) - gamma * p;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd x = lu.solve(b);
  x += lu.solve(b - A * x);
  const double resid = (A * x - b).lpNorm<Eigen::Infinity>();
  if (!(resid <= kSolveTol * std::max(1.0, b.lpNorm<Eigen::Infinity>()))) {
    throw std::runtime_error("policy evaluation solve residual too large: " +
                             std::to_string(resid));
  }
  return x;
}

Eigen::MatrixXd q_from_v(const CmdpSpec& spec, const Eigen::MatrixXd& per_step,
                         const Eigen::VectorXd& v) {
  Eigen::MatrixXd q(spec.n_states, spec.n_actions);
  for (int a = 0; a < spec.n_actions; ++a) {
    q.col(a) = per_step.col(a) + spec.gamma * (spec.P[a] * v);
  }
  return q;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw CmdpSchemaError(what);
}

}  // namespace

void CmdpSpec::validate() const {
  require(n_states >= 1, "n_states must be >= 1");
  require(n_actions >= 1, "n_actions must be >= 1");
  require(static_cast<int>(P.size()) == n_actions,
          "P must hold n_actions matrices, got " + std::to_string(P.size()));
  for (int a = 0; a < n_actions; ++a) {
    require(P[a].rows() == n_states && P[a].cols() == n_states,
            "P[" + std::to_string(a) + "] must be n_states x n_states");
    for (int s = 0; s < n_states; ++s) {
      double sum = 0.0;
      for (int t = 0; t < n_states; ++t) {
        const double p = P[a](s, t);
        if (p < 0.0 || !std::isfinite(p)) {
          throw StochasticityError(s, a, "negative or non-finite transition mass at " + loc(s, a));
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kRowSumTol) {
        throw StochasticityError(
            s, a, "transition row at " + loc(s, a) + " sums to " + format_real(sum));
      }
    }
  }
  require(R.rows() == n_states && R.cols() == n_actions, "R must be n_states x n_actions");
  require(C.rows() == n_states && C.cols() == n_actions, "C must be n_states x n_actions");
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      require(std::isfinite(R(s, a)), "non-finite reward at " + loc(s, a));
      if (!(C(s, a) >= 0.0) || !std::isfinite(C(s, a))) {
        throw NegativeCostError(s, a, "cost at " + loc(s, a) + " must be >= 0, got " +
                                          format_real(C(s, a)));
      }
    }
  }
  require(rho.size() == n_states, "rho must have n_states entries");
  double rho_sum = 0.0;
  for (int s = 0; s < n_states; ++s) {
    require(rho(s) >= 0.0 && std::isfinite(rho(s)),
            "rho[" + std::to_string(s) + "] must be >= 0");
    rho_sum += rho(s);
  }
  require(std::abs(rho_sum - 1.0) <= kRowSumTol,
          "rho sums to " + format_real(rho_sum) + ", expected 1");
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(std::isfinite(d), "d must be finite");
}

std::vector<bool> CmdpSpec::absorbing_states() const {
  std::vector<bool> out(static_cast<std::size_t>(n_states), false);
  for (int s = 0; s < n_states; ++s) {
    bool absorbing = true;
    for (int a = 0; a < n_actions && absorbing; ++a) {
      absorbing = P[a](s, s) == 1.0 && R(s, a) == 0.0 && C(s, a) == 0.0;
    }
    out[static_cast<std::size_t>(s)] = absorbing;
  }
  return out;
}

void validate_policy(const CmdpSpec& spec, const PolicyTable& policy) {
  if (policy.rows() != spec.n_states || policy.cols() != spec.n_actions) {
    throw CmdpSchemaError("policy must be n_states x n_actions");
  }
  for (int s = 0; s < spec.n_states; ++s) {
    double sum = 0.0;
    for (int a = 0; a < spec.n_actions; ++a) {
      if (policy(s, a) < 0.0 || !std::isfinite(policy(s, a))) {
        throw CmdpSchemaError("policy has negative mass at " + loc(s, a));
      }
      sum += policy(s, a);
    }
    if (std::abs(sum - 1.0) > kRowSumTol) {
      throw CmdpSchemaError("policy row " + std::to_string(s) + " sums to " + format_real(sum));
    }
  }
}

ExactValues exact_policy_eval(const CmdpSpec& spec, const PolicyTable& policy) {
  validate_policy(spec, policy);
  const PolicyInduced ind = induce(spec, policy);
  ExactValues out;
  out.v_r = solve_bellman(ind.p, spec.gamma, ind.r);
  out.v_c = solve_bellman(ind.p, spec.gamma, ind.c);
  out.q_r = q_from_v(spec, spec.R, out.v_r);
  out.q_c = q_from_v(spec, spec.C, out.v_c);
  out.d_pi = discounted_visitation(spec, policy);
  out.j_r = spec.rho.dot(out.v_r);
  out.j_c = spec.rho.dot(out.v_c);
  return out;
}

ExactCostValues exact_eval_with_cost(const CmdpSpec& spec, const PolicyTable& policy,
                                     const Eigen::MatrixXd& cost_table) {
  validate_policy(spec, policy);
  if (cost_table.rows() != spec.n_states || cost_table.cols() != spec.n_actions) {
    throw CmdpSchemaError("cost table must be n_states x n_actions");
  }
  const PolicyInduced ind = induce(spec, policy);
  const Eigen::VectorXd c_pi = (cost_table.array() * policy.array()).rowwise().sum();
  ExactCostValues out;
  out.v = solve_bellman(ind.p, spec.gamma, c_pi);
  out.q = q_from_v(spec, cost_table, out.v);
  out.j = spec.rho.dot(out.v);
  return out;
}

Eigen::VectorXd discounted_visitation(const CmdpSpec& spec, const PolicyTable& policy) {
  validate_policy(spec, policy);
  const PolicyInduced ind = induce(spec, policy);
  const Eigen::VectorXd x = solve_bellman(ind.p.transpose(), spec.gamma, spec.rho);
  Eigen::VectorXd d_pi = (1.0 - spec.gamma) * x;
  const double total = d_pi.sum();
  if (std::abs(total - 1.0) > 1e-10) {
    throw std::runtime_error("discounted visitation sums to " + format_real(total));
  }
  return d_pi;
}

Eigen::MatrixXd optimal_min_cost_q(const CmdpSpec& spec, double tol) {
  spec.validate();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(spec.n_states, spec.n_actions);
  // Residual contracts by gamma per sweep, so the iteration count is bounded
  // up front instead of trusting the loop to exit.
  const double c_max = spec.C.cwiseAbs().maxCoeff() + 1.0;
  const int max_sweeps =
      static_cast<int>(std::ceil(std::log(tol / (c_max / (1.0 - spec.gamma))) /
                                 std::log(spec.gamma))) +
      64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const Eigen::VectorXd v = q.rowwise().minCoeff();
    const Eigen::MatrixXd next = q_from_v(spec, spec.C, v);
    const double resid = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (resid * spec.gamma / (1.0 - spec.gamma) <= tol) {
      return q;
    }
  }
  throw std::runtime_error("min-cost value iteration failed to reach tolerance");
}

double discounted_return(const std::vector<double>& per_step, double gamma) {
  double acc = 0.0;
  for (std::size_t i = per_step.size(); i-- > 0;) {
    acc = per_step[i] + gamma * acc;
  }
  return acc;
}

Trajectory sample_trajectory(const CmdpSpec& spec, const PolicyTable& policy, int horizon,
                             std::uint64_t seed) {
  validate_policy(spec, policy);
  if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
  const std::vector<bool> absorbing = spec.absorbing_states();
  Rng rng(seed);

  std::vector<double> rho_w(spec.rho.data(), spec.rho.data() + spec.rho.size());
  int s = rng.categorical(rho_w);
  Trajectory traj;
  traj.reserve(static_cast<std::size_t>(horizon));
  std::vector<double> pol_w(static_cast<std::size_t>(spec.n_actions));
  std::vector<double> row_w(static_cast<std::size_t>(spec.n_states));
  for (int t = 0; t < horizon; ++t) {
    if (absorbing[static_cast<std::size_t>(s)]) break;
    for (int a = 0; a < spec.n_actions; ++a) pol_w[static_cast<std::size_t>(a)] = policy(s, a);
    const int a = rng.categorical(pol_w);
    for (int ns = 0; ns < spec.n_states; ++ns) row_w[static_cast<std::size_t>(ns)] = spec.P[a](s, ns);
    const int ns = rng.categorical(row_w);
    Transition tr;
    tr.state = s;
    tr.action = a;
    tr.reward = spec.R(s, a);
    tr.cost = spec.C(s, a);
    tr.next_state = ns;
    tr.terminal = absorbing[static_cast<std::size_t>(ns)] || t + 1 == horizon;
    traj.push_back(tr);
    s = ns;
  }
  return traj;
}

nlohmann::json cmdp_to_json(const CmdpSpec& spec) {
  nlohmann::json j;
  j["n_states"] = spec.n_states;
  j["n_actions"] = spec.n_actions;
  nlohmann::json p = nlohmann::json::array();
  for (int s = 0; s < spec.n_states; ++s) {
    nlohmann::json per_state = nlohmann::json::array();
    for (int a = 0; a < spec.n_actions; ++a) {
      nlohmann::json row = nlohmann::json::array();
      for (int t = 0; t < spec.n_states; ++t) row.push_back(spec.P[a](s, t));
      per_state.push_back(row);
    }
    p.push_back(per_state);
  }
  j["P"] = p;
  nlohmann::json r = nlohmann::json::array();
  nlohmann::json c = nlohmann::json::array();
  for (int s = 0; s < spec.n_states; ++s) {
    nlohmann::json rr = nlohmann::json::array();
    nlohmann::json cc = nlohmann::json::array();
    for (int a = 0; a < spec.n_actions; ++a) {
      rr.push_back(spec.R(s, a));
      cc.push_back(spec.C(s, a));
    }
    r.push_back(rr);
    c.push_back(cc);
  }
  j["R"] = r;
  j["C"] = c;
  nlohmann::json rho = nlohmann::json::array();
  for (int s = 0; s < spec.n_states; ++s) rho.push_back(spec.rho(s));
  j["rho"] = rho;
  j["gamma"] = spec.gamma;
  j["d"] = spec.d;
  return j;
}

namespace {

double num_field(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw CmdpSchemaError(where + " must be a number");
  return j.get<double>();
}

}  // namespace

CmdpSpec cmdp_from_json(const nlohmann::json& j) {
  for (const char* key : {"n_states", "n_actions", "P", "R", "C", "rho", "gamma", "d"}) {
    if (!j.contains(key)) throw CmdpSchemaError(std::string("missing field: ") + key);
  }
  CmdpSpec spec;
  if (!j["n_states"].is_number_integer() || !j["n_actions"].is_number_integer()) {
    throw CmdpSchemaError("n_states and n_actions must be integers");
  }
  spec.n_states = j["n_states"].get<int>();
  spec.n_actions = j["n_actions"].get<int>();
  if (spec.n_states < 1 || spec.n_actions < 1) {
    throw CmdpSchemaError("n_states and n_actions must be >= 1");
  }
  const auto& P = j["P"];
  if (!P.is_array() || static_cast<int>(P.size()) != spec.n_states) {
    throw CmdpSchemaError("P must be an array of n_states entries (P[s][a][s'])");
  }
  spec.P.assign(static_cast<std::size_t>(spec.n_actions),
                Eigen::MatrixXd::Zero(spec.n_states, spec.n_states));
  for (int s = 0; s < spec.n_states; ++s) {
    const auto& per_state = P[static_cast<std::size_t>(s)];
    if (!per_state.is_array() || static_cast<int>(per_state.size()) != spec.n_actions) {
      throw CmdpSchemaError("P[" + std::to_string(s) + "] must hold n_actions rows");
    }
    for (int a = 0; a < spec.n_actions; ++a) {
      const auto& row = per_state[static_cast<std::size_t>(a)];
      if (!row.is_array() || static_cast<int>(row.size()) != spec.n_states) {
        throw CmdpSchemaError("P" + loc(s, a) + " must hold n_states probabilities");
      }
      for (int t = 0; t < spec.n_states; ++t) {
        spec.P[static_cast<std::size_t>(a)](s, t) =
            num_field(row[static_cast<std::size_t>(t)], "P" + loc(s, a));
      }
    }
  }
  auto read_table = [&](const char* key) {
    const auto& tab = j[key];
    if (!tab.is_array() || static_cast<int>(tab.size()) != spec.n_states) {
      throw CmdpSchemaError(std::string(key) + " must be n_states x n_actions");
    }
    Eigen::MatrixXd m(spec.n_states, spec.n_actions);
    for (int s = 0; s < spec.n_states; ++s) {
      const auto& row = tab[static_cast<std::size_t>(s)];
      if (!row.is_array() || static_cast<int>(row.size()) != spec.n_actions) {
        throw CmdpSchemaError(std::string(key) + "[" + std::to_string(s) +
                              "] must hold n_actions entries");
      }
      for (int a = 0; a < spec.n_actions; ++a) {
        m(s, a) = num_field(row[static_cast<std::size_t>(a)], std::string(key) + loc(s, a));
      }
    }
    return m;
  };
  spec.R = read_table("R");
  spec.C = read_table("C");
  const auto& rho = j["rho"];
  if (!rho.is_array() || static_cast<int>(rho.size()) != spec.n_states) {
    throw CmdpSchemaError("rho must hold n_states entries");
  }
  spec.rho.resize(spec.n_states);
  for (int s = 0; s < spec.n_states; ++s) {
    spec.rho(s) = num_field(rho[static_cast<std::size_t>(s)], "rho[" + std::to_string(s) + "]");
  }
  spec.gamma = num_field(j["gamma"], "gamma");
  spec.d = num_field(j["d"], "d");
  spec.validate();
  return spec;
}

CmdpSpec load_cmdp(const std::string& path) { return cmdp_from_json(load_json_file(path)); }

void save_cmdp(const std::string& path, const CmdpSpec& spec) {
  spec.validate();
  write_json_file(path, cmdp_to_json(spec));
}

}  // namespace mice
