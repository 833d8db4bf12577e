#include "vfd/envs.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace vfd {

double PayoffTable::at(const std::vector<int>& joint_action) const {
  return values[flat_index(joint_action)];
}

int PayoffTable::flat_index(const std::vector<int>& joint_action) const {
  if (joint_action.size() != action_counts.size()) {
    throw std::runtime_error("joint action arity mismatch");
  }
  int idx = 0;
  for (std::size_t i = 0; i < action_counts.size(); ++i) {
    const int a = joint_action[i];
    if (a < 0 || a >= action_counts[i]) {
      throw std::runtime_error("action index " + std::to_string(a) +
                               " out of range for agent " + std::to_string(i));
    }
    idx = idx * action_counts[i] + a;
  }
  return idx;
}

int PayoffTable::joint_size() const {
  int n = 1;
  for (int a : action_counts) n *= a;
  return n;
}

// --- MatrixGame --------------------------------------------------------

MatrixGame::MatrixGame(PayoffTable payoff) : payoff_(std::move(payoff)) {
  for (double v : payoff_.values) {
    if (!std::isfinite(v)) throw std::runtime_error("payoff not finite");
  }
  spec_.n_agents = static_cast<int>(payoff_.action_counts.size());
  spec_.action_counts = payoff_.action_counts;
  spec_.obs_dim = 1;
  spec_.state_dim = 1;
  spec_.horizon = 1;
}

ResetResult MatrixGame::reset(std::optional<std::uint64_t>) {
  done_ = false;
  return {std::vector<std::vector<double>>(spec_.n_agents, {0.0}), {0.0}};
}

Transition MatrixGame::step(const std::vector<int>& joint_action) {
  if (done_) throw std::runtime_error("step on terminal episode");
  const double r = payoff_.at(joint_action);
  done_ = true;
  Transition tr;
  tr.joint_obs.assign(spec_.n_agents, {0.0});
  tr.state = {0.0};
  tr.joint_action = joint_action;
  tr.reward = r;
  tr.next_joint_obs.assign(spec_.n_agents, {0.0});
  tr.next_state = {0.0};
  tr.terminal = true;
  return tr;
}

std::unique_ptr<Env> MatrixGame::clone() const {
  return std::make_unique<MatrixGame>(*this);
}

// --- LatentStateMatrixGame ----------------------------------------------

LatentStateMatrixGame::LatentStateMatrixGame(
    std::vector<PayoffTable> payoff_per_state, std::vector<double> initial_dist,
    double rho, int horizon, std::uint64_t seed)
    : payoffs_(std::move(payoff_per_state)),
      p0_(std::move(initial_dist)),
      rho_(rho),
      rng_(seed) {
  if (payoffs_.empty()) throw std::runtime_error("no payoff tables");
  if (p0_.size() != payoffs_.size()) {
    throw std::runtime_error("initial distribution size mismatch");
  }
  double psum = 0.0;
  for (double p : p0_) {
    if (p < 0.0) throw std::runtime_error("negative initial probability");
    psum += p;
  }
  if (std::fabs(psum - 1.0) > 1e-9) {
    throw std::runtime_error("initial distribution does not sum to 1");
  }
  if (rho_ < 0.0 || rho_ > 1.0) throw std::runtime_error("rho outside [0,1]");
  if (horizon < 1) throw std::runtime_error("horizon must be >= 1");
  for (std::size_t s = 1; s < payoffs_.size(); ++s) {
    if (payoffs_[s].action_counts != payoffs_[0].action_counts) {
      throw std::runtime_error("per-state payoff shapes differ");
    }
  }
  spec_.n_agents = static_cast<int>(payoffs_[0].action_counts.size());
  spec_.action_counts = payoffs_[0].action_counts;
  spec_.state_dim = n_states();
  spec_.horizon = horizon;
  spec_.obs_dim = n_states() + horizon;  // state guess one-hot ++ step one-hot
}

std::vector<std::vector<double>> LatentStateMatrixGame::sample_joint_obs(
    int step_index) {
  std::vector<std::vector<double>> obs(spec_.n_agents);
  for (int i = 0; i < spec_.n_agents; ++i) {
    std::vector<double> o(spec_.obs_dim, 0.0);
    int guess = state_;
    if (rng_.uniform01() >= rho_) guess = rng_.uniform_int(n_states());
    o[guess] = 1.0;
    if (step_index < spec_.horizon) o[n_states() + step_index] = 1.0;
    obs[i] = std::move(o);
  }
  return obs;
}

ResetResult LatentStateMatrixGame::reset(std::optional<std::uint64_t> seed) {
  if (seed) rng_ = Rng(*seed);
  double u = rng_.uniform01();
  state_ = n_states() - 1;
  for (int s = 0; s < n_states(); ++s) {
    if (u < p0_[s]) {
      state_ = s;
      break;
    }
    u -= p0_[s];
  }
  step_ = 0;
  done_ = false;
  std::vector<double> state_vec(n_states(), 0.0);
  state_vec[state_] = 1.0;
  current_obs_ = sample_joint_obs(0);
  return {current_obs_, std::move(state_vec)};
}

Transition LatentStateMatrixGame::step(const std::vector<int>& joint_action) {
  if (done_) throw std::runtime_error("step on terminal episode");
  Transition tr;
  tr.joint_obs = current_obs_;
  tr.joint_action = joint_action;
  tr.reward = payoffs_[state_].at(joint_action);
  std::vector<double> state_vec(n_states(), 0.0);
  state_vec[state_] = 1.0;
  tr.state = state_vec;
  tr.next_state = state_vec;  // latent state is episode-static
  step_ += 1;
  tr.terminal = step_ >= spec_.horizon;
  done_ = tr.terminal;
  if (tr.terminal) {
    tr.next_joint_obs.assign(spec_.n_agents,
                             std::vector<double>(spec_.obs_dim, 0.0));
  } else {
    tr.next_joint_obs = sample_joint_obs(step_);
  }
  current_obs_ = tr.next_joint_obs;
  return tr;
}

std::unique_ptr<Env> LatentStateMatrixGame::clone() const {
  return std::make_unique<LatentStateMatrixGame>(*this);
}

std::vector<double> LatentStateMatrixGame::state_posterior(
    const std::vector<std::vector<int>>& guesses_per_agent) const {
  const int S = n_states();
  // channel likelihood: Pr(guess == s | state s) = rho + (1-rho)/S,
  //                     Pr(guess == g | state s) = (1-rho)/S for g != s
  const double hit = rho_ + (1.0 - rho_) / S;
  const double miss = (1.0 - rho_) / S;
  std::vector<double> post(S);
  double norm = 0.0;
  for (int s = 0; s < S; ++s) {
    double like = p0_[s];
    for (const auto& guesses : guesses_per_agent) {
      for (int g : guesses) {
        if (g < 0 || g >= S) {
          throw std::runtime_error("guess index out of range");
        }
        like *= (g == s) ? hit : miss;
      }
    }
    post[s] = like;
    norm += like;
  }
  if (norm <= 0.0) {
    throw std::runtime_error("zero-probability history in state_posterior");
  }
  for (double& p : post) p /= norm;
  return post;
}

int LatentStateMatrixGame::guess_from_obs(const std::vector<double>& obs) const {
  for (int s = 0; s < n_states(); ++s) {
    if (obs[s] > 0.5) return s;
  }
  throw std::runtime_error("observation has no state guess set");
}

// --- JSON fixtures -------------------------------------------------------

namespace {

using nlohmann::json;

void flatten_payoff(const json& node, int depth, std::vector<int>& shape,
                    std::vector<double>& out) {
  if (node.is_array()) {
    const int len = static_cast<int>(node.size());
    if (len == 0) throw std::runtime_error("payoff: empty array");
    if (depth == static_cast<int>(shape.size())) {
      shape.push_back(len);
    } else if (shape[depth] != len) {
      throw std::runtime_error("payoff: ragged nested arrays");
    }
    for (const auto& child : node) flatten_payoff(child, depth + 1, shape, out);
  } else if (node.is_number()) {
    if (depth != static_cast<int>(shape.size())) {
      throw std::runtime_error("payoff: inconsistent nesting depth");
    }
    out.push_back(node.get<double>());
  } else {
    throw std::runtime_error("payoff: expected nested arrays of numbers");
  }
}

PayoffTable parse_payoff(const json& node) {
  PayoffTable table;
  flatten_payoff(node, 0, table.action_counts, table.values);
  if (table.action_counts.size() < 2) {
    throw std::runtime_error("payoff must cover at least 2 agents");
  }
  for (int a : table.action_counts) {
    if (a < 2) throw std::runtime_error("all action counts must be >= 2");
  }
  if (static_cast<int>(table.values.size()) != table.joint_size()) {
    throw std::runtime_error("payoff: ragged nested arrays");
  }
  return table;
}

}  // namespace

std::unique_ptr<Env> env_from_json_text(const std::string& text,
                                        std::uint64_t seed) {
  const json j = json::parse(text);
  const std::string type = j.at("type").get<std::string>();
  if (type == "matrix") {
    return std::make_unique<MatrixGame>(parse_payoff(j.at("payoff")));
  }
  if (type == "latent") {
    std::vector<PayoffTable> tables;
    for (const auto& p : j.at("payoff_per_state")) {
      tables.push_back(parse_payoff(p));
    }
    std::vector<double> p0 = j.at("p0").get<std::vector<double>>();
    const double rho = j.at("rho").get<double>();
    const int horizon = j.at("horizon").get<int>();
    return std::make_unique<LatentStateMatrixGame>(std::move(tables),
                                                   std::move(p0), rho, horizon,
                                                   seed);
  }
  throw std::runtime_error("unknown env type '" + type + "'");
}

PayoffTable penalty_payoff() {
  return PayoffTable{{3, 3},
                     {8, -12, -12, -12, 0, 0, -12, 0, 0}};
}

}  // namespace vfd
