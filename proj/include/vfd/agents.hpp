#pragma once

#include <string>
#include <vector>

#include "vfd/envs.hpp"
#include "vfd/nn.hpp"
#include "vfd/optim.hpp"

namespace vfd {

// Fixed-length stack of the last K (observation, previous-action one-hot)
// pairs, zero-padded before K steps. Flattened feature length is
// K * (obs_dim + action_count).
class HistoryWindow {
 public:
  HistoryWindow(int capacity, int obs_dim, int action_count);

  void reset();
  // prev_action == -1 encodes "no previous action" (zero one-hot).
  void push(const std::vector<double>& obs, int prev_action);

  // Oldest to newest, padded slots first.
  const std::vector<double>& features() const { return features_; }
  int feature_dim() const { return static_cast<int>(features_.size()); }

 private:
  int capacity_;
  int obs_dim_;
  int action_count_;
  int filled_ = 0;
  std::vector<double> features_;
};

struct AgentConfig {
  int window = 4;
  int hidden = 64;
  bool share_parameters = true;
};

// Per-agent (q over actions, v = max q, u = q - v); all tape-attached.
struct UtilityTriple {
  Tensor q;
  Tensor v;
  Tensor u;
};

UtilityTriple decompose(Tape& t, const Tensor& q);

// epsilon-greedy over a utility vector; greedy ties break to the lowest
// index.
int select_action(const std::vector<double>& q, double epsilon, Rng& rng);

// Flattened concatenation of all agents' window features (the joint-history
// input of the mixing networks).
std::vector<double> flat_history(const std::vector<HistoryWindow>& windows);

// Utility networks Q_i(h_i, .) for all agents: window-MLP with optional
// parameter sharing (agent-ID one-hot appended to the input). Sharing
// requires homogeneous observation/action spaces and falls back to
// per-agent parameters otherwise.
class AgentModel {
 public:
  AgentModel(const AgentConfig& cfg, const EnvSpec& env_spec);

  void init_params(ParamStore& store, Rng& rng) const;
  Tensor utilities(Tape& t, const ParamStore& store, int agent,
                   const HistoryWindow& window) const;

  std::vector<HistoryWindow> make_windows() const;
  bool shared() const { return shared_; }
  int n_agents() const { return env_spec_.n_agents; }
  const EnvSpec& env_spec() const { return env_spec_; }
  // Total flattened joint-history feature length (all agents).
  int joint_history_dim() const;

 private:
  AgentConfig cfg_;
  EnvSpec env_spec_;
  bool shared_;
  std::vector<Mlp2> nets_;  // one if shared
};

}  // namespace vfd
