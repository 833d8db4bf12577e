#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vfd/agents.hpp"
#include "vfd/envs.hpp"
#include "vfd/mixers.hpp"
#include "vfd/optim.hpp"

namespace vfd {

struct TrainConfig {
  double lr = 5e-4;
  double gamma = 0.99;
  int batch_episodes = 32;
  int target_sync_interval = 200;  // env steps
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_anneal_fraction = 0.2;  // of total_steps
  long total_steps = 50000;
  double anneal_lambda_start = 1.0;
  double anneal_fraction = 0.05;  // of total_steps
  bool anneal_detach_fixee = true;
  int buffer_episodes = 5000;
  std::uint64_t seed = 0;
};

// Ring buffer of whole episodes with uniform sampling; partially-written
// episodes never enter it because push takes complete episodes only.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);
  void push(Episode episode);
  int size() const { return static_cast<int>(episodes_.size()); }
  const Episode& sample(Rng& rng) const;

 private:
  int capacity_;
  int next_ = 0;
  std::vector<Episode> episodes_;
};

double epsilon_at(long step, const TrainConfig& cfg);

// lambda_start * max(0, 1 - step / (anneal_fraction * total_steps));
// exactly 0 after the window (and always 0 when the fraction is 0).
double anneal_weight(long step, const TrainConfig& cfg);

// 0.5 * (r + gamma * max_next_q * (1-terminal) - q)^2 with the target branch
// held out of the gradient.
Tensor td_loss(Tape& t, const Tensor& q, double reward, double gamma,
               const Tensor& max_next_q, bool terminal);

// Decentralized max: each agent's greedy action from its own target
// utilities, then the joint target value at that joint action. Equal to the
// exhaustive max whenever the mixer satisfies IGM.
Tensor greedy_joint_target(Tape& t, const AgentModel& model,
                           const ParamStore& target_store, const Mixer& mixer,
                           const std::vector<HistoryWindow>& next_windows,
                           const MixerInputs& next_inputs);

struct StepMetrics {
  double td_loss = 0.0;
  double anneal_loss = 0.0;
  double grad_norm = 0.0;
};

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, long step_, std::uint64_t seed_,
                  double param_norm_)
      : std::runtime_error(msg),
        step(step_),
        seed(seed_),
        param_norm(param_norm_) {}
  long step;
  std::uint64_t seed;
  double param_norm;
};

// One gradient step on the mean TD loss plus lambda_delta * mean squared
// intervention over a batch of episodes.
StepMetrics train_step(Tape& tape, const std::vector<const Episode*>& batch,
                       const AgentModel& model, const Mixer& mixer,
                       ParamStore& online, const ParamStore& target,
                       const TrainConfig& cfg, double lambda_delta);

struct MetricsRecord {
  long step = 0;
  std::uint64_t seed = 0;
  double td_loss = 0.0;
  double anneal_loss = 0.0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double epsilon = 0.0;
  double lambda_delta = 0.0;
};

struct ExperimentOptions {
  long eval_interval = 1000;
  int eval_episodes = 32;
};

// Alternates epsilon-greedy rollout and training with periodic greedy
// evaluation. Deterministic given (master_seed, cfg.seed, configs).
std::vector<MetricsRecord> run_experiment(const Env& proto_env,
                                          const MixerSpec& mixer_spec,
                                          const AgentConfig& agent_cfg,
                                          const TrainConfig& cfg,
                                          const ExperimentOptions& opts,
                                          std::uint64_t master_seed);

}  // namespace vfd
