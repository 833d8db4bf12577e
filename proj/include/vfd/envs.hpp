#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vfd/rng.hpp"
#include "vfd/tensor.hpp"

namespace vfd {

struct EnvSpec {
  int n_agents = 2;
  std::vector<int> action_counts;
  int obs_dim = 1;
  int state_dim = 1;
  int horizon = 1;
  double discount = 0.99;
};

struct Transition {
  std::vector<std::vector<double>> joint_obs;
  std::vector<double> state;
  std::vector<int> joint_action;
  double reward = 0.0;
  std::vector<std::vector<double>> next_joint_obs;
  std::vector<double> next_state;
  bool terminal = false;
};

using Episode = std::vector<Transition>;

struct ResetResult {
  std::vector<std::vector<double>> joint_obs;
  std::vector<double> state;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  // Reseeds the environment's own RNG when a seed is given.
  virtual ResetResult reset(std::optional<std::uint64_t> seed = {}) = 0;
  virtual Transition step(const std::vector<int>& joint_action) = 0;
  virtual bool done() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

// Payoff tensor over the joint action space, row-major in agent order.
struct PayoffTable {
  std::vector<int> action_counts;
  std::vector<double> values;

  double at(const std::vector<int>& joint_action) const;
  int flat_index(const std::vector<int>& joint_action) const;
  int joint_size() const;
};

// One-shot cooperative game with constant zero observations and state.
class MatrixGame : public Env {
 public:
  explicit MatrixGame(PayoffTable payoff);
  const EnvSpec& spec() const override { return spec_; }
  ResetResult reset(std::optional<std::uint64_t> seed = {}) override;
  Transition step(const std::vector<int>& joint_action) override;
  bool done() const override { return done_; }
  std::unique_ptr<Env> clone() const override;

  const PayoffTable& payoff() const { return payoff_; }

 private:
  PayoffTable payoff_;
  EnvSpec spec_;
  bool done_ = true;
};

// Repeated matrix game with an episode-static latent state. Each step every
// agent observes the true state with probability rho, otherwise a uniformly
// random state; observations are the one-hot state guess concatenated with a
// one-hot step index.
class LatentStateMatrixGame : public Env {
 public:
  LatentStateMatrixGame(std::vector<PayoffTable> payoff_per_state,
                        std::vector<double> initial_dist, double rho,
                        int horizon, std::uint64_t seed = 0);

  const EnvSpec& spec() const override { return spec_; }
  ResetResult reset(std::optional<std::uint64_t> seed = {}) override;
  Transition step(const std::vector<int>& joint_action) override;
  bool done() const override { return done_; }
  std::unique_ptr<Env> clone() const override;

  int n_states() const { return static_cast<int>(payoffs_.size()); }
  double rho() const { return rho_; }
  const std::vector<double>& initial_dist() const { return p0_; }
  int true_state() const { return state_; }

  // Exact posterior Pr(s | joint history) from the per-agent guess
  // sequences; channels are independent given the state. Errors on a
  // zero-probability history.
  std::vector<double> state_posterior(
      const std::vector<std::vector<int>>& guesses_per_agent) const;

  // Index of the state guess encoded in an observation vector.
  int guess_from_obs(const std::vector<double>& obs) const;

 private:
  std::vector<std::vector<double>> sample_joint_obs(int step_index);

  std::vector<PayoffTable> payoffs_;
  std::vector<double> p0_;
  double rho_;
  EnvSpec spec_;
  Rng rng_;
  int state_ = 0;
  int step_ = 0;
  bool done_ = true;
  std::vector<std::vector<double>> current_obs_;
};

// Fixture loading: {"type": "matrix"|"latent", "payoff": ...,
// "payoff_per_state": ..., "rho": ..., "horizon": ..., "p0": ...}.
std::unique_ptr<Env> env_from_json_text(const std::string& text,
                                        std::uint64_t seed = 0);

// The canonical non-monotonic 3x3 cooperative payoff used as the standard
// counterexample fixture for additive/monotonic mixers.
PayoffTable penalty_payoff();

}  // namespace vfd
