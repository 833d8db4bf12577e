#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vfd/envs.hpp"

using namespace vfd;

TEST_CASE("penalty fixture table read-back") {
  MatrixGame game(penalty_payoff());
  game.reset();
  Transition tr = game.step({0, 0});
  CHECK(tr.reward == 8.0);
  CHECK(tr.terminal);

  game.reset();
  tr = game.step({0, 1});
  CHECK(tr.reward == -12.0);

  game.reset();
  CHECK_THROWS(game.step({0, 3}));  // action out of range
}

TEST_CASE("matrix game reset gives constant zero observations and state") {
  MatrixGame game(penalty_payoff());
  ResetResult rr = game.reset();
  CHECK(rr.joint_obs.size() == 2);
  CHECK(rr.joint_obs[0] == std::vector<double>{0.0});
  CHECK(rr.state == std::vector<double>{0.0});
  game.step({1, 1});
  CHECK(game.done());
  CHECK_THROWS(game.step({0, 0}));  // step on terminal episode
}

namespace {

std::vector<PayoffTable> two_state_payoffs() {
  PayoffTable p0{{2, 2}, {1.0, 0.0, 0.0, -1.0}};
  PayoffTable p1{{2, 2}, {-1.0, 0.5, 0.5, 2.0}};
  return {p0, p1};
}

}  // namespace

TEST_CASE("latent game with deterministic start and noiseless channel") {
  LatentStateMatrixGame env(two_state_payoffs(), {1.0, 0.0}, 1.0, 2, 9);
  ResetResult rr = env.reset();
  CHECK(env.true_state() == 0);
  CHECK(rr.state == std::vector<double>{1.0, 0.0});
  // rho = 1: every agent's first observation encodes the true state
  for (const auto& obs : rr.joint_obs) {
    CHECK(env.guess_from_obs(obs) == 0);
    CHECK(obs[2] == 1.0);  // step index 0 one-hot
  }
  Transition t1 = env.step({0, 1});
  CHECK(t1.reward == 0.0);
  CHECK_FALSE(t1.terminal);
  CHECK(t1.next_joint_obs[0][3] == 1.0);  // step index 1
  Transition t2 = env.step({1, 1});
  CHECK(t2.reward == -1.0);
  CHECK(t2.terminal);
}

TEST_CASE("state posterior examples") {
  // noiseless: all agents observed state 0
  LatentStateMatrixGame noiseless(two_state_payoffs(), {0.5, 0.5}, 1.0, 2, 1);
  CHECK(noiseless.state_posterior({{0}, {0}}) ==
        std::vector<double>{1.0, 0.0});

  // pure noise: posterior equals the prior
  LatentStateMatrixGame noise(two_state_payoffs(), {0.3, 0.7}, 0.0, 2, 1);
  auto post = noise.state_posterior({{0, 1}, {1}});
  CHECK(post[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(post[1] == doctest::Approx(0.7).epsilon(1e-12));

  // rho = 0.8, uniform prior, both agents observed 0 once:
  // per-channel hit likelihood 0.9, miss 0.1 -> (0.81, 0.01)/0.82
  LatentStateMatrixGame env(two_state_payoffs(), {0.5, 0.5}, 0.8, 2, 1);
  post = env.state_posterior({{0}, {0}});
  CHECK(post[0] == doctest::Approx(0.81 / 0.82).epsilon(1e-12));
  CHECK(post[1] == doctest::Approx(0.01 / 0.82).epsilon(1e-12));

  // zero-probability history errors
  CHECK_THROWS(noiseless.state_posterior({{0}, {1}}));
}

TEST_CASE("posterior is a distribution on random histories") {
  Rng rng(31);
  for (int rep = 0; rep < 1000; ++rep) {
    const int S = 2 + rng.uniform_int(2);
    std::vector<PayoffTable> payoffs(
        S, PayoffTable{{2, 2}, {0.0, 0.0, 0.0, 0.0}});
    std::vector<double> p0(S);
    double norm = 0.0;
    for (double& p : p0) {
      p = rng.uniform(0.1, 1.0);
      norm += p;
    }
    for (double& p : p0) p /= norm;
    LatentStateMatrixGame env(payoffs, p0, rng.uniform(0.05, 0.95), 3,
                              rng.next_u64());
    std::vector<std::vector<int>> guesses(2);
    const int steps = 1 + rng.uniform_int(3);
    for (auto& g : guesses) {
      for (int k = 0; k < steps; ++k) g.push_back(rng.uniform_int(S));
    }
    const auto post = env.state_posterior(guesses);
    double sum = 0.0;
    for (double p : post) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

namespace {

// Brute-force oracle: enumerate the generative channel outcomes explicitly.
// Each observation comes from a hit coin (prob rho, shows the true state) or
// a miss coin (prob 1-rho) with a uniformly drawn shown state.
std::vector<double> posterior_by_enumeration(
    const std::vector<double>& p0, double rho,
    const std::vector<std::vector<int>>& guesses) {
  const int S = static_cast<int>(p0.size());
  std::vector<double> post(S, 0.0);
  double norm = 0.0;
  for (int s = 0; s < S; ++s) {
    double like = p0[s];
    for (const auto& agent : guesses) {
      for (int g : agent) {
        double p_obs = 0.0;
        if (g == s) p_obs += rho;  // hit outcome
        for (int shown = 0; shown < S; ++shown) {
          if (shown == g) p_obs += (1.0 - rho) / S;  // miss outcome
        }
        like *= p_obs;
      }
    }
    post[s] = like;
    norm += like;
  }
  for (double& p : post) p /= norm;
  return post;
}

}  // namespace

TEST_CASE("posterior agrees with brute-force channel enumeration") {
  Rng rng(77);
  for (int rep = 0; rep < 300; ++rep) {
    const int S = 2 + rng.uniform_int(2);  // S <= 3
    const int T = 1 + rng.uniform_int(3);  // T <= 3
    std::vector<PayoffTable> payoffs(
        S, PayoffTable{{2, 2}, {0.0, 0.0, 0.0, 0.0}});
    std::vector<double> p0(S);
    double norm = 0.0;
    for (double& p : p0) {
      p = rng.uniform(0.1, 1.0);
      norm += p;
    }
    for (double& p : p0) p /= norm;
    const double rho = rng.uniform(0.0, 1.0);
    LatentStateMatrixGame env(payoffs, p0, rho, 3, 1);
    std::vector<std::vector<int>> guesses(2);
    for (auto& g : guesses) {
      for (int k = 0; k < T; ++k) g.push_back(rng.uniform_int(S));
    }
    const auto fast = env.state_posterior(guesses);
    const auto slow = posterior_by_enumeration(p0, rho, guesses);
    for (int s = 0; s < S; ++s) {
      CHECK(std::fabs(fast[s] - slow[s]) < 1e-10);
    }
  }
}

TEST_CASE("episode returns are reproducible under a fixed seed") {
  auto rollout = [](std::uint64_t seed) {
    LatentStateMatrixGame env(two_state_payoffs(), {0.4, 0.6}, 0.7, 3, 0);
    env.reset(seed);
    std::vector<double> rewards;
    std::vector<double> obs_trace;
    while (!env.done()) {
      Transition tr = env.step({0, 1});  // fixed deterministic policy
      rewards.push_back(tr.reward);
      for (const auto& o : tr.next_joint_obs) {
        obs_trace.insert(obs_trace.end(), o.begin(), o.end());
      }
    }
    rewards.insert(rewards.end(), obs_trace.begin(), obs_trace.end());
    return rewards;
  };
  CHECK(rollout(11) == rollout(11));
}

TEST_CASE("fixtures load from JSON") {
  auto matrix = env_from_json_text(
      R"({"type":"matrix","payoff":[[8,-12,-12],[-12,0,0],[-12,0,0]]})");
  CHECK(matrix->spec().n_agents == 2);
  CHECK(matrix->spec().action_counts == std::vector<int>{3, 3});
  matrix->reset();
  CHECK(matrix->step({0, 0}).reward == 8.0);

  auto latent = env_from_json_text(
      R"({"type":"latent",
          "payoff_per_state":[[[1,0],[0,1]],[[0,1],[1,0]]],
          "p0":[0.5,0.5],"rho":0.9,"horizon":2})",
      7);
  CHECK(latent->spec().n_agents == 2);
  CHECK(latent->spec().state_dim == 2);
  CHECK(latent->spec().obs_dim == 4);  // 2 states + 2 step slots

  CHECK_THROWS(env_from_json_text(R"({"type":"gridworld"})"));
  CHECK_THROWS(
      env_from_json_text(R"({"type":"matrix","payoff":[[1,2],[3]]})"));
  CHECK_THROWS(env_from_json_text(
      R"({"type":"latent","payoff_per_state":[[[1,0],[0,1]]],
          "p0":[0.5,0.5],"rho":0.9,"horizon":2})"));
}
