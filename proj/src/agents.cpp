#include "vfd/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vfd {

HistoryWindow::HistoryWindow(int capacity, int obs_dim, int action_count)
    : capacity_(capacity), obs_dim_(obs_dim), action_count_(action_count) {
  if (capacity < 1) throw std::runtime_error("window capacity must be >= 1");
  features_.assign(static_cast<std::size_t>(capacity) *
                       (obs_dim + action_count),
                   0.0);
}

void HistoryWindow::reset() {
  std::fill(features_.begin(), features_.end(), 0.0);
  filled_ = 0;
}

void HistoryWindow::push(const std::vector<double>& obs, int prev_action) {
  if (static_cast<int>(obs.size()) != obs_dim_) {
    throw ShapeError("window push: observation length " +
                     std::to_string(obs.size()) + " != obs_dim " +
                     std::to_string(obs_dim_));
  }
  const int slot = obs_dim_ + action_count_;
  if (filled_ == capacity_) {
    // shift one slot toward the front, newest entry goes last
    std::copy(features_.begin() + slot, features_.end(), features_.begin());
  } else {
    filled_ += 1;
  }
  double* dst = features_.data() + static_cast<std::size_t>(filled_ - 1) * slot;
  std::copy(obs.begin(), obs.end(), dst);
  std::fill(dst + obs_dim_, dst + slot, 0.0);
  if (prev_action >= 0) {
    if (prev_action >= action_count_) {
      throw std::runtime_error("prev_action out of range");
    }
    dst[obs_dim_ + prev_action] = 1.0;
  }
}

UtilityTriple decompose(Tape& t, const Tensor& q) {
  if (q.rank() != 1 || q.size() == 0) {
    throw ShapeError("decompose: utilities of shape " + shape_str(q.shape) +
                     " are not a non-empty vector");
  }
  for (double v : q.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("decompose: non-finite utility");
    }
  }
  Tensor v = max_last_dim(t, q);
  Tensor u = sub(t, q, v);
  return {q, std::move(v), std::move(u)};
}

int select_action(const std::vector<double>& q, double epsilon, Rng& rng) {
  if (epsilon > 0.0 && rng.uniform01() < epsilon) {
    return rng.uniform_int(static_cast<int>(q.size()));
  }
  return argmax_index(q);
}

std::vector<double> flat_history(const std::vector<HistoryWindow>& windows) {
  std::vector<double> out;
  for (const auto& w : windows) {
    out.insert(out.end(), w.features().begin(), w.features().end());
  }
  return out;
}

AgentModel::AgentModel(const AgentConfig& cfg, const EnvSpec& env_spec)
    : cfg_(cfg), env_spec_(env_spec) {
  const auto& counts = env_spec_.action_counts;
  const bool homogeneous =
      std::all_of(counts.begin(), counts.end(),
                  [&](int a) { return a == counts.front(); });
  shared_ = cfg_.share_parameters && homogeneous;
  if (shared_) {
    const int feat =
        cfg_.window * (env_spec_.obs_dim + counts.front()) + env_spec_.n_agents;
    nets_.push_back(Mlp2{"agent.shared", feat, cfg_.hidden, counts.front()});
  } else {
    for (int i = 0; i < env_spec_.n_agents; ++i) {
      const int feat = cfg_.window * (env_spec_.obs_dim + counts[i]);
      nets_.push_back(Mlp2{"agent." + std::to_string(i), feat, cfg_.hidden,
                           counts[i]});
    }
  }
}

void AgentModel::init_params(ParamStore& store, Rng& rng) const {
  for (const auto& net : nets_) net.init(store, rng);
}

Tensor AgentModel::utilities(Tape& t, const ParamStore& store, int agent,
                             const HistoryWindow& window) const {
  Tensor x = Tensor::vec(window.features());
  const Mlp2& net = shared_ ? nets_[0] : nets_[agent];
  if (shared_) {
    std::vector<double> id(env_spec_.n_agents, 0.0);
    id[agent] = 1.0;
    x = concat(t, {x, Tensor::vec(std::move(id))});
  }
  if (x.size() != net.in) {
    throw ShapeError("utilities: window features " + shape_str(x.shape) +
                     " do not match network input [" + std::to_string(net.in) +
                     "]");
  }
  return net.forward(t, store, x);
}

std::vector<HistoryWindow> AgentModel::make_windows() const {
  std::vector<HistoryWindow> windows;
  windows.reserve(env_spec_.n_agents);
  for (int i = 0; i < env_spec_.n_agents; ++i) {
    windows.emplace_back(cfg_.window, env_spec_.obs_dim,
                         env_spec_.action_counts[i]);
  }
  return windows;
}

int AgentModel::joint_history_dim() const {
  int total = 0;
  for (int i = 0; i < env_spec_.n_agents; ++i) {
    total += cfg_.window * (env_spec_.obs_dim + env_spec_.action_counts[i]);
  }
  return total;
}

}  // namespace vfd
