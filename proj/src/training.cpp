#include "vfd/training.hpp"

#include <algorithm>
#include <cmath>

namespace vfd {

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::runtime_error("buffer capacity must be >= 1");
}

void ReplayBuffer::push(Episode episode) {
  if (episode.empty()) throw std::runtime_error("empty episode");
  if (size() < capacity_) {
    episodes_.push_back(std::move(episode));
  } else {
    episodes_[next_] = std::move(episode);
  }
  next_ = (next_ + 1) % capacity_;
}

const Episode& ReplayBuffer::sample(Rng& rng) const {
  if (episodes_.empty()) throw std::runtime_error("sampling empty buffer");
  return episodes_[rng.uniform_int(size())];
}

double epsilon_at(long step, const TrainConfig& cfg) {
  const double window = cfg.epsilon_anneal_fraction * cfg.total_steps;
  if (window <= 0.0) return cfg.epsilon_end;
  const double f = std::min(1.0, static_cast<double>(step) / window);
  return cfg.epsilon_start + f * (cfg.epsilon_end - cfg.epsilon_start);
}

double anneal_weight(long step, const TrainConfig& cfg) {
  const double window = cfg.anneal_fraction * cfg.total_steps;
  if (window <= 0.0) return 0.0;
  const double f = 1.0 - static_cast<double>(step) / window;
  return cfg.anneal_lambda_start * std::max(0.0, f);
}

Tensor td_loss(Tape& t, const Tensor& q, double reward, double gamma,
               const Tensor& max_next_q, bool terminal) {
  Tensor boot = scale(t, max_next_q, terminal ? 0.0 : gamma);
  Tensor target = stop_gradient(t, add_const(t, boot, reward));
  return mse(t, q, target);
}

Tensor greedy_joint_target(Tape& t, const AgentModel& model,
                           const ParamStore& target_store, const Mixer& mixer,
                           const std::vector<HistoryWindow>& next_windows,
                           const MixerInputs& next_inputs) {
  const int n = model.n_agents();
  std::vector<UtilityTriple> triples;
  std::vector<int> greedy(n);
  triples.reserve(n);
  for (int i = 0; i < n; ++i) {
    Tensor q = model.utilities(t, target_store, i, next_windows[i]);
    greedy[i] = argmax_index(q.data);
    triples.push_back(decompose(t, q));
  }
  return mixer.q_joint(t, target_store, triples, greedy, next_inputs);
}

StepMetrics train_step(Tape& tape, const std::vector<const Episode*>& batch,
                       const AgentModel& model, const Mixer& mixer,
                       ParamStore& online, const ParamStore& target,
                       const TrainConfig& cfg, double lambda_delta) {
  if (batch.empty()) throw std::runtime_error("train_step: empty batch");
  tape.reset();
  const int n = model.n_agents();
  Tensor td_sum = Tensor::scalar(0.0);
  Tensor delta2_sum = Tensor::scalar(0.0);
  const bool use_anneal = mixer.has_intervention() && lambda_delta > 0.0;
  int count = 0;

  std::vector<HistoryWindow> windows = model.make_windows();
  std::vector<HistoryWindow> next_windows = model.make_windows();
  for (const Episode* ep : batch) {
    for (int i = 0; i < n; ++i) {
      windows[i].reset();
      windows[i].push((*ep)[0].joint_obs[i], -1);
    }
    for (const Transition& tr : *ep) {
      std::vector<UtilityTriple> triples;
      triples.reserve(n);
      for (int i = 0; i < n; ++i) {
        triples.push_back(
            decompose(tape, model.utilities(tape, online, i, windows[i])));
      }
      const MixerInputs inputs{flat_history(windows), tr.state};
      Tensor q =
          mixer.q_joint(tape, online, triples, tr.joint_action, inputs);

      for (int i = 0; i < n; ++i) {
        next_windows[i] = windows[i];
        next_windows[i].push(tr.next_joint_obs[i], tr.joint_action[i]);
      }
      Tensor max_next = Tensor::scalar(0.0);
      if (!tr.terminal) {
        const MixerInputs next_inputs{flat_history(next_windows),
                                      tr.next_state};
        max_next = greedy_joint_target(tape, model, target, mixer,
                                       next_windows, next_inputs);
      }
      td_sum = add(tape, td_sum,
                   td_loss(tape, q, tr.reward, cfg.gamma, max_next,
                           tr.terminal));
      if (use_anneal) {
        Tensor delta = mixer.intervention(tape, online, triples,
                                          tr.joint_action, inputs,
                                          cfg.anneal_detach_fixee);
        delta2_sum = add(tape, delta2_sum, mul(tape, delta, delta));
      }
      count += 1;
      std::swap(windows, next_windows);
    }
  }

  Tensor td_mean = scale(tape, td_sum, 1.0 / count);
  Tensor total = td_mean;
  Tensor delta2_mean = Tensor::scalar(0.0);
  if (use_anneal) {
    delta2_mean = scale(tape, delta2_sum, 1.0 / count);
    total = add(tape, total, scale(tape, delta2_mean, lambda_delta));
  }
  if (!std::isfinite(total.item())) {
    throw DivergenceError("non-finite training loss", -1, cfg.seed,
                          online.l2_norm());
  }
  tape.backward(total);
  GradMap grads = gradients(tape, online);
  StepMetrics metrics;
  metrics.td_loss = td_mean.item();
  metrics.anneal_loss = delta2_mean.item();
  metrics.grad_norm = grad_l2_norm(grads);
  adam_step(online, grads, cfg.lr);
  return metrics;
}

namespace {

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
};

EvalResult evaluate_greedy(Env& env, const AgentModel& model,
                           const ParamStore& store, int episodes) {
  Tape tape;
  std::vector<double> returns;
  returns.reserve(episodes);
  std::vector<HistoryWindow> windows = model.make_windows();
  for (int e = 0; e < episodes; ++e) {
    ResetResult rr = env.reset();
    for (int i = 0; i < model.n_agents(); ++i) {
      windows[i].reset();
      windows[i].push(rr.joint_obs[i], -1);
    }
    double ret = 0.0;
    while (!env.done()) {
      tape.reset();
      std::vector<int> ja(model.n_agents());
      for (int i = 0; i < model.n_agents(); ++i) {
        Tensor q = model.utilities(tape, store, i, windows[i]);
        ja[i] = argmax_index(q.data);
      }
      Transition tr = env.step(ja);
      ret += tr.reward;
      if (!tr.terminal) {
        for (int i = 0; i < model.n_agents(); ++i) {
          windows[i].push(tr.next_joint_obs[i], tr.joint_action[i]);
        }
      }
    }
    returns.push_back(ret);
  }
  EvalResult res;
  for (double r : returns) res.mean += r;
  res.mean /= returns.size();
  double var = 0.0;
  for (double r : returns) var += (r - res.mean) * (r - res.mean);
  res.stddev = std::sqrt(var / returns.size());
  return res;
}

}  // namespace

std::vector<MetricsRecord> run_experiment(const Env& proto_env,
                                          const MixerSpec& mixer_spec,
                                          const AgentConfig& agent_cfg,
                                          const TrainConfig& cfg,
                                          const ExperimentOptions& opts,
                                          std::uint64_t master_seed) {
  if (cfg.gamma < 0.0 || cfg.gamma >= 1.0) {
    throw std::runtime_error("gamma outside [0,1)");
  }
  if (cfg.anneal_fraction < 0.0 || cfg.anneal_fraction > 1.0) {
    throw std::runtime_error("anneal_fraction outside [0,1]");
  }
  std::unique_ptr<Env> env = proto_env.clone();
  std::unique_ptr<Env> eval_env = proto_env.clone();
  const EnvSpec& espec = env->spec();

  Rng rng_init = derive_rng(master_seed, cfg.seed, "init");
  Rng rng_action = derive_rng(master_seed, cfg.seed, "action");
  Rng rng_replay = derive_rng(master_seed, cfg.seed, "replay");

  AgentModel model(agent_cfg, espec);
  Mixer mixer(mixer_spec, espec.n_agents, espec.action_counts,
              model.joint_history_dim(), espec.state_dim);
  ParamStore online;
  ParamStore target;
  model.init_params(online, rng_init);
  mixer.init_params(online, rng_init);
  model.init_params(target, rng_init);  // same layout, values synced below
  mixer.init_params(target, rng_init);
  target.copy_values_from(online);

  ReplayBuffer buffer(cfg.buffer_episodes);
  Tape act_tape;
  Tape train_tape;

  std::vector<MetricsRecord> records;
  StepMetrics last_train;
  auto emit = [&](long step) {
    EvalResult ev =
        evaluate_greedy(*eval_env, model, online, opts.eval_episodes);
    MetricsRecord rec;
    rec.step = step;
    rec.seed = cfg.seed;
    rec.td_loss = last_train.td_loss;
    rec.anneal_loss = last_train.anneal_loss;
    rec.eval_return_mean = ev.mean;
    rec.eval_return_std = ev.stddev;
    rec.epsilon = epsilon_at(step, cfg);
    rec.lambda_delta = anneal_weight(step, cfg);
    records.push_back(rec);
  };

  env->reset(hash_stream(master_seed, cfg.seed, "env"));
  eval_env->reset(hash_stream(master_seed, cfg.seed, "eval_env"));
  emit(0);

  std::vector<HistoryWindow> windows = model.make_windows();
  Episode episode;
  bool need_reset = true;
  for (long step = 1; step <= cfg.total_steps; ++step) {
    if (need_reset) {
      ResetResult rr = env->reset();
      for (int i = 0; i < model.n_agents(); ++i) {
        windows[i].reset();
        windows[i].push(rr.joint_obs[i], -1);
      }
      episode.clear();
      need_reset = false;
    }
    const double eps = epsilon_at(step - 1, cfg);
    act_tape.reset();
    std::vector<int> ja(model.n_agents());
    for (int i = 0; i < model.n_agents(); ++i) {
      Tensor q = model.utilities(act_tape, online, i, windows[i]);
      ja[i] = select_action(q.data, eps, rng_action);
    }
    Transition tr = env->step(ja);
    const bool terminal = tr.terminal;
    if (!terminal) {
      for (int i = 0; i < model.n_agents(); ++i) {
        windows[i].push(tr.next_joint_obs[i], tr.joint_action[i]);
      }
    }
    episode.push_back(std::move(tr));

    if (terminal) {
      buffer.push(std::move(episode));
      episode = Episode();
      need_reset = true;
      if (buffer.size() >= cfg.batch_episodes) {
        std::vector<const Episode*> batch;
        batch.reserve(cfg.batch_episodes);
        for (int b = 0; b < cfg.batch_episodes; ++b) {
          batch.push_back(&buffer.sample(rng_replay));
        }
        try {
          last_train =
              train_step(train_tape, batch, model, mixer, online, target, cfg,
                         anneal_weight(step, cfg));
        } catch (const DivergenceError& e) {
          throw DivergenceError(std::string(e.what()) + " at env step " +
                                    std::to_string(step) + ", seed " +
                                    std::to_string(cfg.seed),
                                step, cfg.seed, e.param_norm);
        }
      }
    }
    if (step % cfg.target_sync_interval == 0) {
      target.copy_values_from(online);
    }
    if (step % opts.eval_interval == 0 || step == cfg.total_steps) {
      emit(step);
    }
  }
  return records;
}

}  // namespace vfd
