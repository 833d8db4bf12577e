#include "vfd/verification.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

namespace vfd {

namespace {

std::string ja_str(const std::vector<int>& ja) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < ja.size(); ++i) {
    if (i) os << ",";
    os << ja[i];
  }
  os << ")";
  return os.str();
}

void parallel_for(long n, int threads,
                  const std::function<void(long)>& body) {
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      const long i = next.fetch_add(1);
      if (i >= n) break;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
        break;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::vector<std::vector<int>> enumerate_joint_actions(
    const std::vector<int>& counts) {
  std::vector<std::vector<int>> out;
  std::vector<int> ja(counts.size(), 0);
  while (true) {
    out.push_back(ja);
    int i = static_cast<int>(counts.size()) - 1;
    while (i >= 0) {
      if (++ja[i] < counts[i]) break;
      ja[i] = 0;
      --i;
    }
    if (i < 0) break;
  }
  return out;
}

IgmReport igm_check(const JointValueTable& tv, double tol) {
  const auto& counts = tv.table.action_counts;
  if (tv.utilities.size() != counts.size()) {
    throw std::runtime_error("igm_check: utilities/table arity mismatch");
  }
  long joint = 1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (static_cast<int>(tv.utilities[i].size()) != counts[i]) {
      throw std::runtime_error("igm_check: utility length mismatch for agent " +
                               std::to_string(i));
    }
    joint *= counts[i];
    if (joint > 1000000) {
      throw std::runtime_error("igm_check: joint action space too large");
    }
  }
  std::vector<double> vmax(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    vmax[i] = *std::max_element(tv.utilities[i].begin(),
                                tv.utilities[i].end());
  }
  const double qmax =
      *std::max_element(tv.table.values.begin(), tv.table.values.end());

  IgmReport rep;
  rep.holds = true;
  for (const auto& ja : enumerate_joint_actions(counts)) {
    const bool in_joint = tv.table.at(ja) >= qmax - tol;
    bool in_product = true;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (tv.utilities[i][ja[i]] < vmax[i] - tol) {
        in_product = false;
        break;
      }
    }
    if (in_joint) rep.joint_argmax.push_back(ja);
    if (in_product) rep.individual_argmax_product.push_back(ja);
    if (in_joint != in_product && rep.holds) {
      rep.holds = false;
      rep.witness = ja;
    }
  }
  return rep;
}

bool advantage_constraint_check(const JointValueTable& tv, double tol) {
  const auto& counts = tv.table.action_counts;
  std::vector<double> vmax(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    vmax[i] = *std::max_element(tv.utilities[i].begin(),
                                tv.utilities[i].end());
  }
  const double qmax =
      *std::max_element(tv.table.values.begin(), tv.table.values.end());
  for (const auto& ja : enumerate_joint_actions(counts)) {
    bool any_negative_u = false;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (tv.utilities[i][ja[i]] < vmax[i] - tol) {
        any_negative_u = true;
        break;
      }
    }
    const bool negative_a = tv.table.at(ja) < qmax - tol;
    if (any_negative_u != negative_a) return false;
  }
  return true;
}

JointValueTable mixer_table(const Mixer& mixer, const ParamStore& store,
                            const std::vector<std::vector<double>>& utilities,
                            const MixerInputs& inputs) {
  Tape tape;
  std::vector<UtilityTriple> triples;
  triples.reserve(utilities.size());
  for (const auto& u : utilities) {
    triples.push_back(decompose(tape, Tensor::vec(u)));
  }
  JointValueTable tv;
  tv.utilities = utilities;
  tv.table.action_counts = mixer.action_counts();
  tv.table.values.reserve(tv.table.joint_size());
  const auto cells = enumerate_joint_actions(mixer.action_counts());
  for (const Tensor& q : mixer.q_table(tape, store, triples, cells, inputs)) {
    tv.table.values.push_back(q.item());
  }
  return tv;
}

JointValueTable random_igm_target(Rng& rng, const std::vector<int>& counts) {
  JointValueTable tv;
  tv.table.action_counts = counts;
  for (int a : counts) {
    std::vector<double> q(a);
    for (double& v : q) v = rng.uniform(-1.0, 1.0);
    tv.utilities.push_back(std::move(q));
  }
  std::vector<double> vmax(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    vmax[i] = *std::max_element(tv.utilities[i].begin(),
                                tv.utilities[i].end());
  }
  const double bias = rng.uniform(-1.0, 1.0);
  for (const auto& ja : enumerate_joint_actions(counts)) {
    double f = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      f += tv.utilities[i][ja[i]] - vmax[i];
    }
    tv.table.values.push_back(rng.uniform(0.5, 2.0) * f + bias);
  }
  return tv;
}

// --- fitting --------------------------------------------------------------

FitResult fit_target_table(const MixerSpec& spec,
                           const JointValueTable& target, long max_steps,
                           double lr, std::uint64_t seed) {
  IgmReport rep = igm_check(target);
  if (!rep.holds) {
    throw std::runtime_error(
        "fit_target_table: target violates IGM, witness " +
        (rep.witness ? ja_str(*rep.witness) : std::string("none")));
  }
  const auto& counts = target.table.action_counts;
  const int n = static_cast<int>(counts.size());
  Rng rng(seed);
  const int jh_dim = 6 * n;
  const int state_dim = 4;
  Mixer mixer(spec, n, counts, jh_dim, state_dim);
  ParamStore store;
  mixer.init_params(store, rng);
  MixerInputs inputs;
  inputs.joint_history.resize(jh_dim);
  for (double& v : inputs.joint_history) v = rng.uniform(-1.0, 1.0);
  inputs.state.resize(state_dim);
  for (double& v : inputs.state) v = rng.uniform(-1.0, 1.0);

  Tape scratch;
  std::vector<UtilityTriple> triples;
  for (const auto& u : target.utilities) {
    triples.push_back(decompose(scratch, Tensor::vec(u)));
  }
  const auto cells = enumerate_joint_actions(counts);
  const Tensor target_vec = Tensor::vec(target.table.values);

  Tape tape;
  FitResult res;
  for (long step = 1; step <= max_steps; ++step) {
    tape.reset();
    Tensor pred_vec = stack_scalars(
        tape, mixer.q_table(tape, store, triples, cells, inputs));
    double sup = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      sup = std::max(sup,
                     std::fabs(pred_vec.data[i] - target.table.values[i]));
    }
    res.max_abs_error = sup;
    res.steps_used = step;
    if (sup < 1e-3) return res;
    Tensor loss = mse(tape, pred_vec, target_vec);
    tape.backward(loss);
    adam_step(store, gradients(tape, store), lr);
  }
  // final measurement after the last update
  tape.reset();
  double sup = 0.0;
  const auto final_preds = mixer.q_table(tape, store, triples, cells, inputs);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    sup = std::max(sup,
                   std::fabs(final_preds[i].item() - target.table.values[i]));
  }
  res.max_abs_error = sup;
  return res;
}

namespace {

// Solves M x = rhs in place by Gaussian elimination with partial pivoting.
std::vector<double> gauss_solve(std::vector<std::vector<double>> m,
                                std::vector<double> rhs) {
  const int d = static_cast<int>(rhs.size());
  for (int col = 0; col < d; ++col) {
    int pivot = col;
    for (int r = col + 1; r < d; ++r) {
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    }
    if (std::fabs(m[pivot][col]) < 1e-12) {
      throw std::runtime_error("singular normal equations");
    }
    std::swap(m[col], m[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    for (int r = col + 1; r < d; ++r) {
      const double f = m[r][col] / m[col][col];
      if (f == 0.0) continue;
      for (int c = col; c < d; ++c) m[r][c] -= f * m[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(d);
  for (int r = d - 1; r >= 0; --r) {
    double acc = rhs[r];
    for (int c = r + 1; c < d; ++c) acc -= m[r][c] * x[c];
    x[r] = acc / m[r][r];
  }
  return x;
}

}  // namespace

AdditiveFit best_additive_fit(const PayoffTable& target) {
  const auto& counts = target.action_counts;
  const int n = static_cast<int>(counts.size());
  // variables: q_0 in full, q_i(a) for a >= 1 when i >= 1
  std::vector<int> offset(n);
  int dim = counts[0];
  for (int i = 1; i < n; ++i) {
    offset[i] = dim;
    dim += counts[i] - 1;
  }
  std::vector<std::vector<double>> m(dim, std::vector<double>(dim, 0.0));
  std::vector<double> rhs(dim, 0.0);
  std::vector<int> row_vars;
  for (const auto& ja : enumerate_joint_actions(counts)) {
    row_vars.clear();
    row_vars.push_back(ja[0]);
    for (int i = 1; i < n; ++i) {
      if (ja[i] >= 1) row_vars.push_back(offset[i] + ja[i] - 1);
    }
    const double y = target.at(ja);
    for (int r : row_vars) {
      rhs[r] += y;
      for (int c : row_vars) m[r][c] += 1.0;
    }
  }
  const std::vector<double> x = gauss_solve(std::move(m), std::move(rhs));

  AdditiveFit fit;
  fit.q.resize(n);
  fit.q[0].assign(x.begin(), x.begin() + counts[0]);
  for (int i = 1; i < n; ++i) {
    fit.q[i].assign(counts[i], 0.0);
    for (int a = 1; a < counts[i]; ++a) fit.q[i][a] = x[offset[i] + a - 1];
  }
  double sq = 0.0;
  for (const auto& ja : enumerate_joint_actions(counts)) {
    double pred = 0.0;
    for (int i = 0; i < n; ++i) pred += fit.q[i][ja[i]];
    const double r = target.at(ja) - pred;
    sq += r * r;
    fit.max_abs_residual = std::max(fit.max_abs_residual, std::fabs(r));
  }
  fit.rms_residual = std::sqrt(sq / target.joint_size());
  for (int i = 0; i < n; ++i) fit.greedy.push_back(argmax_index(fit.q[i]));
  return fit;
}

// --- stateful checks --------------------------------------------------------

RolledHistory roll_history(LatentStateMatrixGame& env, const AgentModel& model,
                           Rng& rng, int action_steps) {
  RolledHistory h;
  h.windows = model.make_windows();
  h.guesses.resize(model.n_agents());
  ResetResult rr = env.reset(rng.next_u64());
  for (int i = 0; i < model.n_agents(); ++i) {
    h.windows[i].reset();
    h.windows[i].push(rr.joint_obs[i], -1);
    h.guesses[i].push_back(env.guess_from_obs(rr.joint_obs[i]));
  }
  for (int s = 0; s < action_steps; ++s) {
    std::vector<int> ja(model.n_agents());
    for (int i = 0; i < model.n_agents(); ++i) {
      ja[i] = rng.uniform_int(env.spec().action_counts[i]);
    }
    Transition tr = env.step(ja);
    if (tr.terminal) break;
    for (int i = 0; i < model.n_agents(); ++i) {
      h.windows[i].push(tr.next_joint_obs[i], ja[i]);
      h.guesses[i].push_back(env.guess_from_obs(tr.next_joint_obs[i]));
    }
  }
  return h;
}

StatefulIgmReport stateful_igm_check(const LatentStateMatrixGame& env,
                                     const AgentModel& model,
                                     const ParamStore& store,
                                     const Mixer& mixer,
                                     const RolledHistory& history,
                                     double tol) {
  Tape tape;
  std::vector<std::vector<double>> utilities;
  for (int i = 0; i < model.n_agents(); ++i) {
    utilities.push_back(
        model.utilities(tape, store, i, history.windows[i]).data);
  }
  const std::vector<double> jh = flat_history(history.windows);
  const std::vector<double> posterior = env.state_posterior(history.guesses);

  StatefulIgmReport rep;
  rep.pointwise_holds = true;
  std::vector<double> marginal(
      static_cast<std::size_t>(PayoffTable{env.spec().action_counts, {}}
                                   .joint_size()),
      0.0);
  for (int s = 0; s < env.n_states(); ++s) {
    std::vector<double> state_vec(env.n_states(), 0.0);
    state_vec[s] = 1.0;
    const JointValueTable tv =
        mixer_table(mixer, store, utilities, MixerInputs{jh, state_vec});
    if (!igm_check(tv, tol).holds) rep.pointwise_holds = false;
    for (std::size_t k = 0; k < marginal.size(); ++k) {
      marginal[k] += posterior[s] * tv.table.values[k];
    }
  }
  JointValueTable marg;
  marg.utilities = utilities;
  marg.table.action_counts = env.spec().action_counts;
  marg.table.values = std::move(marginal);
  rep.marginal = igm_check(marg, tol);
  rep.marginal_holds = rep.marginal.holds;
  return rep;
}

// --- random instances --------------------------------------------------------

namespace {

struct Instance {
  EnvSpec espec;
  AgentConfig acfg;
  std::unique_ptr<AgentModel> model;
  std::unique_ptr<Mixer> mixer;
  ParamStore store;
  std::vector<HistoryWindow> windows;
  MixerInputs inputs;
};

Instance make_instance(Rng& rng, MixerKind kind, Conditioning cond,
                       bool detach) {
  Instance inst;
  inst.espec.n_agents = 2 + rng.uniform_int(2);
  for (int i = 0; i < inst.espec.n_agents; ++i) {
    inst.espec.action_counts.push_back(2 + rng.uniform_int(4));
  }
  inst.espec.obs_dim = 3;
  inst.espec.state_dim = 2 + rng.uniform_int(2);
  inst.espec.horizon = 2;
  inst.acfg.window = 2;
  inst.acfg.hidden = 24;
  inst.model = std::make_unique<AgentModel>(inst.acfg, inst.espec);
  MixerSpec spec;
  spec.kind = kind;
  spec.conditioning = cond;
  spec.detach_advantages = detach;
  inst.mixer = std::make_unique<Mixer>(spec, inst.espec.n_agents,
                                       inst.espec.action_counts,
                                       inst.model->joint_history_dim(),
                                       inst.espec.state_dim);
  inst.model->init_params(inst.store, rng);
  inst.mixer->init_params(inst.store, rng);
  inst.windows = inst.model->make_windows();
  for (int i = 0; i < inst.espec.n_agents; ++i) {
    for (int k = 0; k < inst.acfg.window; ++k) {
      std::vector<double> obs(inst.espec.obs_dim);
      for (double& v : obs) v = rng.uniform(-1.0, 1.0);
      inst.windows[i].push(obs, k == 0 ? -1
                                       : rng.uniform_int(
                                             inst.espec.action_counts[i]));
    }
  }
  inst.inputs.joint_history = flat_history(inst.windows);
  inst.inputs.state.resize(inst.espec.state_dim);
  for (double& v : inst.inputs.state) v = rng.uniform(-1.0, 1.0);
  return inst;
}

std::vector<UtilityTriple> instance_triples(Tape& tape, const Instance& inst) {
  std::vector<UtilityTriple> triples;
  for (int i = 0; i < inst.espec.n_agents; ++i) {
    triples.push_back(decompose(
        tape, inst.model->utilities(tape, inst.store, i, inst.windows[i])));
  }
  return triples;
}

std::vector<std::vector<double>> instance_utilities(const Instance& inst) {
  Tape tape;
  std::vector<std::vector<double>> out;
  for (int i = 0; i < inst.espec.n_agents; ++i) {
    out.push_back(
        inst.model->utilities(tape, inst.store, i, inst.windows[i]).data);
  }
  return out;
}

std::vector<int> random_joint_action(Rng& rng, const std::vector<int>& counts) {
  std::vector<int> ja(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    ja[i] = rng.uniform_int(counts[i]);
  }
  return ja;
}

double max_agent_grad_gap(const GradMap& a, const GradMap& b) {
  double gap = 0.0;
  for (const auto& [name, ga] : a) {
    if (name.rfind("agent.", 0) != 0) continue;
    const auto it = b.find(name);
    if (it == b.end()) {
      for (double v : ga.data) gap = std::max(gap, std::fabs(v));
      continue;
    }
    for (std::size_t i = 0; i < ga.data.size(); ++i) {
      gap = std::max(gap, std::fabs(ga.data[i] - it->second.data[i]));
    }
  }
  return gap;
}

}  // namespace

double detach_grad_gap(MixerKind kind, std::uint64_t seed, bool detach) {
  Rng rng(seed);
  const Conditioning conds[] = {Conditioning::stateless,
                                Conditioning::state_only,
                                Conditioning::history_state};
  Instance inst = make_instance(rng, kind, conds[rng.uniform_int(3)], detach);

  std::vector<int> ja = random_joint_action(rng, inst.espec.action_counts);
  if (!detach) {
    // keep the joint action away from the all-argmax cell, where both
    // gradient paths coincide regardless of the detach
    const auto utilities = instance_utilities(inst);
    bool all_argmax = true;
    for (std::size_t i = 0; i < ja.size() && all_argmax; ++i) {
      all_argmax = ja[i] == argmax_index(utilities[i]);
    }
    if (all_argmax) ja[0] = (ja[0] + 1) % inst.espec.action_counts[0];
  }

  Tape t1;
  std::vector<UtilityTriple> triples1 = instance_triples(t1, inst);
  Tensor mixed =
      inst.mixer->q_joint(t1, inst.store, triples1, ja, inst.inputs);
  t1.backward(mixed);
  GradMap g1 = gradients(t1, inst.store);

  Tape t2;
  std::vector<UtilityTriple> triples2 = instance_triples(t2, inst);
  Tensor fixee =
      inst.mixer->fixee_value(t2, inst.store, triples2, ja, inst.inputs).q;
  t2.backward(fixee);
  GradMap g2 = gradients(t2, inst.store);

  return max_agent_grad_gap(g1, g2);
}

// --- state-only completeness witness ---------------------------------------

WitnessResult state_only_completeness_witness(std::uint64_t seed,
                                              long fit_steps, double lr) {
  Rng rng(seed);
  const int S = 2;
  const int horizon = 2;
  const double rho = 0.8;
  std::vector<int> counts = {2 + rng.uniform_int(2), 2 + rng.uniform_int(2)};
  std::vector<PayoffTable> payoffs(
      S, PayoffTable{counts, std::vector<double>(
                                 PayoffTable{counts, {}}.joint_size(), 0.0)});
  LatentStateMatrixGame env(payoffs, {0.5, 0.5}, rho, horizon, seed);
  const int obs_dim = env.spec().obs_dim;

  // Two joint histories with identical guess totals (equal posteriors) but
  // different per-agent sequences; actions fixed to 0.
  const std::vector<std::vector<std::vector<int>>> guesses = {
      {{0, 1}, {0, 1}},
      {{0, 0}, {1, 1}},
  };
  auto make_obs = [&](int guess, int step) {
    std::vector<double> o(obs_dim, 0.0);
    o[guess] = 1.0;
    o[S + step] = 1.0;
    return o;
  };
  std::vector<std::vector<HistoryWindow>> windows;
  for (int k = 0; k < 2; ++k) {
    std::vector<HistoryWindow> ws;
    for (int i = 0; i < 2; ++i) {
      HistoryWindow w(2, obs_dim, counts[i]);
      w.push(make_obs(guesses[k][i][0], 0), -1);
      w.push(make_obs(guesses[k][i][1], 1), 0);
      ws.push_back(std::move(w));
    }
    windows.push_back(std::move(ws));
  }
  const std::vector<double> posterior = env.state_posterior(guesses[0]);

  std::vector<std::vector<double>> utilities;
  for (int i = 0; i < 2; ++i) {
    std::vector<double> q(counts[i]);
    for (double& v : q) v = rng.uniform(-1.0, 1.0);
    utilities.push_back(std::move(q));
  }
  const auto cells = enumerate_joint_actions(counts);
  const double gap = rng.uniform(0.9, 1.4);
  std::vector<double> targets;  // [history, cell]
  for (int k = 0; k < 2; ++k) {
    for (const auto& ja : cells) {
      double a_vdn = 0.0;
      for (int i = 0; i < 2; ++i) {
        a_vdn += utilities[i][ja[i]] -
                 *std::max_element(utilities[i].begin(), utilities[i].end());
      }
      targets.push_back(a_vdn + (k == 0 ? 0.0 : gap));
    }
  }
  const Tensor target_vec = Tensor::vec(targets);

  const int jh_dim =
      static_cast<int>(flat_history(windows[0]).size());
  std::vector<std::vector<double>> jh = {flat_history(windows[0]),
                                         flat_history(windows[1])};

  auto fit = [&](Conditioning cond) {
    MixerSpec spec;
    spec.kind = MixerKind::qplusfix_sum;
    spec.conditioning = cond;
    spec.detach_advantages = false;
    Mixer mixer(spec, 2, counts, jh_dim, S);
    ParamStore store;
    Rng init(hash_stream(seed, 7, to_string(cond)));
    mixer.init_params(store, init);

    Tape scratch;
    std::vector<UtilityTriple> triples;
    for (const auto& u : utilities) {
      triples.push_back(decompose(scratch, Tensor::vec(u)));
    }
    Tape tape;
    double sup = 0.0;
    for (long step = 1; step <= fit_steps; ++step) {
      tape.reset();
      std::vector<Tensor> preds;
      for (int k = 0; k < 2; ++k) {
        std::vector<Tensor> acc(cells.size(), Tensor::scalar(0.0));
        for (int s = 0; s < S; ++s) {
          std::vector<double> st(S, 0.0);
          st[s] = 1.0;
          const auto qs = mixer.q_table(tape, store, triples, cells,
                                        MixerInputs{jh[k], st});
          for (std::size_t c = 0; c < cells.size(); ++c) {
            acc[c] = add(tape, acc[c], scale(tape, qs[c], posterior[s]));
          }
        }
        preds.insert(preds.end(), acc.begin(), acc.end());
      }
      Tensor pred_vec = stack_scalars(tape, preds);
      sup = 0.0;
      for (std::size_t i = 0; i < targets.size(); ++i) {
        sup = std::max(sup, std::fabs(pred_vec.data[i] - targets[i]));
      }
      if (sup < 0.01) return sup;
      Tensor loss = mse(tape, pred_vec, target_vec);
      tape.backward(loss);
      adam_step(store, gradients(tape, store), lr);
    }
    return sup;
  };

  WitnessResult res;
  res.sup_state_only = fit(Conditioning::state_only);
  res.sup_history_state = fit(Conditioning::history_state);
  return res;
}

// --- suites ------------------------------------------------------------

namespace {

struct Combo {
  MixerKind kind;
  Conditioning cond;
  std::string name() const {
    return to_string(kind) + "/" + to_string(cond);
  }
};

std::vector<Combo> igm_combos() {
  std::vector<Combo> combos;
  combos.push_back({MixerKind::vdn, Conditioning::stateless});
  for (MixerKind k : all_mixer_kinds()) {
    if (k == MixerKind::vdn) continue;
    combos.push_back({k, Conditioning::stateless});
    combos.push_back({k, Conditioning::state_only});
    combos.push_back({k, Conditioning::history_state});
  }
  return combos;
}

SuiteReport aggregate(const std::string& name, long n,
                      const std::vector<std::string>& fail_msgs) {
  SuiteReport rep;
  rep.check_name = name;
  rep.instances = n;
  for (const auto& msg : fail_msgs) {
    if (msg.empty()) continue;
    rep.failures += 1;
    if (rep.witnesses.size() < 5) rep.witnesses.push_back(msg);
  }
  rep.passed = rep.failures == 0;
  return rep;
}

}  // namespace

SuiteReport suite_igm(int per_combo, const SuiteOptions& opts) {
  const auto combos = igm_combos();
  const long total = static_cast<long>(combos.size()) * per_combo;
  std::vector<std::string> fails(total);
  parallel_for(total, opts.threads, [&](long idx) {
    const Combo& combo = combos[idx / per_combo];
    Rng rng = derive_rng(opts.seed, idx, "igm");
    Instance inst = make_instance(rng, combo.kind, combo.cond, true);
    const JointValueTable tv = mixer_table(
        *inst.mixer, inst.store, instance_utilities(inst), inst.inputs);
    const IgmReport rep = igm_check(tv);
    if (!rep.holds) {
      fails[idx] = combo.name() + " witness " + ja_str(*rep.witness);
    }
  });
  return aggregate("igm", total, fails);
}

SuiteReport suite_prop2(int tables, int near_tie, const SuiteOptions& opts) {
  const long total = tables + near_tie;
  const double tol = 1e-9;
  std::vector<std::string> fails(total);
  parallel_for(total, opts.threads, [&](long idx) {
    Rng rng = derive_rng(opts.seed, idx, "prop2");
    JointValueTable tv;
    const int n = 2 + rng.uniform_int(2);
    for (int i = 0; i < n; ++i) {
      std::vector<double> q(2 + rng.uniform_int(3));
      for (double& v : q) v = rng.uniform(-1.0, 1.0);
      tv.utilities.push_back(std::move(q));
      tv.table.action_counts.push_back(
          static_cast<int>(tv.utilities.back().size()));
    }
    const int cells = tv.table.joint_size();
    if (idx < tables) {
      // arbitrary joint values, mostly IGM-violating
      for (int c = 0; c < cells; ++c) {
        tv.table.values.push_back(rng.uniform(-2.0, 2.0));
      }
    } else {
      // additive composition perturbed around the tolerance boundary
      for (const auto& ja : enumerate_joint_actions(tv.table.action_counts)) {
        double q = 0.0;
        for (int i = 0; i < n; ++i) q += tv.utilities[i][ja[i]];
        const double coefs[] = {-3.0, -0.5, 0.0, 0.5, 3.0};
        tv.table.values.push_back(q + tol * coefs[rng.uniform_int(5)]);
      }
    }
    const bool igm = igm_check(tv, tol).holds;
    const bool adv = advantage_constraint_check(tv, tol);
    if (igm != adv) {
      fails[idx] = "disagreement on instance " + std::to_string(idx);
    }
  });
  return aggregate("prop2_equivalence", total, fails);
}

SuiteReport suite_stateful(int per_combo, const SuiteOptions& opts) {
  const std::vector<Combo> combos = {
      {MixerKind::qplusfix_sum, Conditioning::state_only},
      {MixerKind::qplusfix_sum, Conditioning::history_state},
      {MixerKind::qplusfix_mono, Conditioning::state_only},
      {MixerKind::qplusfix_mono, Conditioning::history_state},
      {MixerKind::qplusfix_lin, Conditioning::state_only},
      {MixerKind::qplusfix_lin, Conditioning::history_state},
  };
  const long total = static_cast<long>(combos.size()) * per_combo;
  std::vector<std::string> fails(total);
  parallel_for(total, opts.threads, [&](long idx) {
    const Combo& combo = combos[idx / per_combo];
    Rng rng = derive_rng(opts.seed, idx, "stateful");
    const int S = 2;
    const int horizon = 2 + rng.uniform_int(2);
    const int n = 2 + rng.uniform_int(2);
    std::vector<int> counts;
    for (int i = 0; i < n; ++i) counts.push_back(2 + rng.uniform_int(2));
    std::vector<PayoffTable> payoffs;
    for (int s = 0; s < S; ++s) {
      PayoffTable p{counts, {}};
      for (int c = 0; c < p.joint_size(); ++c) {
        p.values.push_back(rng.uniform(-2.0, 2.0));
      }
      payoffs.push_back(std::move(p));
    }
    std::vector<double> p0 = {rng.uniform(0.2, 0.8), 0.0};
    p0[1] = 1.0 - p0[0];
    LatentStateMatrixGame env(payoffs, p0, rng.uniform(0.6, 0.9), horizon,
                              rng.next_u64());
    AgentConfig acfg;
    acfg.window = 3;
    acfg.hidden = 24;
    AgentModel model(acfg, env.spec());
    MixerSpec spec;
    spec.kind = combo.kind;
    spec.conditioning = combo.cond;
    Mixer mixer(spec, n, counts, model.joint_history_dim(),
                env.spec().state_dim);
    ParamStore store;
    model.init_params(store, rng);
    mixer.init_params(store, rng);
    RolledHistory history =
        roll_history(env, model, rng, rng.uniform_int(horizon));
    StatefulIgmReport rep =
        stateful_igm_check(env, model, store, mixer, history);
    if (!rep.pointwise_holds || !rep.marginal_holds) {
      fails[idx] = combo.name() + (rep.pointwise_holds ? " marginal"
                                                       : " pointwise") +
                   " violation";
    }
  });
  return aggregate("stateful_igm", total, fails);
}

SuiteReport suite_detach_identity(int instances, const SuiteOptions& opts) {
  const MixerKind kinds[] = {MixerKind::qplusfix_sum, MixerKind::qplusfix_mono,
                             MixerKind::qplusfix_lin};
  std::vector<std::string> fails(instances);
  parallel_for(instances, opts.threads, [&](long idx) {
    const MixerKind kind = kinds[idx % 3];
    const double gap =
        detach_grad_gap(kind, hash_stream(opts.seed, idx, "detach_on"), true);
    if (gap > 1e-10) {
      fails[idx] = to_string(kind) + " grad gap " + std::to_string(gap);
    }
  });
  return aggregate("detach_identity", instances, fails);
}

SuiteReport suite_detach_off_differs(int instances, double differ_pct,
                                     const SuiteOptions& opts) {
  const MixerKind kinds[] = {MixerKind::qplusfix_sum, MixerKind::qplusfix_mono,
                             MixerKind::qplusfix_lin};
  std::vector<char> differs(instances, 0);
  parallel_for(instances, opts.threads, [&](long idx) {
    const MixerKind kind = kinds[idx % 3];
    const double gap = detach_grad_gap(
        kind, hash_stream(opts.seed, idx, "detach_off"), false);
    differs[idx] = gap > 1e-8 ? 1 : 0;
  });
  SuiteReport rep;
  rep.check_name = "detach_off_differs";
  rep.instances = instances;
  long count = 0;
  for (char c : differs) count += c;
  rep.failures = instances - count;
  rep.passed = 100.0 * count >= differ_pct * instances;
  rep.detail = std::to_string(count) + "/" + std::to_string(instances) +
               " instances differ (need >= " + std::to_string(differ_pct) +
               "%)";
  return rep;
}

SuiteReport suite_grad(int per_component, const SuiteOptions& opts) {
  std::vector<std::string> components = {"utility"};
  for (MixerKind k : all_mixer_kinds()) {
    if (is_parametric(k)) components.push_back(to_string(k));
  }
  const long total = static_cast<long>(components.size()) * per_component;
  std::vector<std::string> fails(total);
  parallel_for(total, opts.threads, [&](long idx) {
    const std::string& comp = components[idx / per_component];
    Rng rng = derive_rng(opts.seed, idx, "grad");
    const bool utility = comp == "utility";
    const MixerKind kind =
        utility ? MixerKind::qplusfix_sum : mixer_kind_from_string(comp);
    const Conditioning conds[] = {Conditioning::stateless,
                                  Conditioning::state_only,
                                  Conditioning::history_state};
    Instance inst = make_instance(rng, kind, conds[rng.uniform_int(3)],
                                  /*detach=*/false);
    const std::vector<int> ja =
        random_joint_action(rng, inst.espec.action_counts);

    auto forward_root = [&](Tape& tape) {
      std::vector<UtilityTriple> triples = instance_triples(tape, inst);
      if (utility) {
        Tensor acc = Tensor::scalar(0.0);
        for (std::size_t i = 0; i < triples.size(); ++i) {
          acc = add(tape, acc, select(tape, triples[i].q, ja[i]));
        }
        return acc;
      }
      return inst.mixer->q_joint(tape, inst.store, triples, ja, inst.inputs);
    };

    Tape tape;
    Tensor root = forward_root(tape);
    tape.backward(root);
    GradMap grads = gradients(tape, inst.store);

    // flatten eligible coordinates
    const std::string prefix = utility ? "agent." : "mixer.";
    std::vector<std::pair<std::string, int>> coords;
    for (const auto& [name, g] : grads) {
      if (name.rfind(prefix, 0) != 0) continue;
      for (int i = 0; i < g.size(); ++i) coords.emplace_back(name, i);
    }
    const double h = 1e-5;
    int checked = 0;
    for (int attempt = 0;
         attempt < 24 && checked < 5 && !coords.empty(); ++attempt) {
      const auto& [name, ci] = coords[rng.uniform_int(
          static_cast<int>(coords.size()))];
      double& p = inst.store.at(name).data[ci];
      const double saved = p;
      Tape ft;
      p = saved + h;
      ft.reset();
      const double fp = forward_root(ft).item();
      p = saved - h;
      ft.reset();
      const double fm = forward_root(ft).item();
      p = saved;
      ft.reset();
      const double f0 = forward_root(ft).item();
      const double sp = (fp - f0) / h;
      const double sm = (f0 - fm) / h;
      // one-sided slopes disagreeing flags a kink crossing; resample
      if (std::fabs(sp - sm) >
          1e-3 * std::max({1.0, std::fabs(sp), std::fabs(sm)})) {
        continue;
      }
      const double fd = (fp - fm) / (2.0 * h);
      const double an = grads.at(name).data[ci];
      const double err = std::fabs(an - fd);
      const bool ok =
          err <= 1e-8 || err / std::max(std::fabs(an), std::fabs(fd)) <= 1e-4;
      if (!ok) {
        fails[idx] = comp + " param " + name + "[" + std::to_string(ci) +
                     "] autodiff " + std::to_string(an) + " vs fd " +
                     std::to_string(fd);
        return;
      }
      checked += 1;
    }
  });
  return aggregate("grad_check", total, fails);
}

SuiteReport suite_completeness(int targets, long fit_steps, double pass_pct,
                               const SuiteOptions& opts) {
  const MixerKind kinds[] = {MixerKind::qplusfix_sum, MixerKind::qplusfix_mono,
                             MixerKind::qplusfix_lin};
  const long total_fits = 3L * targets;
  std::vector<double> sups(total_fits, 0.0);
  parallel_for(total_fits, opts.threads, [&](long idx) {
    const MixerKind kind = kinds[idx / targets];
    const long t = idx % targets;
    Rng rng = derive_rng(opts.seed, t, "completeness_target");
    const JointValueTable target = random_igm_target(rng, {3, 3});
    MixerSpec spec;
    spec.kind = kind;
    spec.conditioning = Conditioning::stateless;
    spec.detach_advantages = false;
    const FitResult fit = fit_target_table(
        spec, target, fit_steps, 1e-2, hash_stream(opts.seed, idx, "fit"));
    sups[idx] = fit.max_abs_error;
  });
  long ok_fits = 0;
  for (double s : sups) ok_fits += s < 1e-2 ? 1 : 0;

  // least-squares oracle on the penalty fixture
  const AdditiveFit lsq = best_additive_fit(penalty_payoff());
  const bool vdn_fails = lsq.rms_residual > 1.0 &&
                         !(lsq.greedy == std::vector<int>{0, 0});

  // monotonic fit on the penalty fixture paired with IGM-consistent
  // utilities; the monotone class cannot reach it
  JointValueTable penalty_target;
  penalty_target.utilities = {{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}};
  penalty_target.table = penalty_payoff();
  MixerSpec qmix_spec;
  qmix_spec.kind = MixerKind::qmix;
  qmix_spec.conditioning = Conditioning::stateless;
  const FitResult qmix_fit = fit_target_table(
      qmix_spec, penalty_target, fit_steps, 1e-2,
      hash_stream(opts.seed, 1, "qmix_penalty"));
  const bool qmix_fails = qmix_fit.max_abs_error > 0.5;

  SuiteReport rep;
  rep.check_name = "completeness_separation";
  rep.instances = total_fits + 2;
  rep.failures = (total_fits - ok_fits) + (vdn_fails ? 0 : 1) +
                 (qmix_fails ? 0 : 1);
  const bool fits_pass = 100.0 * ok_fits >= pass_pct * total_fits;
  rep.passed = fits_pass && vdn_fails && qmix_fails;
  std::ostringstream os;
  os << ok_fits << "/" << total_fits << " fits < 1e-2"
     << "; penalty additive-LS rms " << lsq.rms_residual << " greedy "
     << ja_str(lsq.greedy) << "; penalty qmix fit sup "
     << qmix_fit.max_abs_error;
  rep.detail = os.str();
  return rep;
}

SuiteReport suite_state_only_witness(int targets, int min_reproduced,
                                     long fit_steps, const SuiteOptions& opts) {
  std::vector<char> ok(targets, 0);
  std::vector<std::string> details(targets);
  parallel_for(targets, opts.threads, [&](long idx) {
    const WitnessResult w = state_only_completeness_witness(
        hash_stream(opts.seed, idx, "witness"), fit_steps, 1e-2);
    ok[idx] = (w.sup_state_only >= 0.05 && w.sup_history_state < 0.05) ? 1 : 0;
    std::ostringstream os;
    os << "state_only " << w.sup_state_only << " history_state "
       << w.sup_history_state;
    details[idx] = os.str();
  });
  SuiteReport rep;
  rep.check_name = "state_only_witness";
  rep.instances = targets;
  long count = 0;
  for (char c : ok) count += c;
  rep.failures = targets - count;
  rep.passed = count >= min_reproduced;
  rep.detail = std::to_string(count) + "/" + std::to_string(targets) +
               " witnesses reproduced (need >= " +
               std::to_string(min_reproduced) + ")";
  for (int i = 0; i < targets && rep.witnesses.size() < 5; ++i) {
    if (!ok[i]) rep.witnesses.push_back(details[i]);
  }
  return rep;
}

std::vector<SuiteReport> run_suites(const std::string& which,
                                    const SuiteOptions& opts) {
  std::vector<SuiteReport> reports;
  const bool all = which == "all";
  if (all || which == "igm") {
    reports.push_back(suite_igm(1000, opts));
    reports.push_back(suite_prop2(10000, 100, opts));
  }
  if (all || which == "stateful") {
    reports.push_back(suite_stateful(200, opts));
    reports.push_back(suite_state_only_witness(10, 8, 20000, opts));
  }
  if (all || which == "detach") {
    reports.push_back(suite_detach_identity(200, opts));
    reports.push_back(suite_detach_off_differs(200, 95.0, opts));
  }
  if (all || which == "grad") {
    reports.push_back(suite_grad(100, opts));
  }
  if (all || which == "completeness") {
    reports.push_back(suite_completeness(50, 20000, 95.0, opts));
  }
  if (reports.empty()) {
    throw std::runtime_error("unknown verify suite '" + which + "'");
  }
  return reports;
}

}  // namespace vfd
