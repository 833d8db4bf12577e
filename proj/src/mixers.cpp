#include "vfd/mixers.hpp"

#include <stdexcept>

#include <json.hpp>

namespace vfd {

std::string to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::vdn: return "vdn";
    case MixerKind::qmix: return "qmix";
    case MixerKind::qplex: return "qplex";
    case MixerKind::qfix_sum: return "qfix_sum";
    case MixerKind::qfix_mono: return "qfix_mono";
    case MixerKind::qfix_lin: return "qfix_lin";
    case MixerKind::qplusfix_sum: return "qplusfix_sum";
    case MixerKind::qplusfix_mono: return "qplusfix_mono";
    case MixerKind::qplusfix_lin: return "qplusfix_lin";
  }
  return "?";
}

std::string to_string(Conditioning c) {
  switch (c) {
    case Conditioning::stateless: return "stateless";
    case Conditioning::history_state: return "history_state";
    case Conditioning::state_only: return "state_only";
  }
  return "?";
}

MixerKind mixer_kind_from_string(const std::string& s) {
  for (MixerKind k : all_mixer_kinds()) {
    if (to_string(k) == s) return k;
  }
  throw std::runtime_error("unknown mixer kind '" + s + "'");
}

Conditioning conditioning_from_string(const std::string& s) {
  if (s == "stateless") return Conditioning::stateless;
  if (s == "history_state") return Conditioning::history_state;
  if (s == "state_only") return Conditioning::state_only;
  throw std::runtime_error("unknown conditioning '" + s + "'");
}

const std::vector<MixerKind>& all_mixer_kinds() {
  static const std::vector<MixerKind> kinds = {
      MixerKind::vdn,          MixerKind::qmix,
      MixerKind::qplex,        MixerKind::qfix_sum,
      MixerKind::qfix_mono,    MixerKind::qfix_lin,
      MixerKind::qplusfix_sum, MixerKind::qplusfix_mono,
      MixerKind::qplusfix_lin};
  return kinds;
}

bool is_qfix(MixerKind kind) {
  return kind == MixerKind::qfix_sum || kind == MixerKind::qfix_mono ||
         kind == MixerKind::qfix_lin;
}

bool is_qplusfix(MixerKind kind) {
  return kind == MixerKind::qplusfix_sum || kind == MixerKind::qplusfix_mono ||
         kind == MixerKind::qplusfix_lin;
}

bool is_parametric(MixerKind kind) { return kind != MixerKind::vdn; }

Tensor positive_transform(Tape& t, const Tensor& raw) {
  return add_const(t, abs(t, raw), kWeightEps);
}

Tensor shifted_transform(Tape& t, const Tensor& raw) {
  return add_const(t, abs(t, add_const(t, raw, 1.0)), -1.0 + kWeightEps);
}

// --- low-level compositions ----------------------------------------------

namespace {

void check_triples(const std::vector<UtilityTriple>& triples,
                   const std::vector<int>& ja) {
  if (triples.size() < 2) {
    throw std::runtime_error("mixer needs at least 2 agents");
  }
  if (triples.size() != ja.size()) {
    throw std::runtime_error("joint action arity mismatch");
  }
}

}  // namespace

Tensor chosen_q(Tape& t, const std::vector<UtilityTriple>& triples,
                const std::vector<int>& ja) {
  std::vector<Tensor> picks;
  picks.reserve(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    picks.push_back(select(t, triples[i].q, ja[i]));
  }
  return stack_scalars(t, picks);
}

Tensor chosen_u(Tape& t, const std::vector<UtilityTriple>& triples,
                const std::vector<int>& ja) {
  std::vector<Tensor> picks;
  picks.reserve(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    picks.push_back(select(t, triples[i].u, ja[i]));
  }
  return stack_scalars(t, picks);
}

Tensor stacked_v(Tape& t, const std::vector<UtilityTriple>& triples) {
  std::vector<Tensor> vs;
  vs.reserve(triples.size());
  for (const auto& tr : triples) vs.push_back(tr.v);
  return stack_scalars(t, vs);
}

JointValue vdn_q(Tape& t, const std::vector<UtilityTriple>& triples,
                 const std::vector<int>& ja) {
  check_triples(triples, ja);
  Tensor q = sum(t, chosen_q(t, triples, ja));
  Tensor v = sum(t, stacked_v(t, triples));
  Tensor a = sum(t, chosen_u(t, triples, ja));
  return {std::move(q), std::move(v), std::move(a)};
}

Tensor mono_mix(Tape& t, const MonoMixWeights& w, const Tensor& x) {
  Tensor h = relu(t, add(t, matmul(t, x, w.w1), w.b1));
  return add(t, dot(t, h, w.w2), w.b2);
}

JointValue qmix_q(Tape& t, const MonoMixWeights& w,
                  const std::vector<UtilityTriple>& triples,
                  const std::vector<int>& ja) {
  check_triples(triples, ja);
  Tensor q = mono_mix(t, w, chosen_q(t, triples, ja));
  Tensor v = mono_mix(t, w, stacked_v(t, triples));
  Tensor a = sub(t, q, v);
  return {std::move(q), std::move(v), std::move(a)};
}

Tensor qplex_q(Tape& t, const std::vector<UtilityTriple>& triples,
               const std::vector<int>& ja, const Tensor& w, const Tensor& b,
               const Tensor& lambda, bool detach) {
  check_triples(triples, ja);
  Tensor u = chosen_u(t, triples, ja);
  if (detach) u = stop_gradient(t, u);
  Tensor value_part = add(t, dot(t, w, stacked_v(t, triples)), sum(t, b));
  Tensor adv_part = dot(t, mul(t, lambda, w), u);
  return add(t, value_part, adv_part);
}

Tensor qfix_value(Tape& t, const JointValue& fixee, const Tensor& w_pos,
                  const Tensor& b) {
  return add(t, mul(t, w_pos, fixee.a), b);
}

Tensor qfix_lin_value(Tape& t, const std::vector<UtilityTriple>& triples,
                      const std::vector<int>& ja, const Tensor& w_pos,
                      const Tensor& b) {
  check_triples(triples, ja);
  return add(t, dot(t, w_pos, chosen_u(t, triples, ja)), b);
}

Tensor qplusfix_value(Tape& t, const JointValue& fixee, const Tensor& w,
                      const Tensor& b, bool detach) {
  Tensor a = detach ? stop_gradient(t, fixee.a) : fixee.a;
  return add(t, fixee.q, add(t, mul(t, w, a), b));
}

Tensor qplusfix_lin_value(Tape& t, const std::vector<UtilityTriple>& triples,
                          const std::vector<int>& ja, const Tensor& w,
                          const Tensor& b, bool detach) {
  check_triples(triples, ja);
  Tensor q_vdn = sum(t, chosen_q(t, triples, ja));
  Tensor u = chosen_u(t, triples, ja);
  if (detach) u = stop_gradient(t, u);
  return add(t, q_vdn, add(t, dot(t, w, u), b));
}

Tensor fixing_intervention(Tape& t, const Tensor& a_fixee, const Tensor& w,
                           const Tensor& b, bool detach_fixee) {
  Tensor a = detach_fixee ? stop_gradient(t, a_fixee) : a_fixee;
  return add(t, mul(t, w, a), b);
}

Tensor fixing_intervention_lin(Tape& t, const Tensor& u_chosen,
                               const Tensor& w, const Tensor& b,
                               bool detach_fixee) {
  Tensor u = detach_fixee ? stop_gradient(t, u_chosen) : u_chosen;
  return add(t, dot(t, w, u), b);
}

// --- parameter bundles -----------------------------------------------------

MonotonicHypernet MonotonicHypernet::make(const std::string& prefix,
                                          int n_agents, int cond_dim,
                                          int mix_hidden, int hyper_hidden) {
  MonotonicHypernet h;
  h.n_agents = n_agents;
  h.cond_dim = cond_dim;
  h.mix_hidden = mix_hidden;
  h.hw1 = Mlp2{prefix + ".hw1", cond_dim, hyper_hidden, n_agents * mix_hidden};
  h.hb1 = Mlp2{prefix + ".hb1", cond_dim, hyper_hidden, mix_hidden};
  h.hw2 = Mlp2{prefix + ".hw2", cond_dim, hyper_hidden, mix_hidden};
  h.hb2 = Mlp2{prefix + ".hb2", cond_dim, hyper_hidden, 1};
  return h;
}

void MonotonicHypernet::init(ParamStore& store, Rng& rng) const {
  hw1.init(store, rng);
  hb1.init(store, rng);
  hw2.init(store, rng);
  hb2.init(store, rng);
}

MonoMixWeights MonotonicHypernet::weights(Tape& t, const ParamStore& store,
                                          const Tensor& cond) const {
  MonoMixWeights w;
  w.w1 = abs(t, hw1.forward(t, store, cond)).reshaped({n_agents, mix_hidden});
  w.b1 = hb1.forward(t, store, cond);
  w.w2 = abs(t, hw2.forward(t, store, cond));
  w.b2 = hb2.forward(t, store, cond).reshaped(std::vector<int>{});
  return w;
}

FixingNet FixingNet::make(const std::string& prefix, int cond_dim, int ja_dim,
                          int hidden, int n_w_outputs) {
  FixingNet f;
  f.n_w_outputs = n_w_outputs;
  f.wnet = Mlp2{prefix + ".w", cond_dim + ja_dim, hidden, n_w_outputs};
  f.bnet = Mlp2{prefix + ".b", cond_dim, hidden, 1};
  return f;
}

void FixingNet::init(ParamStore& store, Rng& rng) const {
  wnet.init(store, rng);
  bnet.init(store, rng);
}

Tensor FixingNet::w_raw(Tape& t, const ParamStore& store, const Tensor& cond,
                        const Tensor& ja_onehot) const {
  return wnet.forward(t, store, concat(t, {cond, ja_onehot}));
}

Tensor FixingNet::bias(Tape& t, const ParamStore& store,
                       const Tensor& cond) const {
  return bnet.forward(t, store, cond).reshaped(std::vector<int>{});
}

QplexNet QplexNet::make(const std::string& prefix, int n_agents, int cond_dim,
                        int ja_dim, int hidden) {
  QplexNet q;
  q.n_agents = n_agents;
  q.wnet = Mlp2{prefix + ".w", cond_dim, hidden, n_agents};
  q.bnet = Mlp2{prefix + ".b", cond_dim, hidden, n_agents};
  q.lnet = Mlp2{prefix + ".lambda", cond_dim + ja_dim, hidden, n_agents};
  return q;
}

void QplexNet::init(ParamStore& store, Rng& rng) const {
  wnet.init(store, rng);
  bnet.init(store, rng);
  lnet.init(store, rng);
}

// --- facade ------------------------------------------------------------

Mixer::Mixer(const MixerSpec& spec, int n_agents,
             std::vector<int> action_counts, int joint_history_dim,
             int state_dim)
    : spec_(spec),
      n_agents_(n_agents),
      action_counts_(std::move(action_counts)),
      joint_history_dim_(joint_history_dim),
      state_dim_(state_dim) {
  if (n_agents_ < 2) throw std::runtime_error("mixer needs >= 2 agents");
  switch (spec_.conditioning) {
    case Conditioning::stateless: cond_dim_ = joint_history_dim_; break;
    case Conditioning::history_state:
      cond_dim_ = joint_history_dim_ + state_dim_;
      break;
    case Conditioning::state_only: cond_dim_ = state_dim_; break;
  }
  if (cond_dim_ <= 0) throw std::runtime_error("empty conditioning input");
  for (int a : action_counts_) ja_dim_ += a;

  const bool mono_fixee = spec_.kind == MixerKind::qmix ||
                          spec_.kind == MixerKind::qfix_mono ||
                          spec_.kind == MixerKind::qplusfix_mono;
  if (mono_fixee) {
    hyper_ = MonotonicHypernet::make("mixer.mono", n_agents_, cond_dim_,
                                     spec_.mixing_hidden,
                                     spec_.hypernet_hidden);
    has_hyper_ = true;
  }
  if (is_qfix(spec_.kind) || is_qplusfix(spec_.kind)) {
    const bool lin = spec_.kind == MixerKind::qfix_lin ||
                     spec_.kind == MixerKind::qplusfix_lin;
    fixing_ = FixingNet::make("mixer.fix", cond_dim_, ja_dim_,
                              spec_.fixing_hidden, lin ? n_agents_ : 1);
    has_fixing_ = true;
  }
  if (spec_.kind == MixerKind::qplex) {
    qplex_ = QplexNet::make("mixer.qplex", n_agents_, cond_dim_, ja_dim_,
                            spec_.fixing_hidden);
    has_qplex_ = true;
  }
}

void Mixer::init_params(ParamStore& store, Rng& rng) const {
  if (has_hyper_) hyper_.init(store, rng);
  if (has_fixing_) fixing_.init(store, rng);
  if (has_qplex_) qplex_.init(store, rng);
}

Tensor Mixer::conditioning(const MixerInputs& in) const {
  std::vector<double> cond;
  switch (spec_.conditioning) {
    case Conditioning::stateless: cond = in.joint_history; break;
    case Conditioning::history_state:
      cond = in.joint_history;
      cond.insert(cond.end(), in.state.begin(), in.state.end());
      break;
    case Conditioning::state_only: cond = in.state; break;
  }
  if (static_cast<int>(cond.size()) != cond_dim_) {
    throw ShapeError("mixer conditioning: got " +
                     std::to_string(cond.size()) + " features, expected " +
                     std::to_string(cond_dim_));
  }
  return Tensor::vec(std::move(cond));
}

Tensor Mixer::joint_action_onehot(const std::vector<int>& ja) const {
  std::vector<double> onehot(ja_dim_, 0.0);
  int off = 0;
  for (int i = 0; i < n_agents_; ++i) {
    onehot[off + ja[i]] = 1.0;
    off += action_counts_[i];
  }
  return Tensor::vec(std::move(onehot));
}

Mixer::CondCtx Mixer::make_ctx(Tape& t, const ParamStore& store,
                               const std::vector<UtilityTriple>& triples,
                               const MixerInputs& in) const {
  CondCtx ctx;
  ctx.cond = conditioning(in);
  if (has_hyper_) {
    ctx.mono = hyper_.weights(t, store, ctx.cond);
    ctx.vmix = mono_mix(t, ctx.mono, stacked_v(t, triples));
  }
  if (has_fixing_) ctx.bias = fixing_.bias(t, store, ctx.cond);
  if (has_qplex_) {
    ctx.qplex_w =
        positive_transform(t, qplex_.wnet.forward(t, store, ctx.cond));
    ctx.qplex_b = qplex_.bnet.forward(t, store, ctx.cond);
  }
  return ctx;
}

JointValue Mixer::fixee_cell(Tape& t, const CondCtx& ctx,
                             const std::vector<UtilityTriple>& triples,
                             const std::vector<int>& ja) const {
  if (has_hyper_) {
    check_triples(triples, ja);
    Tensor q = mono_mix(t, ctx.mono, chosen_q(t, triples, ja));
    Tensor a = sub(t, q, ctx.vmix);
    return {std::move(q), ctx.vmix, std::move(a)};
  }
  return vdn_q(t, triples, ja);
}

Tensor Mixer::q_cell(Tape& t, const ParamStore& store, const CondCtx& ctx,
                     const std::vector<UtilityTriple>& triples,
                     const std::vector<int>& ja) const {
  switch (spec_.kind) {
    case MixerKind::vdn:
      return vdn_q(t, triples, ja).q;
    case MixerKind::qmix:
      return fixee_cell(t, ctx, triples, ja).q;
    case MixerKind::qplex: {
      Tensor lam = positive_transform(
          t, qplex_.lnet.forward(
                 t, store, concat(t, {ctx.cond, joint_action_onehot(ja)})));
      return qplex_q(t, triples, ja, ctx.qplex_w, ctx.qplex_b, lam,
                     spec_.detach_advantages);
    }
    case MixerKind::qfix_sum:
    case MixerKind::qfix_mono: {
      JointValue fixee = fixee_cell(t, ctx, triples, ja);
      Tensor w = positive_transform(
          t, fixing_.w_raw(t, store, ctx.cond, joint_action_onehot(ja))
                 .reshaped(std::vector<int>{}));
      return qfix_value(t, fixee, w, ctx.bias);
    }
    case MixerKind::qfix_lin: {
      Tensor w = positive_transform(
          t, fixing_.w_raw(t, store, ctx.cond, joint_action_onehot(ja)));
      return qfix_lin_value(t, triples, ja, w, ctx.bias);
    }
    case MixerKind::qplusfix_sum:
    case MixerKind::qplusfix_mono: {
      JointValue fixee = fixee_cell(t, ctx, triples, ja);
      Tensor w = shifted_transform(
          t, fixing_.w_raw(t, store, ctx.cond, joint_action_onehot(ja))
                 .reshaped(std::vector<int>{}));
      return qplusfix_value(t, fixee, w, ctx.bias, spec_.detach_advantages);
    }
    case MixerKind::qplusfix_lin: {
      Tensor w = shifted_transform(
          t, fixing_.w_raw(t, store, ctx.cond, joint_action_onehot(ja)));
      return qplusfix_lin_value(t, triples, ja, w, ctx.bias,
                                spec_.detach_advantages);
    }
  }
  throw std::runtime_error("unreachable mixer kind");
}

Tensor Mixer::q_joint(Tape& t, const ParamStore& store,
                      const std::vector<UtilityTriple>& triples,
                      const std::vector<int>& ja,
                      const MixerInputs& in) const {
  return q_cell(t, store, make_ctx(t, store, triples, in), triples, ja);
}

std::vector<Tensor> Mixer::q_table(Tape& t, const ParamStore& store,
                                   const std::vector<UtilityTriple>& triples,
                                   const std::vector<std::vector<int>>& cells,
                                   const MixerInputs& in) const {
  const CondCtx ctx = make_ctx(t, store, triples, in);
  std::vector<Tensor> out;
  out.reserve(cells.size());
  for (const auto& ja : cells) {
    out.push_back(q_cell(t, store, ctx, triples, ja));
  }
  return out;
}

JointValue Mixer::fixee_value(Tape& t, const ParamStore& store,
                              const std::vector<UtilityTriple>& triples,
                              const std::vector<int>& ja,
                              const MixerInputs& in) const {
  if (has_hyper_) {
    return qmix_q(t, hyper_.weights(t, store, conditioning(in)), triples, ja);
  }
  return vdn_q(t, triples, ja);
}

Tensor Mixer::intervention(Tape& t, const ParamStore& store,
                           const std::vector<UtilityTriple>& triples,
                           const std::vector<int>& ja, const MixerInputs& in,
                           bool detach_fixee) const {
  if (!has_intervention()) {
    throw std::runtime_error("intervention is defined only for Q+FIX mixers");
  }
  Tensor cond = conditioning(in);
  if (spec_.kind == MixerKind::qplusfix_lin) {
    Tensor w = shifted_transform(
        t, fixing_.w_raw(t, store, cond, joint_action_onehot(ja)));
    return fixing_intervention_lin(t, chosen_u(t, triples, ja), w,
                                   fixing_.bias(t, store, cond), detach_fixee);
  }
  JointValue fixee = fixee_value(t, store, triples, ja, in);
  Tensor w = shifted_transform(
      t, fixing_.w_raw(t, store, cond, joint_action_onehot(ja))
             .reshaped(std::vector<int>{}));
  return fixing_intervention(t, fixee.a, w, fixing_.bias(t, store, cond),
                             detach_fixee);
}

// --- checkpoints ---------------------------------------------------------

std::string mixer_checkpoint_json(const MixerSpec& spec,
                                  const ParamStore& store) {
  nlohmann::json j;
  j["spec"] = {{"kind", to_string(spec.kind)},
               {"conditioning", to_string(spec.conditioning)},
               {"detach_advantages", spec.detach_advantages},
               {"mixing_hidden", spec.mixing_hidden},
               {"hypernet_hidden", spec.hypernet_hidden},
               {"fixing_hidden", spec.fixing_hidden}};
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, tensor] : store.params()) {
    params[name] = tensor.data;
    shapes[name] = tensor.shape;
  }
  j["params"] = std::move(params);
  j["shapes"] = std::move(shapes);
  return j.dump();
}

MixerSpec load_mixer_checkpoint(const std::string& text, ParamStore& store) {
  const auto j = nlohmann::json::parse(text);
  MixerSpec spec;
  const auto& js = j.at("spec");
  spec.kind = mixer_kind_from_string(js.at("kind").get<std::string>());
  spec.conditioning =
      conditioning_from_string(js.at("conditioning").get<std::string>());
  spec.detach_advantages = js.at("detach_advantages").get<bool>();
  spec.mixing_hidden = js.at("mixing_hidden").get<int>();
  spec.hypernet_hidden = js.at("hypernet_hidden").get<int>();
  spec.fixing_hidden = js.at("fixing_hidden").get<int>();
  const auto& params = j.at("params");
  const auto& shapes = j.at("shapes");
  for (auto it = params.begin(); it != params.end(); ++it) {
    std::vector<int> shape = shapes.at(it.key()).get<std::vector<int>>();
    std::vector<double> data = it.value().get<std::vector<double>>();
    if (store.contains(it.key())) {
      Tensor& p = store.at(it.key());
      if (p.shape != shape) {
        throw ShapeError("checkpoint param '" + it.key() + "' shape " +
                         shape_str(shape) + " != existing " +
                         shape_str(p.shape));
      }
      p.data = std::move(data);
    } else {
      store.create(it.key(), shape).data = std::move(data);
    }
  }
  return spec;
}

}  // namespace vfd
