#pragma once

#include <string>
#include <vector>

#include "vfd/agents.hpp"
#include "vfd/nn.hpp"
#include "vfd/optim.hpp"

namespace vfd {

enum class MixerKind {
  vdn,
  qmix,
  qplex,
  qfix_sum,
  qfix_mono,
  qfix_lin,
  qplusfix_sum,
  qplusfix_mono,
  qplusfix_lin,
};

enum class Conditioning { stateless, history_state, state_only };

std::string to_string(MixerKind kind);
std::string to_string(Conditioning c);
MixerKind mixer_kind_from_string(const std::string& s);
Conditioning conditioning_from_string(const std::string& s);
const std::vector<MixerKind>& all_mixer_kinds();

struct MixerSpec {
  MixerKind kind = MixerKind::qplusfix_sum;
  Conditioning conditioning = Conditioning::stateless;
  bool detach_advantages = true;
  int mixing_hidden = 32;
  int hypernet_hidden = 32;
  int fixing_hidden = 32;
};

bool is_qfix(MixerKind kind);
bool is_qplusfix(MixerKind kind);
// True when the kind has any trainable mixing parameters.
bool is_parametric(MixerKind kind);

// Constant per-evaluation context for the mixing networks.
struct MixerInputs {
  std::vector<double> joint_history;
  std::vector<double> state;
};

// Joint (Q, V, A) of a composition at one joint action; A = Q - V <= 0.
struct JointValue {
  Tensor q;
  Tensor v;
  Tensor a;
};

// Weight epsilon from the reference architecture, literally 10e-8.
inline constexpr double kWeightEps = 10e-8;

// |x| + eps: strictly positive weights (QFIX, QPLEX).
Tensor positive_transform(Tape& t, const Tensor& raw);
// |x+1| - 1 + eps: range (-1+eps, inf) (Q+FIX).
Tensor shifted_transform(Tape& t, const Tensor& raw);

// --- low-level compositions ----------------------------------------------

// Chosen per-agent scalars stacked into [N] vectors.
Tensor chosen_q(Tape& t, const std::vector<UtilityTriple>& triples,
                const std::vector<int>& ja);
Tensor chosen_u(Tape& t, const std::vector<UtilityTriple>& triples,
                const std::vector<int>& ja);
Tensor stacked_v(Tape& t, const std::vector<UtilityTriple>& triples);

JointValue vdn_q(Tape& t, const std::vector<UtilityTriple>& triples,
                 const std::vector<int>& ja);

// Hypernet-produced weights of the monotonic mixing MLP; w1/w2 are already
// non-negative.
struct MonoMixWeights {
  Tensor w1;  // [N, H]
  Tensor b1;  // [H]
  Tensor w2;  // [H]
  Tensor b2;  // []
};
Tensor mono_mix(Tape& t, const MonoMixWeights& w, const Tensor& x);
JointValue qmix_q(Tape& t, const MonoMixWeights& w,
                  const std::vector<UtilityTriple>& triples,
                  const std::vector<int>& ja);

// Q = sum_i (w_i v_i + b_i) + sum_i lambda_i w_i u_i, all weights positive.
Tensor qplex_q(Tape& t, const std::vector<UtilityTriple>& triples,
               const std::vector<int>& ja, const Tensor& w, const Tensor& b,
               const Tensor& lambda, bool detach);

// Q = w * A_fixee + b with w > 0.
Tensor qfix_value(Tape& t, const JointValue& fixee, const Tensor& w_pos,
                  const Tensor& b);
// Q = sum_i w_i u_i + b with w_i > 0.
Tensor qfix_lin_value(Tape& t, const std::vector<UtilityTriple>& triples,
                      const std::vector<int>& ja, const Tensor& w_pos,
                      const Tensor& b);
// Q = Q_fixee + w * A_fixee + b with w > -1; detach severs the gradient
// through A_fixee.
Tensor qplusfix_value(Tape& t, const JointValue& fixee, const Tensor& w,
                      const Tensor& b, bool detach);
Tensor qplusfix_lin_value(Tape& t, const std::vector<UtilityTriple>& triples,
                          const std::vector<int>& ja, const Tensor& w,
                          const Tensor& b, bool detach);

// The fixing intervention Delta = w * A_fixee + b (per-agent form for -lin);
// detach_fixee keeps the auxiliary loss from training the fixee through it.
Tensor fixing_intervention(Tape& t, const Tensor& a_fixee, const Tensor& w,
                           const Tensor& b, bool detach_fixee);
Tensor fixing_intervention_lin(Tape& t, const Tensor& u_chosen,
                               const Tensor& w, const Tensor& b,
                               bool detach_fixee);

// --- parameter bundles -----------------------------------------------------

struct MonotonicHypernet {
  int n_agents = 0;
  int cond_dim = 0;
  int mix_hidden = 0;
  Mlp2 hw1, hb1, hw2, hb2;

  static MonotonicHypernet make(const std::string& prefix, int n_agents,
                                int cond_dim, int mix_hidden,
                                int hyper_hidden);
  void init(ParamStore& store, Rng& rng) const;
  MonoMixWeights weights(Tape& t, const ParamStore& store,
                         const Tensor& cond) const;
};

// w-network over (conditioning ++ joint-action one-hots) and b-network over
// conditioning alone; raw outputs, transforms applied by the caller.
struct FixingNet {
  int n_w_outputs = 1;
  Mlp2 wnet, bnet;

  static FixingNet make(const std::string& prefix, int cond_dim, int ja_dim,
                        int hidden, int n_w_outputs);
  void init(ParamStore& store, Rng& rng) const;
  Tensor w_raw(Tape& t, const ParamStore& store, const Tensor& cond,
               const Tensor& ja_onehot) const;  // [n_w_outputs]
  Tensor bias(Tape& t, const ParamStore& store, const Tensor& cond) const;
};

struct QplexNet {
  int n_agents = 0;
  Mlp2 wnet, bnet, lnet;

  static QplexNet make(const std::string& prefix, int n_agents, int cond_dim,
                       int ja_dim, int hidden);
  void init(ParamStore& store, Rng& rng) const;
};

// --- facade ------------------------------------------------------------

class Mixer {
 public:
  Mixer(const MixerSpec& spec, int n_agents, std::vector<int> action_counts,
        int joint_history_dim, int state_dim);

  void init_params(ParamStore& store, Rng& rng) const;

  Tensor q_joint(Tape& t, const ParamStore& store,
                 const std::vector<UtilityTriple>& triples,
                 const std::vector<int>& ja, const MixerInputs& in) const;

  // Joint values for many joint actions with the conditioning-dependent
  // parts computed once.
  std::vector<Tensor> q_table(Tape& t, const ParamStore& store,
                              const std::vector<UtilityTriple>& triples,
                              const std::vector<std::vector<int>>& cells,
                              const MixerInputs& in) const;

  // Fixee (Q, V, A); the identity composition for vdn/qmix themselves.
  JointValue fixee_value(Tape& t, const ParamStore& store,
                         const std::vector<UtilityTriple>& triples,
                         const std::vector<int>& ja,
                         const MixerInputs& in) const;

  bool has_intervention() const { return is_qplusfix(spec_.kind); }
  Tensor intervention(Tape& t, const ParamStore& store,
                      const std::vector<UtilityTriple>& triples,
                      const std::vector<int>& ja, const MixerInputs& in,
                      bool detach_fixee) const;

  const MixerSpec& spec() const { return spec_; }
  int n_agents() const { return n_agents_; }
  const std::vector<int>& action_counts() const { return action_counts_; }

  Tensor conditioning(const MixerInputs& in) const;
  Tensor joint_action_onehot(const std::vector<int>& ja) const;

 private:
  // conditioning-dependent pieces shared across the cells of one evaluation
  struct CondCtx {
    Tensor cond;
    MonoMixWeights mono;
    Tensor vmix;
    Tensor bias;
    Tensor qplex_w;
    Tensor qplex_b;
  };
  CondCtx make_ctx(Tape& t, const ParamStore& store,
                   const std::vector<UtilityTriple>& triples,
                   const MixerInputs& in) const;
  JointValue fixee_cell(Tape& t, const CondCtx& ctx,
                        const std::vector<UtilityTriple>& triples,
                        const std::vector<int>& ja) const;
  Tensor q_cell(Tape& t, const ParamStore& store, const CondCtx& ctx,
                const std::vector<UtilityTriple>& triples,
                const std::vector<int>& ja) const;

  MixerSpec spec_;
  int n_agents_;
  std::vector<int> action_counts_;
  int joint_history_dim_;
  int state_dim_;
  int cond_dim_ = 0;
  int ja_dim_ = 0;
  MonotonicHypernet hyper_;
  FixingNet fixing_;
  QplexNet qplex_;
  bool has_hyper_ = false;
  bool has_fixing_ = false;
  bool has_qplex_ = false;
};

// Checkpoints: flat JSON map name -> array with the MixerSpec embedded.
std::string mixer_checkpoint_json(const MixerSpec& spec,
                                  const ParamStore& store);
MixerSpec load_mixer_checkpoint(const std::string& text, ParamStore& store);

}  // namespace vfd
