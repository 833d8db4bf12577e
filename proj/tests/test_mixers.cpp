#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vfd/mixers.hpp"
#include "vfd/verification.hpp"

using namespace vfd;

namespace {

std::vector<UtilityTriple> triples_from(Tape& t,
                                        std::vector<std::vector<double>> qs) {
  std::vector<UtilityTriple> triples;
  for (auto& q : qs) triples.push_back(decompose(t, Tensor::vec(q)));
  return triples;
}

}  // namespace

TEST_CASE("vdn composition") {
  Tape t;
  // q chosen = [1, 2], v = [1, 3] -> Q = 3, V = 4, A = -1
  auto triples = triples_from(t, {{1.0, 0.0}, {-1.0, 2.0, 3.0}});
  JointValue jv = vdn_q(t, triples, {0, 1});
  CHECK(jv.q.item() == 3.0);
  CHECK(jv.v.item() == 4.0);
  CHECK(jv.a.item() == -1.0);
  CHECK(std::fabs(jv.a.item() - (jv.q.item() - jv.v.item())) < 1e-12);

  // all agents at argmax -> A = 0
  JointValue opt = vdn_q(t, triples, {0, 2});
  CHECK(opt.a.item() == 0.0);

  // 3 agents
  auto t3 = triples_from(t, {{0.5, 1.0}, {-1.0, 0.0}, {2.0, 1.0}});
  JointValue jv3 = vdn_q(t, t3, {0, 0, 0});
  CHECK(jv3.a.item() == doctest::Approx(-1.5).epsilon(1e-12));
}

namespace {

// Mixing weights that force f_mono(x) = sum(x) on the non-negative orthant:
// one hidden unit picks up the sum through the relu.
MonoMixWeights identity_weights(int n, int hidden) {
  MonoMixWeights w;
  std::vector<double> w1(n * hidden, 0.0);
  for (int i = 0; i < n; ++i) w1[i * hidden] = 1.0;
  w.w1 = Tensor({n, hidden}, std::move(w1));
  w.b1 = Tensor::zeros({hidden});
  std::vector<double> w2(hidden, 0.0);
  w2[0] = 1.0;
  w.w2 = Tensor::vec(std::move(w2));
  w.b2 = Tensor::scalar(0.0);
  return w;
}

}  // namespace

TEST_CASE("qmix composition") {
  Tape t;
  auto triples = triples_from(t, {{0.3, 0.9}, {0.8, 0.1, 0.4}});

  // identity-initialized mixer reproduces vdn on non-negative utilities
  MonoMixWeights w = identity_weights(2, 4);
  JointValue mix = qmix_q(t, w, triples, {0, 2});
  JointValue vdn = vdn_q(t, triples, {0, 2});
  CHECK(mix.q.item() == doctest::Approx(vdn.q.item()).epsilon(1e-12));
  CHECK(mix.v.item() == doctest::Approx(vdn.v.item()).epsilon(1e-12));

  // all agents at argmax -> Q == V, A = 0
  JointValue opt = qmix_q(t, w, triples, {1, 0});
  CHECK(opt.a.item() == 0.0);
}

TEST_CASE("qmix monotonicity: dQ/dq_i >= 0 on random draws") {
  Rng rng(17);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 2 + rng.uniform_int(2);
    const int hidden = 8;
    MonotonicHypernet hyper =
        MonotonicHypernet::make("mixer.mono", n, 5, hidden, 8);
    ParamStore store;
    hyper.init(store, rng);
    std::vector<double> cond(5);
    for (double& v : cond) v = rng.uniform(-1.0, 1.0);

    Tape t;
    std::vector<double> x(n);
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    Tensor xt = t.leaf(Tensor::vec(x));
    MonoMixWeights w = hyper.weights(t, store, Tensor::vec(cond));
    Tensor q = mono_mix(t, w, xt);
    t.backward(q);
    for (double g : t.grad(xt).data) CHECK(g >= 0.0);
  }
}

TEST_CASE("qplex composition") {
  Tape t;
  // all u_i = 0 -> Q = sum(w_i v_i + b_i), independent of lambda
  auto flat = triples_from(t, {{2.0, 2.0}, {1.0, 1.0}});
  Tensor w = Tensor::vec({1.5, 0.5});
  Tensor b = Tensor::vec({0.1, -0.3});
  Tensor q1 = qplex_q(t, flat, {0, 1}, w, b, Tensor::vec({1.0, 1.0}), false);
  Tensor q2 = qplex_q(t, flat, {0, 1}, w, b, Tensor::vec({9.0, 3.0}), false);
  CHECK(q1.item() == doctest::Approx(1.5 * 2 + 0.1 + 0.5 * 1 - 0.3));
  CHECK(q1.item() == q2.item());

  // w_i = 1, b_i = 0, lambda_i = 1 -> Q = sum q_i (vdn collapse)
  auto triples = triples_from(t, {{1.0, -2.0}, {0.5, 3.0}});
  Tensor unit = Tensor::vec({1.0, 1.0});
  Tensor zero = Tensor::vec({0.0, 0.0});
  Tensor q = qplex_q(t, triples, {1, 0}, unit, zero, unit, false);
  CHECK(q.item() == doctest::Approx(-2.0 + 0.5).epsilon(1e-12));
}

TEST_CASE("qplex detach severs the advantage gradient") {
  for (bool detach : {false, true}) {
    Tape t;
    // hand-built triple with u as a leaf so dQ/du_i is observable
    Tensor u1 = t.leaf(Tensor::vec({-1.0, 0.0}));
    Tensor u2 = t.leaf(Tensor::vec({0.0, -0.5}));
    std::vector<UtilityTriple> triples = {
        {Tensor::vec({1.0, 2.0}), Tensor::scalar(2.0), u1},
        {Tensor::vec({3.0, 2.5}), Tensor::scalar(3.0), u2},
    };
    Tensor w = Tensor::vec({1.5, 0.5});
    Tensor lambda = Tensor::vec({2.0, 3.0});
    Tensor q = qplex_q(t, triples, {0, 1}, w, Tensor::vec({0.0, 0.0}), lambda,
                       detach);
    t.backward(q);
    const double expected1 = detach ? 0.0 : 2.0 * 1.5;  // lambda_1 * w_1
    const double expected2 = detach ? 0.0 : 3.0 * 0.5;
    CHECK(t.grad(u1).data[0] == expected1);
    CHECK(t.grad(u2).data[1] == expected2);
  }
}

TEST_CASE("qfix value examples") {
  Tape t;
  auto triples = triples_from(t, {{1.0, 0.0}, {2.0, 1.0}});
  JointValue fixee = vdn_q(t, triples, {1, 1});  // A = -1 - 1 = -2

  // w = 2.0, A = -1.5, b = 0.7 -> Q = -2.3
  JointValue f{Tensor::scalar(0.0), Tensor::scalar(0.0),
               Tensor::scalar(-1.5)};
  CHECK(qfix_value(t, f, Tensor::scalar(2.0), Tensor::scalar(0.7)).item() ==
        doctest::Approx(-2.3).epsilon(1e-12));

  // all-argmax joint action: Q = b for any w
  JointValue opt = vdn_q(t, triples, {0, 0});
  CHECK(qfix_value(t, opt, Tensor::scalar(3.7), Tensor::scalar(0.25)).item() ==
        0.25);

  // w = 1, b = V_fixee recovers the fixee on every joint action
  for (const auto& ja : enumerate_joint_actions({2, 2})) {
    JointValue fx = vdn_q(t, triples, ja);
    const double q =
        qfix_value(t, fx, Tensor::scalar(1.0), fx.v).item();
    CHECK(std::fabs(q - fx.q.item()) < 1e-12);
  }
  (void)fixee;
}

TEST_CASE("qfix-lin value examples") {
  Tape t;
  auto triples = triples_from(t, {{0.0, -1.0}, {0.0, -0.5}});
  // w = (1, 2), u = (-1, -0.5), b = 0 -> Q = -2
  CHECK(qfix_lin_value(t, triples, {1, 1}, Tensor::vec({1.0, 2.0}),
                       Tensor::scalar(0.0))
            .item() == doctest::Approx(-2.0).epsilon(1e-12));
  // all u_i = 0 -> Q = b
  CHECK(qfix_lin_value(t, triples, {0, 0}, Tensor::vec({5.0, 9.0}),
                       Tensor::scalar(0.125))
            .item() == 0.125);
  // equal weights reduce to the scalar-w fixing of vdn
  JointValue fixee = vdn_q(t, triples, {1, 0});
  const double lin = qfix_lin_value(t, triples, {1, 0},
                                    Tensor::vec({1.75, 1.75}),
                                    Tensor::scalar(0.3))
                         .item();
  const double scalar =
      qfix_value(t, fixee, Tensor::scalar(1.75), Tensor::scalar(0.3)).item();
  CHECK(std::fabs(lin - scalar) < 1e-12);
}

TEST_CASE("q+fix value examples and reparameterization identity") {
  Tape t;
  auto triples = triples_from(t, {{2.0, 1.0}, {3.0, 2.5}});

  // w = 0, b = 0 -> Q == Q_fixee
  JointValue fixee = vdn_q(t, triples, {1, 1});
  CHECK(qplusfix_value(t, fixee, Tensor::scalar(0.0), Tensor::scalar(0.0),
                       false)
            .item() == fixee.q.item());

  // fixee vdn, w = 1, u = (-1, 0), b = 0.5, q chosen = (2, 3) -> 4.5
  auto tr2 = triples_from(t, {{2.0, 3.0}, {3.0, 1.0}});
  JointValue fx2 = vdn_q(t, tr2, {0, 0});
  CHECK(fx2.a.item() == -1.0);
  CHECK(qplusfix_value(t, fx2, Tensor::scalar(1.0), Tensor::scalar(0.5),
                       false)
            .item() == doctest::Approx(4.5).epsilon(1e-12));

  // qplusfix(w, b) == qfix(w+1, b+V) on every joint action
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    Tape tt;
    std::vector<std::vector<double>> qs;
    for (int i = 0; i < 2; ++i) {
      qs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1),
                    rng.uniform(-1, 1)});
    }
    auto trs = triples_from(tt, qs);
    const double w = rng.uniform(-0.99, 2.0);
    const double b = rng.uniform(-1.0, 1.0);
    for (const auto& ja : enumerate_joint_actions({3, 3})) {
      JointValue fx = vdn_q(tt, trs, ja);
      const double plus = qplusfix_value(tt, fx, Tensor::scalar(w),
                                         Tensor::scalar(b), false)
                              .item();
      const double fix =
          qfix_value(tt, fx, Tensor::scalar(w + 1.0),
                     add(tt, Tensor::scalar(b), fx.v))
              .item();
      CHECK(std::fabs(plus - fix) < 1e-12);
    }
  }
}

TEST_CASE("weight transforms") {
  Tape t;
  // raw w = -3 -> |w+1| - 1 + 10e-8 = 1 + 10e-8
  Tensor sh = shifted_transform(t, Tensor::scalar(-3.0));
  CHECK(sh.item() == doctest::Approx(1.0 + 10e-8).epsilon(1e-15));
  CHECK(kWeightEps == 1e-7);

  Rng rng(8);
  for (int rep = 0; rep < 1000; ++rep) {
    const double raw = rng.uniform(-5.0, 5.0);
    CHECK(positive_transform(t, Tensor::scalar(raw)).item() > 0.0);
    CHECK(shifted_transform(t, Tensor::scalar(raw)).item() > -1.0);
  }
}

TEST_CASE("intervention examples") {
  Tape t;
  // w = 0, b = 0 -> Delta = 0
  CHECK(fixing_intervention(t, Tensor::scalar(-1.5), Tensor::scalar(0.0),
                            Tensor::scalar(0.0), true)
            .item() == 0.0);
  // w = 2, A = -1, b = 3 -> Delta = 1
  CHECK(fixing_intervention(t, Tensor::scalar(-1.0), Tensor::scalar(2.0),
                            Tensor::scalar(3.0), true)
            .item() == 1.0);
}

TEST_CASE("facade intervention is consistent with the value decomposition") {
  Rng rng(11);
  for (MixerKind kind : {MixerKind::qplusfix_sum, MixerKind::qplusfix_mono,
                         MixerKind::qplusfix_lin}) {
    MixerSpec spec;
    spec.kind = kind;
    spec.conditioning = Conditioning::history_state;
    Mixer mixer(spec, 2, {3, 3}, 10, 2);
    ParamStore store;
    mixer.init_params(store, rng);
    MixerInputs in;
    in.joint_history.resize(10);
    for (double& v : in.joint_history) v = rng.uniform(-1, 1);
    in.state = {rng.uniform(-1, 1), rng.uniform(-1, 1)};

    Tape t;
    std::vector<UtilityTriple> triples;
    for (int i = 0; i < 2; ++i) {
      triples.push_back(decompose(
          t, Tensor::vec({rng.uniform(-1, 1), rng.uniform(-1, 1),
                          rng.uniform(-1, 1)})));
    }
    for (const auto& ja : enumerate_joint_actions({3, 3})) {
      const double q = mixer.q_joint(t, store, triples, ja, in).item();
      const double fixee =
          mixer.fixee_value(t, store, triples, ja, in).q.item();
      const double delta =
          mixer.intervention(t, store, triples, ja, in, true).item();
      CHECK(std::fabs(q - (fixee + delta)) < 1e-12);
    }
  }
}

TEST_CASE("negative mixing weights break IGM (detection smoke)") {
  // A hand-built monotonicity violation must be caught by the checker:
  // one negative w1 entry flips an advantage sign.
  Tape t;
  MonoMixWeights w = identity_weights(2, 4);
  w.w1.data[0] = -1.0;  // agent 0 enters negatively
  std::vector<std::vector<double>> utilities = {{0.0, 1.0}, {0.0, 1.0}};
  auto triples = triples_from(t, {{0.0, 1.0}, {0.0, 1.0}});
  JointValueTable tv;
  tv.utilities = utilities;
  tv.table.action_counts = {2, 2};
  for (const auto& ja : enumerate_joint_actions({2, 2})) {
    tv.table.values.push_back(qmix_q(t, w, triples, ja).q.item());
  }
  CHECK_FALSE(igm_check(tv).holds);
}

TEST_CASE("mixer checkpoints round-trip") {
  Rng rng(14);
  MixerSpec spec;
  spec.kind = MixerKind::qplusfix_mono;
  spec.conditioning = Conditioning::state_only;
  spec.detach_advantages = false;
  spec.mixing_hidden = 16;
  Mixer mixer(spec, 2, {2, 3}, 8, 3);
  ParamStore store;
  mixer.init_params(store, rng);

  const std::string text = mixer_checkpoint_json(spec, store);
  ParamStore loaded;
  MixerSpec loaded_spec = load_mixer_checkpoint(text, loaded);
  CHECK(loaded_spec.kind == spec.kind);
  CHECK(loaded_spec.conditioning == spec.conditioning);
  CHECK(loaded_spec.detach_advantages == spec.detach_advantages);
  CHECK(loaded_spec.mixing_hidden == spec.mixing_hidden);
  for (const auto& [name, p] : store.params()) {
    CHECK(loaded.at(name).data == p.data);
    CHECK(loaded.at(name).shape == p.shape);
  }

  // identical joint values after reload
  MixerInputs in;
  in.joint_history.resize(8, 0.25);
  in.state = {0.1, -0.2, 0.3};
  Tape t;
  std::vector<UtilityTriple> triples = {
      decompose(t, Tensor::vec({0.5, -0.5})),
      decompose(t, Tensor::vec({0.1, 0.2, 0.3}))};
  CHECK(mixer.q_joint(t, store, triples, {0, 2}, in).item() ==
        mixer.q_joint(t, loaded, triples, {0, 2}, in).item());
}
