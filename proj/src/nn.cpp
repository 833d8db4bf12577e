#include "vfd/nn.hpp"

#include <cmath>

namespace vfd {

void init_linear(ParamStore& store, Rng& rng, const std::string& prefix,
                 int in, int out) {
  Tensor& w = store.create(prefix + ".w", {in, out});
  Tensor& b = store.create(prefix + ".b", {out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w.data) v = rng.uniform(-bound, bound);
  for (auto& v : b.data) v = rng.uniform(-bound, bound);
}

Tensor linear(Tape& t, const ParamStore& store, const std::string& prefix,
              const Tensor& x) {
  const Tensor& w = param(t, store, prefix + ".w");
  const Tensor& b = param(t, store, prefix + ".b");
  return add(t, matmul(t, x, w), b);
}

void Mlp2::init(ParamStore& store, Rng& rng) const {
  init_linear(store, rng, prefix + ".l1", in, hidden);
  init_linear(store, rng, prefix + ".l2", hidden, out);
}

Tensor Mlp2::forward(Tape& t, const ParamStore& store, const Tensor& x) const {
  Tensor h = relu(t, linear(t, store, prefix + ".l1", x));
  return linear(t, store, prefix + ".l2", h);
}

}  // namespace vfd
