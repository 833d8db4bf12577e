#pragma once

#include <string>

#include "vfd/optim.hpp"

namespace vfd {

// Creates "<prefix>.w" [in,out] and "<prefix>.b" [out], initialised
// uniformly in +-1/sqrt(in).
void init_linear(ParamStore& store, Rng& rng, const std::string& prefix,
                 int in, int out);

Tensor linear(Tape& t, const ParamStore& store, const std::string& prefix,
              const Tensor& x);

// Two-layer perceptron: in -> hidden (relu) -> out. Parameters live under
// "<prefix>.l1" and "<prefix>.l2" in the store.
struct Mlp2 {
  std::string prefix;
  int in = 0;
  int hidden = 0;
  int out = 0;

  void init(ParamStore& store, Rng& rng) const;
  Tensor forward(Tape& t, const ParamStore& store, const Tensor& x) const;
};

}  // namespace vfd
