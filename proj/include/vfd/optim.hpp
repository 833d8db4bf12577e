#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "vfd/rng.hpp"
#include "vfd/tape.hpp"
#include "vfd/tensor.hpp"

namespace vfd {

using GradMap = std::map<std::string, Tensor>;

// Named parameters with per-parameter Adam moment buffers.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& params() { return params_; }

  std::int64_t step_count() const { return step_count_; }

  // Copies parameter values (target-network sync); moments unaffected.
  void copy_values_from(const ParamStore& other);

  double l2_norm() const;

 private:
  friend void adam_step(ParamStore&, const GradMap&, double,
                        std::pair<double, double>, double);
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Tensor> params_;
  std::map<std::string, Moments> moments_;
  std::int64_t step_count_ = 0;
};

// Standard Adam update with bias correction; the step counter increments
// once per call. Gradients may cover a subset of the parameters; a
// non-finite gradient raises an error naming the parameter.
void adam_step(ParamStore& store, const GradMap& grads, double lr,
               std::pair<double, double> betas = {0.9, 0.999},
               double eps = 1e-8);

// Tape-attached view of a stored parameter (leaf shared within the tape).
inline const Tensor& param(Tape& t, const ParamStore& store,
                           const std::string& name) {
  return t.cached_leaf(&store, name, store.at(name));
}

// Gradients of every parameter of `store` touched on this tape (exact zeros
// for parameters with no gradient flow).
GradMap gradients(const Tape& t, const ParamStore& store);

double grad_l2_norm(const GradMap& grads);

}  // namespace vfd
