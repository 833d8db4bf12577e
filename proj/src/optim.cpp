#include "vfd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vfd {

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (params_.count(name)) {
    throw std::runtime_error("param '" + name + "' already exists");
  }
  auto [it, ok] = params_.emplace(name, Tensor::zeros(std::move(shape)));
  (void)ok;
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::runtime_error("unknown param '" + name + "'");
  }
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::runtime_error("unknown param '" + name + "'");
  }
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.count(name) > 0;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& [name, tensor] : params_) {
    tensor.data = other.at(name).data;
  }
}

double ParamStore::l2_norm() const {
  double acc = 0.0;
  for (const auto& [name, tensor] : params_) {
    for (double v : tensor.data) acc += v * v;
  }
  return std::sqrt(acc);
}

void adam_step(ParamStore& store, const GradMap& grads, double lr,
               std::pair<double, double> betas, double eps) {
  const auto [beta1, beta2] = betas;
  store.step_count_ += 1;
  const double t = static_cast<double>(store.step_count_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (const auto& [name, grad] : grads) {
    Tensor& p = store.at(name);
    if (grad.shape != p.shape) {
      throw ShapeError("adam: gradient shape " + shape_str(grad.shape) +
                       " does not match param '" + name + "' " +
                       shape_str(p.shape));
    }
    auto& mom = store.moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(p.data.size(), 0.0);
      mom.v.assign(p.data.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double g = grad.data[i];
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam: non-finite gradient for param '" +
                                 name + "'");
      }
      mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
      mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

GradMap gradients(const Tape& t, const ParamStore& store) {
  GradMap out;
  for (const auto& [name, node] : t.cached_leaves(&store)) {
    Tensor g = Tensor::zeros(store.at(name).shape);
    Tensor bound(g.shape, g.data, node);
    out.emplace(name, t.grad(bound));
  }
  return out;
}

double grad_l2_norm(const GradMap& grads) {
  double acc = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) acc += v * v;
  }
  return std::sqrt(acc);
}

}  // namespace vfd
