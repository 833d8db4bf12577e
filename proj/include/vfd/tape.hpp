#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vfd/tensor.hpp"

namespace vfd {

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,
  relu,
  abs,
  sum,
  max_last_dim,
  mse,
  concat,
  scale,
  stop_gradient,
  select,
  stack,
};

// Reverse-mode gradient tape, rebuilt per forward pass (define-by-run).
// Nodes are appended in topological order; backward walks them in reverse.
// Single-threaded; independent experiments each own their own tape.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const std::vector<double>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Clears nodes, gradients and the leaf cache but keeps capacity.
  void reset();

  // Registers a value as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  // Leaf shared per (owner, name) within this tape's lifetime; repeated
  // calls return the same node. The reference stays valid until reset().
  const Tensor& cached_leaf(const void* owner, const std::string& name,
                            const Tensor& value);

  // Named leaves registered for `owner`, in name order.
  std::vector<std::pair<std::string, int>> cached_leaves(
      const void* owner) const;

  // Populates gradients of every ancestor of `root` (size-1, on this tape).
  void backward(const Tensor& root);

  // Gradient of a tape-attached tensor after backward; zeros if no flow.
  Tensor grad(const Tensor& t) const;

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Low-level node interface used by the op implementations.
  int push(OpKind kind, std::vector<int> inputs, const std::vector<int>& shape,
           BackFn back);
  std::vector<double>& grad_buf(int node);

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    int size;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::map<std::pair<const void*, std::string>, Tensor> leaf_cache_;
};

// --- primitive ops ----------------------------------------------------------
// Elementwise binary ops broadcast only when one operand is a scalar or is
// missing a single leading (batch) dimension; any other mismatch is an error.

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor relu(Tape& t, const Tensor& x);
Tensor abs(Tape& t, const Tensor& x);  // derivative at 0 is 0
Tensor sum(Tape& t, const Tensor& x);
Tensor max_last_dim(Tape& t, const Tensor& x);
Tensor argmax_last_dim(const Tensor& x);  // integer values, no gradient
Tensor mse(Tape& t, const Tensor& a, const Tensor& b);  // 0.5 * mean((a-b)^2)
Tensor concat(Tape& t, const std::vector<Tensor>& xs);  // rank-1 inputs
Tensor scale(Tape& t, const Tensor& x, double c);

// Identity on values, zero in the gradient.
Tensor stop_gradient(Tape& t, const Tensor& x);

// x[index] along the last dimension of a rank-1 tensor -> scalar.
Tensor select(Tape& t, const Tensor& x, int index);
// N size-1 tensors -> rank-1 [N].
Tensor stack_scalars(Tape& t, const std::vector<Tensor>& xs);

// --- composites -------------------------------------------------------------

Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor add_const(Tape& t, const Tensor& x, double c);
Tensor dot(Tape& t, const Tensor& a, const Tensor& b);
Tensor mean(Tape& t, const Tensor& x);

}  // namespace vfd
