#include "vfd/tape.hpp"

#include <algorithm>
#include <cmath>

namespace vfd {

namespace {

struct BcastPlan {
  std::vector<int> shape;
  bool b_is_small;  // the smaller operand is broadcast via (flat % small_size)
  int small_size;
};

// Allowed: identical shapes, one scalar operand, or one operand missing a
// single leading batch dimension.
BcastPlan plan_bcast(const char* op, const Tensor& a, const Tensor& b) {
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape) +
                     " and " + shape_str(b.shape) + " do not conform");
  };
  const Tensor* big = &a;
  const Tensor* small = &b;
  bool b_small = true;
  if (a.rank() < b.rank()) {
    big = &b;
    small = &a;
    b_small = false;
  }
  const int rd = big->rank() - small->rank();
  if (rd == 0) {
    if (a.shape != b.shape) fail();
  } else if (small->rank() == 0) {
    // scalar against anything
  } else if (rd == 1) {
    if (!std::equal(small->shape.begin(), small->shape.end(),
                    big->shape.begin() + 1)) {
      fail();
    }
  } else {
    fail();
  }
  return {big->shape, b_small, small->size()};
}

void gemm(const double* a, const double* b, double* out, int m, int k, int n,
          bool transpose_a, bool transpose_b) {
  // out[m,n] += opA[m,k] * opB[k,n]; tiny sizes, no blocking needed
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = transpose_a ? a[kk * m + i] : a[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = transpose_b ? b + kk : b + kk * n;
      double* orow = out + i * n;
      if (transpose_b) {
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j * k];
      } else {
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  leaf_cache_.clear();
}

int Tape::push(OpKind kind, std::vector<int> inputs,
               const std::vector<int>& shape, BackFn back) {
  nodes_.push_back(Node{kind, std::move(inputs), shape_size(shape),
                        std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buf(int node) {
  auto& g = grads_[node];
  if (g.empty() && nodes_[node].size > 0) g.assign(nodes_[node].size, 0.0);
  return g;
}

Tensor Tape::leaf(const Tensor& value) {
  const int id = push(OpKind::leaf, {}, value.shape, nullptr);
  return Tensor(value.shape, value.data, id);
}

const Tensor& Tape::cached_leaf(const void* owner, const std::string& name,
                                const Tensor& value) {
  auto key = std::make_pair(owner, name);
  auto it = leaf_cache_.find(key);
  if (it != leaf_cache_.end()) return it->second;
  Tensor bound = leaf(value);
  return leaf_cache_.emplace(std::move(key), std::move(bound)).first->second;
}

std::vector<std::pair<std::string, int>> Tape::cached_leaves(
    const void* owner) const {
  std::vector<std::pair<std::string, int>> out;
  for (auto it = leaf_cache_.lower_bound({owner, std::string()});
       it != leaf_cache_.end() && it->first.first == owner; ++it) {
    out.emplace_back(it->first.second, it->second.node);
  }
  return out;
}

void Tape::backward(const Tensor& root) {
  if (root.node < 0) {
    throw std::runtime_error("backward: root is not attached to the tape");
  }
  if (root.size() != 1) {
    throw ShapeError("backward: root of shape " + shape_str(root.shape) +
                     " is not scalar");
  }
  grads_.assign(nodes_.size(), {});
  grad_buf(root.node)[0] = 1.0;
  for (int i = root.node; i >= 0; --i) {
    if (grads_[i].empty() || !nodes_[i].back) continue;
    nodes_[i].back(*this, grads_[i]);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.node < 0) {
    throw std::runtime_error("grad: tensor is not attached to the tape");
  }
  if (t.node < static_cast<int>(grads_.size()) && !grads_[t.node].empty()) {
    return Tensor(t.shape, grads_[t.node]);
  }
  return Tensor::zeros(t.shape);
}

// --- ops ---------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || (a.rank() != 1 && a.rank() != 2)) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape) + " are not [m,k]x[k,n] or [k]x[k,n]");
  }
  const int k = b.shape[0];
  const int n = b.shape[1];
  const int m = a.rank() == 2 ? a.shape[0] : 1;
  const int ak = a.rank() == 2 ? a.shape[1] : a.shape[0];
  if (ak != k) {
    throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape) +
                     " and " + shape_str(b.shape) + " differ");
  }
  std::vector<int> out_shape =
      a.rank() == 2 ? std::vector<int>{m, n} : std::vector<int>{n};
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  gemm(a.data.data(), b.data.data(), out.data(), m, k, n, false, false);
  if (a.node < 0 && b.node < 0) return Tensor(out_shape, std::move(out));

  const int an = a.node, bn = b.node;
  // operand values are only needed for the counterpart's gradient
  std::vector<double> a_saved = bn >= 0 ? a.data : std::vector<double>{};
  std::vector<double> b_saved = an >= 0 ? b.data : std::vector<double>{};
  const int id = t.push(
      OpKind::matmul, {an, bn}, out_shape,
      [an, bn, m, k, n, a_saved = std::move(a_saved),
       b_saved = std::move(b_saved)](Tape& tp, const std::vector<double>& g) {
        if (an >= 0) {
          // gA = G * B^T
          gemm(g.data(), b_saved.data(), tp.grad_buf(an).data(), m, n, k,
               false, true);
        }
        if (bn >= 0) {
          // gB = A^T * G
          gemm(a_saved.data(), g.data(), tp.grad_buf(bn).data(), k, m, n,
               true, false);
        }
      });
  return Tensor(out_shape, std::move(out), id);
}

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  const BcastPlan plan = plan_bcast("add", a, b);
  const Tensor& big = plan.b_is_small ? a : b;
  const Tensor& small = plan.b_is_small ? b : a;
  const int n = big.size();
  const int s = plan.small_size;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = big.data[i] + small.data[i % s];
  if (a.node < 0 && b.node < 0) return Tensor(plan.shape, std::move(out));

  const int bign = big.node, smalln = small.node;
  const int id = t.push(OpKind::add, {a.node, b.node}, plan.shape,
                        [bign, smalln, s](Tape& tp,
                                          const std::vector<double>& g) {
                          if (bign >= 0) {
                            auto& gb = tp.grad_buf(bign);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb[i] += g[i];
                          }
                          if (smalln >= 0) {
                            auto& gs = tp.grad_buf(smalln);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gs[i % s] += g[i];
                          }
                        });
  return Tensor(plan.shape, std::move(out), id);
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  const BcastPlan plan = plan_bcast("mul", a, b);
  const Tensor& big = plan.b_is_small ? a : b;
  const Tensor& small = plan.b_is_small ? b : a;
  const int n = big.size();
  const int s = plan.small_size;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = big.data[i] * small.data[i % s];
  if (a.node < 0 && b.node < 0) return Tensor(plan.shape, std::move(out));

  const int bign = big.node, smalln = small.node;
  std::vector<double> big_saved =
      smalln >= 0 ? big.data : std::vector<double>{};
  std::vector<double> small_saved =
      bign >= 0 ? small.data : std::vector<double>{};
  const int id = t.push(
      OpKind::mul, {a.node, b.node}, plan.shape,
      [bign, smalln, s, big_saved = std::move(big_saved),
       small_saved = std::move(small_saved)](Tape& tp,
                                             const std::vector<double>& g) {
        if (bign >= 0) {
          auto& gb = tp.grad_buf(bign);
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[i] += g[i] * small_saved[i % s];
        }
        if (smalln >= 0) {
          auto& gs = tp.grad_buf(smalln);
          for (std::size_t i = 0; i < g.size(); ++i)
            gs[i % s] += g[i] * big_saved[i];
        }
      });
  return Tensor(plan.shape, std::move(out), id);
}

Tensor relu(Tape& t, const Tensor& x) {
  std::vector<double> out(x.data.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  if (x.node < 0) return Tensor(x.shape, std::move(out));
  const int xn = x.node;
  const int id = t.push(OpKind::relu, {xn}, x.shape,
                        [xn, saved = x.data](Tape& tp,
                                             const std::vector<double>& g) {
                          auto& gx = tp.grad_buf(xn);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (saved[i] > 0.0) gx[i] += g[i];
                        });
  return Tensor(x.shape, std::move(out), id);
}

Tensor abs(Tape& t, const Tensor& x) {
  std::vector<double> out(x.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x.data[i]);
  if (x.node < 0) return Tensor(x.shape, std::move(out));
  const int xn = x.node;
  const int id = t.push(OpKind::abs, {xn}, x.shape,
                        [xn, saved = x.data](Tape& tp,
                                             const std::vector<double>& g) {
                          auto& gx = tp.grad_buf(xn);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (saved[i] > 0.0) gx[i] += g[i];
                            else if (saved[i] < 0.0) gx[i] -= g[i];
                            // derivative at 0 is 0
                          }
                        });
  return Tensor(x.shape, std::move(out), id);
}

Tensor sum(Tape& t, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data) acc += v;
  if (x.node < 0) return Tensor::scalar(acc);
  const int xn = x.node;
  const int sz = x.size();
  const int id = t.push(OpKind::sum, {xn}, {},
                        [xn, sz](Tape& tp, const std::vector<double>& g) {
                          auto& gx = tp.grad_buf(xn);
                          for (int i = 0; i < sz; ++i) gx[i] += g[0];
                        });
  return Tensor({}, {acc}, id);
}

Tensor max_last_dim(Tape& t, const Tensor& x) {
  if (x.rank() < 1 || x.shape.back() < 1) {
    throw ShapeError("max_last_dim: shape " + shape_str(x.shape) +
                     " has no last dimension to reduce");
  }
  const int a = x.shape.back();
  const int rows = x.size() / a;
  std::vector<int> out_shape(x.shape.begin(), x.shape.end() - 1);
  std::vector<double> out(rows);
  std::vector<int> arg(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = x.data.data() + static_cast<std::size_t>(r) * a;
    int best = 0;
    for (int i = 1; i < a; ++i)
      if (row[i] > row[best]) best = i;
    arg[r] = best;
    out[r] = row[best];
  }
  if (x.node < 0) return Tensor(out_shape, std::move(out));
  const int xn = x.node;
  const int id = t.push(OpKind::max_last_dim, {xn}, out_shape,
                        [xn, a, arg = std::move(arg)](
                            Tape& tp, const std::vector<double>& g) {
                          auto& gx = tp.grad_buf(xn);
                          for (std::size_t r = 0; r < g.size(); ++r)
                            gx[r * a + arg[r]] += g[r];
                        });
  return Tensor(out_shape, std::move(out), id);
}

Tensor argmax_last_dim(const Tensor& x) {
  if (x.rank() < 1 || x.shape.back() < 1) {
    throw ShapeError("argmax_last_dim: shape " + shape_str(x.shape) +
                     " has no last dimension to reduce");
  }
  const int a = x.shape.back();
  const int rows = x.size() / a;
  std::vector<int> out_shape(x.shape.begin(), x.shape.end() - 1);
  std::vector<double> out(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = x.data.data() + static_cast<std::size_t>(r) * a;
    int best = 0;
    for (int i = 1; i < a; ++i)
      if (row[i] > row[best]) best = i;
    out[r] = static_cast<double>(best);
  }
  return Tensor(out_shape, std::move(out));
}

Tensor mse(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw ShapeError("mse: shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape) + " differ");
  }
  const int n = a.size();
  if (n == 0) throw ShapeError("mse: empty operands");
  std::vector<double> diff(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    diff[i] = a.data[i] - b.data[i];
    acc += diff[i] * diff[i];
  }
  const double loss = 0.5 * acc / n;
  if (a.node < 0 && b.node < 0) return Tensor::scalar(loss);
  const int an = a.node, bn = b.node;
  const int id = t.push(OpKind::mse, {an, bn}, {},
                        [an, bn, n, diff = std::move(diff)](
                            Tape& tp, const std::vector<double>& g) {
                          const double c = g[0] / n;
                          if (an >= 0) {
                            auto& ga = tp.grad_buf(an);
                            for (int i = 0; i < n; ++i) ga[i] += c * diff[i];
                          }
                          if (bn >= 0) {
                            auto& gb = tp.grad_buf(bn);
                            for (int i = 0; i < n; ++i) gb[i] -= c * diff[i];
                          }
                        });
  return Tensor({}, {loss}, id);
}

Tensor concat(Tape& t, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat: no operands");
  int total = 0;
  bool any_node = false;
  for (const auto& x : xs) {
    if (x.rank() != 1) {
      throw ShapeError("concat: operand of shape " + shape_str(x.shape) +
                       " is not rank-1");
    }
    total += x.size();
    any_node = any_node || x.node >= 0;
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& x : xs) out.insert(out.end(), x.data.begin(), x.data.end());
  if (!any_node) return Tensor({total}, std::move(out));

  std::vector<int> inputs;
  std::vector<std::pair<int, int>> pieces;  // (node, length)
  for (const auto& x : xs) {
    inputs.push_back(x.node);
    pieces.emplace_back(x.node, x.size());
  }
  const int id = t.push(OpKind::concat, std::move(inputs), {total},
                        [pieces = std::move(pieces)](
                            Tape& tp, const std::vector<double>& g) {
                          int off = 0;
                          for (const auto& [node, len] : pieces) {
                            if (node >= 0) {
                              auto& gx = tp.grad_buf(node);
                              for (int i = 0; i < len; ++i)
                                gx[i] += g[off + i];
                            }
                            off += len;
                          }
                        });
  return Tensor({total}, std::move(out), id);
}

Tensor scale(Tape& t, const Tensor& x, double c) {
  std::vector<double> out(x.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x.data[i];
  if (x.node < 0) return Tensor(x.shape, std::move(out));
  const int xn = x.node;
  const int id = t.push(OpKind::scale, {xn}, x.shape,
                        [xn, c](Tape& tp, const std::vector<double>& g) {
                          auto& gx = tp.grad_buf(xn);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += c * g[i];
                        });
  return Tensor(x.shape, std::move(out), id);
}

Tensor stop_gradient(Tape& t, const Tensor& x) {
  if (x.node < 0) return x;
  const int id = t.push(OpKind::stop_gradient, {x.node}, x.shape, nullptr);
  return Tensor(x.shape, x.data, id);
}

Tensor select(Tape& t, const Tensor& x, int index) {
  if (x.rank() != 1) {
    throw ShapeError("select: shape " + shape_str(x.shape) + " is not rank-1");
  }
  if (index < 0 || index >= x.size()) {
    throw ShapeError("select: index " + std::to_string(index) +
                     " out of range for " + shape_str(x.shape));
  }
  const double v = x.data[index];
  if (x.node < 0) return Tensor::scalar(v);
  const int xn = x.node;
  const int id = t.push(OpKind::select, {xn}, {},
                        [xn, index](Tape& tp, const std::vector<double>& g) {
                          tp.grad_buf(xn)[index] += g[0];
                        });
  return Tensor({}, {v}, id);
}

Tensor stack_scalars(Tape& t, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack: no operands");
  std::vector<double> out;
  out.reserve(xs.size());
  bool any_node = false;
  std::vector<int> inputs;
  for (const auto& x : xs) {
    if (x.size() != 1) {
      throw ShapeError("stack: operand of shape " + shape_str(x.shape) +
                       " is not a single element");
    }
    out.push_back(x.data[0]);
    inputs.push_back(x.node);
    any_node = any_node || x.node >= 0;
  }
  const int n = static_cast<int>(xs.size());
  if (!any_node) return Tensor({n}, std::move(out));
  std::vector<int> nodes = inputs;
  const int id = t.push(OpKind::stack, std::move(inputs), {n},
                        [nodes = std::move(nodes)](
                            Tape& tp, const std::vector<double>& g) {
                          for (std::size_t i = 0; i < nodes.size(); ++i)
                            if (nodes[i] >= 0) tp.grad_buf(nodes[i])[0] += g[i];
                        });
  return Tensor({n}, std::move(out), id);
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return add(t, a, scale(t, b, -1.0));
}

Tensor add_const(Tape& t, const Tensor& x, double c) {
  return add(t, x, Tensor::scalar(c));
}

Tensor dot(Tape& t, const Tensor& a, const Tensor& b) {
  return sum(t, mul(t, a, b));
}

Tensor mean(Tape& t, const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(t, sum(t, x), 1.0 / x.size());
}

}  // namespace vfd
