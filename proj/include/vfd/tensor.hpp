#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfd {

// Dense row-major tensor of 64-bit reals. `node` is the handle into the
// active gradient tape; a tensor with node < 0 participates in forward math
// but contributes no gradient.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  int node = -1;

  Tensor() = default;
  Tensor(std::vector<int> shape_, std::vector<double> data_, int node_ = -1);

  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> v);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);

  int size() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  // Value of a single-element tensor.
  double item() const;

  // Same node and data, different shape; element count must match.
  Tensor reshaped(std::vector<int> new_shape) const;
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string shape_str(const std::vector<int>& shape);
int shape_size(const std::vector<int>& shape);

// Lowest-index argmax of a non-empty range.
int argmax_index(const std::vector<double>& v);

}  // namespace vfd
