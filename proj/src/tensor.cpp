#include "vfd/tensor.hpp"

#include <numeric>
#include <sstream>

namespace vfd {

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_, int node_)
    : shape(std::move(shape_)), data(std::move(data_)), node(node_) {
  if (shape_size(shape) != static_cast<int>(data.size())) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::vec(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  const int n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  const int n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

double Tensor::item() const {
  if (data.size() != 1) {
    throw ShapeError("item(): tensor of shape " + shape_str(shape) +
                     " is not a single element");
  }
  return data[0];
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw ShapeError("reshape: " + shape_str(shape) + " -> " +
                     shape_str(new_shape) + " changes element count");
  }
  Tensor out = *this;
  out.shape = std::move(new_shape);
  return out;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

int argmax_index(const std::vector<double>& v) {
  if (v.empty()) throw ShapeError("argmax of empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace vfd
