#include "iroam/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "iroam/errors.hpp"

namespace iroam::nn {

size_t shape_size(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension");
    n *= static_cast<size_t>(d);
  }
  return shape.empty() ? 0 : n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor data size does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

}  // namespace iroam::nn
