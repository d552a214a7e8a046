#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace iroam::nn {

/// 64-byte aligned allocation. Vectorized reductions peel elements up to
/// the first aligned address, so a fixed alignment keeps their summation
/// order, and therefore results, independent of where a buffer lands.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles. Rank 2 tensors are (rows, cols);
/// feature maps are rank 3 (C, H, W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension.
  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Product of the remaining dimensions.
  int cols() const { return rows() == 0 ? 0 : static_cast<int>(size() / static_cast<size_t>(rows())); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)]; }
  double item() const { return data_.at(0); }

  void fill(double v);
  Tensor reshaped(std::vector<int> shape) const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool operator==(const Tensor& o) const = default;

 private:
  std::vector<int> shape_;
  Storage data_;
};

size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

}  // namespace iroam::nn
