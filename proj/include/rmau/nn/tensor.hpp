#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rmau/error.hpp"

namespace rmau::nn {

/// Dense row-major tensor. Feature maps are rank 4 (batch, height, width,
/// channels); parameters use whatever rank their layer needs.
// Storage is aligned to Eigen's widest packet: vectorised reductions pick their
// summation order from the pointer alignment, so malloc's 16-byte guarantee
// would make results depend on heap layout.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<int> shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != count(shape_)) throw Error(Errc::ShapeMismatch, "tensor data does not match its shape");
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  AlignedVector<T>& values() { return data_; }
  const AlignedVector<T>& values() const { return data_; }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 feature-map view.
  int n() const { return shape_[0]; }
  int h() const { return shape_[1]; }
  int w() const { return shape_[2]; }
  int c() const { return shape_[3]; }
  std::size_t offset(int b, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + y) * shape_[2] + x) * shape_[3] + ch;
  }
  T& at(int b, int y, int x, int ch) { return data_[offset(b, y, x, ch)]; }
  const T& at(int b, int y, int x, int ch) const { return data_[offset(b, y, x, ch)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void check_same(const Tensor& o) const {
    if (shape_ != o.shape_) throw Error(Errc::ShapeMismatch, "tensor shapes " + shape_string() + " vs " + o.shape_string());
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

 private:
  std::vector<int> shape_;
  AlignedVector<T> data_;
};

template <class T>
T sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace rmau::nn
