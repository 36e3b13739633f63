#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cyclesing/common.hpp"

namespace cyclesing {

// Dense row-major tensor of rank 1..3. Training runs in float; gradient
// checks instantiate double to separate analytic errors from rounding.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    long n = 1;
    for (long d : shape_) {
      require(d >= 0, Err::ShapeMismatch, "negative dimension");
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), T(0));
  }

  Tensor(long d0) : Tensor(std::vector<long>{d0}) {}
  Tensor(long d0, long d1) : Tensor(std::vector<long>{d0, d1}) {}
  Tensor(long d0, long d1, long d2) : Tensor(std::vector<long>{d0, d1, d2}) {}

  const std::vector<long>& shape() const { return shape_; }
  long rank() const { return static_cast<long>(shape_.size()); }
  long dim(long i) const { return shape_[static_cast<size_t>(i)]; }
  size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  T& at(long i) { return data_[static_cast<size_t>(i)]; }
  T& at(long i, long j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  T& at(long i, long j, long k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T at(long i) const { return data_[static_cast<size_t>(i)]; }
  T at(long i, long j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  T at(long i, long j, long k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::vector<long> shape_;
  std::vector<T> data_;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<long> shape)
      : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.zero(); }
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    fail(Err::ShapeMismatch,
         std::string(what) + ": " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace cyclesing
