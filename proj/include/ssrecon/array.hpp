#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Dense row-major double tensor. Everything numeric in this project runs on
// 64-bit reals; shapes are small enough that simplicity beats cleverness.
// Storage is a raw buffer so hot paths can allocate without the zero-fill
// (Array::uninit); the default constructor zero-fills, which gradient
// accumulators rely on.

#define SSR_CHECK(cond, msg)                \
  do {                                      \
    if (!(cond)) {                          \
      std::ostringstream oss_;              \
      oss_ << msg;                          \
      throw std::runtime_error(oss_.str()); \
    }                                       \
  } while (0)

namespace ssr {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) return -1;
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Array {
 public:
  Array() = default;

  explicit Array(Shape shape, double fill = 0.0) : Array(kUninitTag{}, std::move(shape)) {
    std::fill(v_.get(), v_.get() + n_, fill);
  }

  Array(Shape shape, const std::vector<double>& data) : Array(kUninitTag{}, std::move(shape)) {
    SSR_CHECK(static_cast<int64_t>(data.size()) == n_,
              "data length " << data.size() << " does not match shape " << shape_str(shape_));
    std::memcpy(v_.get(), data.data(), static_cast<size_t>(n_) * sizeof(double));
  }

  // Allocation without the zero fill; caller promises to write every element.
  static Array uninit(Shape shape) { return Array(kUninitTag{}, std::move(shape)); }

  static Array scalar(double x) {
    Array a = uninit({1});
    a[0] = x;
    return a;
  }

  static Array of(std::initializer_list<double> xs) {
    return Array({static_cast<int>(xs.size())}, std::vector<double>(xs));
  }

  Array(const Array& o) : Array(kUninitTag{}, o.shape_) {
    std::memcpy(v_.get(), o.v_.get(), static_cast<size_t>(n_) * sizeof(double));
  }
  Array& operator=(const Array& o) {
    if (this != &o) {
      Array tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Array(Array&&) noexcept = default;
  Array& operator=(Array&&) noexcept = default;

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return n_; }
  bool empty() const { return n_ == 0; }

  double* data() { return v_.get(); }
  const double* data() const { return v_.get(); }

  double& operator[](int64_t i) { return v_[i]; }
  double operator[](int64_t i) const { return v_[i]; }

  // 2-d / 3-d accessors for the common cases (row-major).
  double& at2(int i, int j) { return v_[static_cast<int64_t>(i) * dim(1) + j]; }
  double at2(int i, int j) const { return v_[static_cast<int64_t>(i) * dim(1) + j]; }
  double& at3(int i, int j, int k) {
    return v_[(static_cast<int64_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at3(int i, int j, int k) const {
    return v_[(static_cast<int64_t>(i) * dim(1) + j) * dim(2) + k];
  }

  double item() const {
    SSR_CHECK(n_ == 1, "item() on tensor of shape " << shape_str(shape_));
    return v_[0];
  }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  Array reshaped(Shape s) const {
    SSR_CHECK(shape_numel(s) == n_, "reshape " << shape_str(shape_) << " -> " << shape_str(s));
    Array out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  void fill(double x) { std::fill(v_.get(), v_.get() + n_, x); }

  bool all_finite() const {
    for (int64_t i = 0; i < n_; ++i)
      if (!std::isfinite(v_[i])) return false;
    return true;
  }

 private:
  struct kUninitTag {};
  Array(kUninitTag, Shape shape) : shape_(std::move(shape)) {
    n_ = shape_numel(shape_);
    SSR_CHECK(n_ >= 0, "negative extent in shape " << shape_str(shape_));
    if (n_ > 0) v_.reset(new double[static_cast<size_t>(n_)]);
  }

  Shape shape_;
  int64_t n_ = 0;
  std::unique_ptr<double[]> v_;
};

inline double max_abs_diff(const Array& a, const Array& b) {
  SSR_CHECK(a.same_shape(b), "max_abs_diff shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace ssr
