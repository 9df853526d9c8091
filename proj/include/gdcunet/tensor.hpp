// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense rank-4 tensor used as the feature-map carrier (B x H x W x C).
 *
 * Storage is row-major with the channel index fastest. Matrices and vectors
 * reuse the same type with leading unit extents, e.g. a linear map of
 * shape (1, 1, in, out) or a bias of shape (1, 1, 1, out).
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdc {

/// Raised on incompatible extents.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on invalid hyperparameters or configuration.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an API is called in a way its contract forbids.
class UsageError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

struct Shape {
  std::size_t b = 0, h = 0, w = 0, c = 0;

  constexpr std::size_t numel() const { return b * h * w * c; }
  constexpr std::size_t pixels() const { return h * w; }
  constexpr std::array<std::size_t, 4> dims() const { return {b, h, w, c}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << b << 'x' << h << 'x' << w << 'x' << c << ')';
    return os.str();
  }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <class T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.numel(), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("Tensor: " + std::to_string(data_.size()) +
                       " values do not fill shape " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return Tensor(Shape{1, 1, rows, cols}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::size_t offset(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const {
    return ((b * shape_.h + y) * shape_.w + x) * shape_.c + c;
  }
  T& operator()(std::size_t b, std::size_t y, std::size_t x, std::size_t c) {
    return data_[offset(b, y, x, c)];
  }
  const T& operator()(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const {
    return data_[offset(b, y, x, c)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Same storage reinterpreted with a different shape of equal element count.
  Tensor reshaped(Shape s) const& {
    if (s.numel() != shape_.numel())
      throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }
  Tensor reshaped(Shape s) && {
    if (s.numel() != shape_.numel())
      throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
    shape_ = s;
    return std::move(*this);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(shape_, o.shape_, "Tensor::operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

private:
  Shape shape_{};
  std::vector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace gdc
