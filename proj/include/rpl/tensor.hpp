#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rpl/error.hpp"

namespace rpl {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }

/// Dense row-major (batch, channel, row, col) array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    detail::require(data_.size() == shape_.numel(),
                    "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        to_string(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(s, 0.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t i, std::size_t j) const {
    return ((b * shape_.c + ch) * shape_.h + i) * shape_.w + j;
  }
  double& at(std::size_t b, std::size_t ch, std::size_t i, std::size_t j) {
    return data_[index(b, ch, i, j)];
  }
  double at(std::size_t b, std::size_t ch, std::size_t i, std::size_t j) const {
    return data_[index(b, ch, i, j)];
  }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  /// Contiguous h*w plane of one (batch, channel) pair.
  std::span<double> plane(std::size_t b, std::size_t ch) {
    return std::span<double>(data_).subspan(index(b, ch, 0, 0), shape_.plane());
  }
  std::span<const double> plane(std::size_t b, std::size_t ch) const {
    return std::span<const double>(data_).subspan(index(b, ch, 0, 0), shape_.plane());
  }

  /// One batch element as its own 1xCxHxW tensor.
  Tensor slice(std::size_t b) const {
    Shape s{1, shape_.c, shape_.h, shape_.w};
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(b * s.numel());
    return Tensor(s, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.numel())));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    detail::require(o.shape_ == shape_, "tensor += shape mismatch");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  /// this += s * o
  Tensor& axpy(double s, const Tensor& o) {
    detail::require(o.shape_ == shape_, "tensor axpy shape mismatch");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += s * o.data_[k];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

inline Tensor operator*(double s, Tensor t) { return t *= s; }
inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a.axpy(-1.0, b); }

/// Stack 1xCxHxW tensors along the batch axis.
inline Tensor stack(std::span<const Tensor> items) {
  detail::require(!items.empty(), "stack of empty list");
  Shape s = items.front().shape();
  detail::require(s.n == 1, "stack expects single-sample tensors");
  Tensor out(Shape{items.size(), s.c, s.h, s.w});
  auto dst = out.storage().begin();
  for (const Tensor& t : items) {
    detail::require(t.shape() == s, "stack shape mismatch");
    dst = std::copy(t.storage().begin(), t.storage().end(), dst);
  }
  return out;
}

/// Mirror along the column axis.
inline Tensor flip_horizontal(const Tensor& t) {
  Tensor out(t.shape());
  const Shape& s = t.shape();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t ch = 0; ch < s.c; ++ch)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) out.at(b, ch, i, j) = t.at(b, ch, i, s.w - 1 - j);
  return out;
}

/// Zero-pad on the bottom/right so h and w become multiples of `multiple`.
inline Tensor pad_to_multiple(const Tensor& t, std::size_t multiple) {
  detail::require(multiple >= 1, "pad multiple must be >= 1");
  const Shape& s = t.shape();
  auto up = [&](std::size_t v) { return (v + multiple - 1) / multiple * multiple; };
  Shape ps{s.n, s.c, up(s.h), up(s.w)};
  if (ps == s) return t;
  Tensor out(ps);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t ch = 0; ch < s.c; ++ch)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) out.at(b, ch, i, j) = t.at(b, ch, i, j);
  return out;
}

/// Inverse of pad_to_multiple for gradients: keep the top-left h x w window.
inline Tensor crop(const Tensor& t, std::size_t h, std::size_t w) {
  const Shape& s = t.shape();
  detail::require(h <= s.h && w <= s.w, "crop larger than tensor");
  if (h == s.h && w == s.w) return t;
  Tensor out(Shape{s.n, s.c, h, w});
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t ch = 0; ch < s.c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(b, ch, i, j) = t.at(b, ch, i, j);
  return out;
}

}  // namespace rpl
