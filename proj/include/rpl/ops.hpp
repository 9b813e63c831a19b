#pragma once

// Convolution, activation, pooling and reduction kernels over NCHW tensors.
//
// Convolutions are stride 1 with same-zero padding ((k-1)/2 on every side) and
// are lowered to im2col + one dense GEMM per batch element. The GEMM runs
// single-threaded through Eigen, so the summation order is fixed for a given
// build and results are reproducible bit for bit.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rpl/error.hpp"
#include "rpl/tensor.hpp"

namespace rpl {

/// Weights (d_out, c_in, k, k) and bias (d_out) of one convolution.
struct ConvKernel {
  std::size_t d_out = 0;
  std::size_t c_in = 0;
  std::size_t k = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvKernel() = default;
  ConvKernel(std::size_t d_out_, std::size_t c_in_, std::size_t k_)
      : d_out(d_out_), c_in(c_in_), k(k_), weights(d_out_ * c_in_ * k_ * k_, 0.0), bias(d_out_, 0.0) {
    validate();
  }

  /// n_l = k^2 * c_in, the number of inputs feeding one output unit.
  std::size_t fan_in() const { return k * k * c_in; }
  std::size_t pad() const { return (k - 1) / 2; }

  double& weight(std::size_t d, std::size_t c, std::size_t u, std::size_t v) {
    return weights[((d * c_in + c) * k + u) * k + v];
  }
  double weight(std::size_t d, std::size_t c, std::size_t u, std::size_t v) const {
    return weights[((d * c_in + c) * k + u) * k + v];
  }

  void validate() const {
    detail::require(k >= 1 && k % 2 == 1, "kernel size must be odd and >= 1, got " + std::to_string(k));
    detail::require(c_in > 0 && d_out > 0, "kernel channel counts must be positive");
    detail::require(weights.size() == d_out * fan_in(), "kernel weight count mismatch");
    detail::require(bias.size() == d_out, "kernel bias count mismatch");
  }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

inline void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite input");
}

/// Rows (c, u, v), columns (i, j): col[(c,u,v), (i,j)] = padded[c, i+u, j+v].
inline void im2col(std::span<const double> img, std::size_t c_in, std::size_t h, std::size_t w,
                   std::size_t k, std::vector<double>& col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t hw = h * w;
  col.assign(c_in * k * k * hw, 0.0);
  for (std::size_t c = 0; c < c_in; ++c) {
    const double* src = img.data() + c * hw;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        double* dst = col.data() + ((c * k + u) * k + v) * hw;
        const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
        for (std::size_t i = 0; i < h; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + du;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
          const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv);
          const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                             static_cast<std::ptrdiff_t>(w) - dv);
          for (std::ptrdiff_t j = j0; j < j1; ++j)
            dst[i * w + static_cast<std::size_t>(j)] = src[static_cast<std::size_t>(si) * w +
                                                           static_cast<std::size_t>(j + dv)];
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add columns back onto the image.
inline void col2im(const std::vector<double>& col, std::size_t c_in, std::size_t h, std::size_t w,
                   std::size_t k, std::span<double> img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < c_in; ++c) {
    double* dst = img.data() + c * hw;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        const double* src = col.data() + ((c * k + u) * k + v) * hw;
        const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
        for (std::size_t i = 0; i < h; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + du;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
          const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv);
          const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                             static_cast<std::ptrdiff_t>(w) - dv);
          for (std::ptrdiff_t j = j0; j < j1; ++j)
            dst[static_cast<std::size_t>(si) * w + static_cast<std::size_t>(j + dv)] +=
                src[i * w + static_cast<std::size_t>(j)];
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& input, const ConvKernel& kernel) {
  kernel.validate();
  detail::require(input.c() == kernel.c_in, "conv2d_forward: input has " + std::to_string(input.c()) +
                                                " channels, kernel expects " + std::to_string(kernel.c_in));
  detail::require_finite(input, "conv2d_forward");
  const Shape& s = input.shape();
  Tensor out(Shape{s.n, kernel.d_out, s.h, s.w});
  const std::size_t hw = s.plane();
  const std::size_t rows = kernel.fan_in();
  detail::ConstRowMap wmat(kernel.weights.data(), static_cast<Eigen::Index>(kernel.d_out),
                           static_cast<Eigen::Index>(rows));
  std::vector<double> col;
  for (std::size_t b = 0; b < s.n; ++b) {
    auto img = input.data().subspan(b * s.c * hw, s.c * hw);
    detail::RowMap omat(out.data().data() + b * kernel.d_out * hw,
                        static_cast<Eigen::Index>(kernel.d_out), static_cast<Eigen::Index>(hw));
    if (kernel.k == 1) {
      detail::ConstRowMap imat(img.data(), static_cast<Eigen::Index>(s.c), static_cast<Eigen::Index>(hw));
      omat.noalias() = wmat * imat;
    } else {
      detail::im2col(img, s.c, s.h, s.w, kernel.k, col);
      detail::ConstRowMap cmat(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw));
      omat.noalias() = wmat * cmat;
    }
    for (std::size_t d = 0; d < kernel.d_out; ++d) {
      const double bias = kernel.bias[d];
      if (bias == 0.0) continue;
      for (double& v : out.plane(b, d)) v += bias;
    }
  }
  return out;
}

/// Gradient of a scalar with respect to the convolution input.
inline Tensor conv2d_backward_input(const Tensor& grad_out, const ConvKernel& kernel) {
  kernel.validate();
  detail::require(grad_out.c() == kernel.d_out, "conv2d_backward_input: gradient has " +
                                                     std::to_string(grad_out.c()) + " channels, kernel emits " +
                                                     std::to_string(kernel.d_out));
  const Shape& s = grad_out.shape();
  Tensor grad_in(Shape{s.n, kernel.c_in, s.h, s.w});
  const std::size_t hw = s.plane();
  const std::size_t rows = kernel.fan_in();
  detail::ConstRowMap wmat(kernel.weights.data(), static_cast<Eigen::Index>(kernel.d_out),
                           static_cast<Eigen::Index>(rows));
  std::vector<double> col(rows * hw);
  for (std::size_t b = 0; b < s.n; ++b) {
    detail::ConstRowMap gmat(grad_out.data().data() + b * kernel.d_out * hw,
                             static_cast<Eigen::Index>(kernel.d_out), static_cast<Eigen::Index>(hw));
    auto dst = grad_in.data().subspan(b * kernel.c_in * hw, kernel.c_in * hw);
    if (kernel.k == 1) {
      detail::RowMap imat(dst.data(), static_cast<Eigen::Index>(kernel.c_in), static_cast<Eigen::Index>(hw));
      imat.noalias() = wmat.transpose() * gmat;
    } else {
      detail::RowMap cmat(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw));
      cmat.noalias() = wmat.transpose() * gmat;
      detail::col2im(col, kernel.c_in, s.h, s.w, kernel.k, dst);
    }
  }
  return grad_in;
}

/// Parameter gradients of a convolution, laid out like ConvKernel.
struct ConvGrads {
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Weight and bias gradients, summed over the batch. Only trainable student
/// layers use this; loss-network weights stay fixed.
inline ConvGrads conv2d_backward_params(const Tensor& input, const Tensor& grad_out, const ConvKernel& kernel) {
  kernel.validate();
  detail::require(input.c() == kernel.c_in && grad_out.c() == kernel.d_out && input.n() == grad_out.n() &&
                      input.h() == grad_out.h() && input.w() == grad_out.w(),
                  "conv2d_backward_params: shape mismatch");
  const Shape& s = input.shape();
  const std::size_t hw = s.plane();
  const std::size_t rows = kernel.fan_in();
  ConvGrads g{std::vector<double>(kernel.weights.size(), 0.0), std::vector<double>(kernel.d_out, 0.0)};
  detail::RowMap gw(g.weights.data(), static_cast<Eigen::Index>(kernel.d_out), static_cast<Eigen::Index>(rows));
  std::vector<double> col;
  for (std::size_t b = 0; b < s.n; ++b) {
    detail::ConstRowMap gmat(grad_out.data().data() + b * kernel.d_out * hw,
                             static_cast<Eigen::Index>(kernel.d_out), static_cast<Eigen::Index>(hw));
    detail::im2col(input.data().subspan(b * s.c * hw, s.c * hw), s.c, s.h, s.w, kernel.k, col);
    detail::ConstRowMap cmat(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw));
    gw.noalias() += gmat * cmat.transpose();
    for (std::size_t d = 0; d < kernel.d_out; ++d)
      for (double v : grad_out.plane(b, d)) g.bias[d] += v;
  }
  return g;
}

inline Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Masks grad_out by (forward_input > 0); the subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& forward_input) {
  detail::require(grad_out.shape() == forward_input.shape(), "relu_backward: shape mismatch");
  Tensor g = grad_out;
  auto x = forward_input.data();
  auto gd = g.data();
  for (std::size_t k = 0; k < gd.size(); ++k)
    if (!(x[k] > 0.0)) gd[k] = 0.0;
  return g;
}

/// Argmax positions of a 2x2 max-pool, as flat indices into the pooled input.
struct PoolIndices {
  Shape input_shape{};
  std::vector<std::uint32_t> argmax;
};

struct PoolResult {
  Tensor output;
  PoolIndices indices;
};

/// 2x2 stride-2 max pool. Ties resolve to the first position in row-major order.
inline PoolResult maxpool2x2_forward(const Tensor& input) {
  const Shape& s = input.shape();
  detail::require(s.h % 2 == 0 && s.w % 2 == 0,
                  "maxpool2x2_forward: spatial dims must be even, got " + to_string(s));
  Shape os{s.n, s.c, s.h / 2, s.w / 2};
  PoolResult r{Tensor(os), PoolIndices{s, std::vector<std::uint32_t>(os.numel())}};
  std::size_t o = 0;
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < os.h; ++i)
        for (std::size_t j = 0; j < os.w; ++j, ++o) {
          std::size_t best = input.index(b, c, 2 * i, 2 * j);
          const std::size_t cand[3] = {best + 1, input.index(b, c, 2 * i + 1, 2 * j),
                                       input.index(b, c, 2 * i + 1, 2 * j) + 1};
          for (std::size_t q : cand)
            if (input[q] > input[best]) best = q;
          r.output[o] = input[best];
          r.indices.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

inline Tensor maxpool2x2_backward(const Tensor& grad_out, const PoolIndices& indices) {
  const Shape& is = indices.input_shape;
  detail::require(grad_out.shape() == Shape{is.n, is.c, is.h / 2, is.w / 2} &&
                      indices.argmax.size() == grad_out.size(),
                  "maxpool2x2_backward: indices do not match gradient shape");
  Tensor g(is);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    const std::size_t q = indices.argmax[o];
    detail::require(q < g.size(), "maxpool2x2_backward: index out of range");
    g[q] += grad_out[o];
  }
  return g;
}

/// (1/(c*h*w)) * sum (a-b)^2, averaged over the batch.
inline double mse(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mse: shape mismatch " + to_string(a.shape()) + " vs " +
                                              to_string(b.shape()));
  detail::require(!a.empty(), "mse: empty tensors");
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - y[k];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// Gradient of mse(a, b) with respect to a.
inline Tensor mse_grad(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mse_grad: shape mismatch");
  Tensor g(a.shape());
  const double scale = 2.0 / static_cast<double>(a.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * (a[k] - b[k]);
  return g;
}

/// Population variance over every element.
inline double variance(const Tensor& t) {
  detail::require(!t.empty(), "variance of empty tensor");
  double mean = 0.0;
  for (double v : t.data()) mean += v;
  mean /= static_cast<double>(t.size());
  double acc = 0.0;
  for (double v : t.data()) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(t.size());
}

inline double rms(const Tensor& t) {
  detail::require(!t.empty(), "rms of empty tensor");
  double acc = 0.0;
  for (double v : t.data()) acc += v * v;
  return std::sqrt(acc / static_cast<double>(t.size()));
}

}  // namespace rpl
