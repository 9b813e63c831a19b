#pragma once

// Synthetic dense-prediction tasks: per-pixel shape segmentation and
// blur/noise restoration, plus an analytic soft-target "teacher".

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rpl/error.hpp"
#include "rpl/rng.hpp"
#include "rpl/tensor.hpp"

namespace rpl {

/// Row-major map of per-pixel class indices.
struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h_, std::size_t w_, std::int32_t fill = 0) : h(h_), w(w_), data(h_ * w_, fill) {}

  std::int32_t& at(std::size_t i, std::size_t j) { return data[i * w + j]; }
  std::int32_t at(std::size_t i, std::size_t j) const { return data[i * w + j]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline LabelMap flip_horizontal(const LabelMap& m) {
  LabelMap out(m.h, m.w);
  for (std::size_t i = 0; i < m.h; ++i)
    for (std::size_t j = 0; j < m.w; ++j) out.at(i, j) = m.at(i, m.w - 1 - j);
  return out;
}

/// 1xCxHxW one-hot encoding.
inline Tensor one_hot(const LabelMap& m, std::size_t n_classes) {
  Tensor t(Shape{1, n_classes, m.h, m.w});
  for (std::size_t i = 0; i < m.h; ++i)
    for (std::size_t j = 0; j < m.w; ++j) {
      const auto c = m.at(i, j);
      detail::require(c >= 0 && static_cast<std::size_t>(c) < n_classes, "one_hot: label out of range");
      t.at(0, static_cast<std::size_t>(c), i, j) = 1.0;
    }
  return t;
}

/// Per-pixel argmax over channels of a 1xCxHxW tensor (first max wins).
inline LabelMap argmax_labels(const Tensor& t, std::size_t b = 0) {
  LabelMap m(t.h(), t.w());
  for (std::size_t i = 0; i < t.h(); ++i)
    for (std::size_t j = 0; j < t.w(); ++j) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < t.c(); ++c)
        if (t.at(b, c, i, j) > t.at(b, best, i, j)) best = c;
      m.at(i, j) = static_cast<std::int32_t>(best);
    }
  return m;
}

struct ShapesSample {
  Tensor image;       // 1x3xHxW, values in [0, 1]
  LabelMap label;     // 0 = background, 1..C-1 = shape classes
  Tensor soft_target; // 1xCxHxW, filled by the generator with default teacher settings
};

struct ShapesOptions {
  double color_jitter = 0.12;  // per-shape color offset std
  double pixel_noise = 0.25;   // per-pixel Gaussian noise std
  std::size_t min_class_pixels = 24;
  double soft_temperature = 0.25;
  std::size_t soft_radius = 2;
};

struct RestoreSample {
  Tensor degraded;  // 1x1xHxW
  Tensor clean;     // 1x1xHxW
};

namespace detail {

inline void require_dims(std::size_t h, std::size_t w, const char* who) {
  require(h > 0 && w > 0 && h % 32 == 0 && w % 32 == 0,
          std::string(who) + ": H and W must be positive multiples of 32");
}

/// Class colors: background mid-gray, shape classes spread around the hue circle.
inline std::array<double, 3> class_color(std::size_t cls, std::size_t n_classes) {
  if (cls == 0) return {0.5, 0.5, 0.5};
  const double hue = 2.0 * 3.14159265358979323846 * static_cast<double>(cls - 1) / static_cast<double>(n_classes - 1);
  return {0.5 + 0.3 * std::cos(hue), 0.5 + 0.3 * std::cos(hue - 2.0943951023931957),
          0.5 + 0.3 * std::cos(hue + 2.0943951023931957)};
}

/// Paints one primitive of kind (cls - 1) % 3: rectangle, disk or triangle.
inline void paint_shape(Rng& rng, LabelMap& lab, std::int32_t cls) {
  const double H = static_cast<double>(lab.h), W = static_cast<double>(lab.w);
  const double m = std::min(H, W);
  const double r = rng.uniform(0.10, 0.22) * m;
  const double cy = rng.uniform(r * 0.6, H - r * 0.6);
  const double cx = rng.uniform(r * 0.6, W - r * 0.6);
  const int kind = (cls - 1) % 3;
  const double aspect = rng.uniform(0.5, 1.0);
  const bool wide = rng.bernoulli(0.5);
  for (std::size_t i = 0; i < lab.h; ++i)
    for (std::size_t j = 0; j < lab.w; ++j) {
      const double y = static_cast<double>(i) + 0.5 - cy;
      const double x = static_cast<double>(j) + 0.5 - cx;
      bool in = false;
      if (kind == 0) {
        const double ry = wide ? r * aspect : r, rx = wide ? r : r * aspect;
        in = std::abs(y) < ry && std::abs(x) < rx;
      } else if (kind == 1) {
        in = x * x + y * y < r * r;
      } else {
        in = y > -r && y < r && std::abs(x) < 0.5 * (y + r) * 1.15;
      }
      if (in) lab.at(i, j) = cls;
    }
}

/// Mean of one-hot labels over the (2r+1)^2 window clipped to the image.
inline Tensor box_smoothed_one_hot(const LabelMap& lab, std::size_t n_classes, std::size_t radius) {
  Tensor oh = one_hot(lab, n_classes);
  if (radius == 0) return oh;
  Tensor out(oh.shape());
  const auto R = static_cast<std::ptrdiff_t>(radius);
  const auto Hs = static_cast<std::ptrdiff_t>(lab.h), Ws = static_cast<std::ptrdiff_t>(lab.w);
  for (std::ptrdiff_t i = 0; i < Hs; ++i)
    for (std::ptrdiff_t j = 0; j < Ws; ++j) {
      std::vector<double> acc(n_classes, 0.0);
      double count = 0.0;
      for (std::ptrdiff_t u = std::max<std::ptrdiff_t>(0, i - R); u <= std::min(Hs - 1, i + R); ++u)
        for (std::ptrdiff_t v = std::max<std::ptrdiff_t>(0, j - R); v <= std::min(Ws - 1, j + R); ++v) {
          acc[static_cast<std::size_t>(lab.at(static_cast<std::size_t>(u), static_cast<std::size_t>(v)))] += 1.0;
          count += 1.0;
        }
      for (std::size_t c = 0; c < n_classes; ++c)
        out.at(0, c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc[c] / count;
    }
  return out;
}

}  // namespace detail

/// Teacher stand-in: the one-hot label box-smoothed over a (2r+1)^2 window is
/// used as logits, and the soft target is softmax(logits / temperature).
inline Tensor soft_targets(const LabelMap& label, std::size_t n_classes, double temperature,
                           std::size_t edge_blur_radius) {
  detail::require(temperature > 0.0 && std::isfinite(temperature), "soft_targets: temperature must be > 0");
  detail::require(n_classes >= 2, "soft_targets: need >= 2 classes");
  Tensor logits = detail::box_smoothed_one_hot(label, n_classes, edge_blur_radius);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < label.h; ++i)
    for (std::size_t j = 0; j < label.w; ++j) {
      double mx = logits.at(0, 0, i, j);
      for (std::size_t c = 1; c < n_classes; ++c) mx = std::max(mx, logits.at(0, c, i, j));
      double z = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        const double e = std::exp((logits.at(0, c, i, j) - mx) / temperature);
        out.at(0, c, i, j) = e;
        z += e;
      }
      for (std::size_t c = 0; c < n_classes; ++c) out.at(0, c, i, j) /= z;
    }
  return out;
}

inline Tensor soft_targets(const ShapesSample& s, std::size_t n_classes, double temperature,
                           std::size_t edge_blur_radius) {
  return soft_targets(s.label, n_classes, temperature, edge_blur_radius);
}

/// Images of overlapping filled primitives with class-correlated colors and
/// pixel noise. Every shape class is painted at least once per sample and a
/// sample is redrawn until each class keeps min_class_pixels visible pixels.
inline std::vector<ShapesSample> gen_shapes(Rng& rng, std::size_t count, std::size_t H, std::size_t W,
                                            std::size_t n_classes, const ShapesOptions& opt = {}) {
  detail::require_dims(H, W, "gen_shapes");
  detail::require(n_classes >= 2, "gen_shapes: n_classes must be >= 2");
  detail::require(opt.min_class_pixels * n_classes < H * W, "gen_shapes: min_class_pixels too large");
  std::vector<ShapesSample> out;
  out.reserve(count);
  while (out.size() < count) {
    LabelMap lab(H, W, 0);
    std::vector<std::int32_t> order;
    for (std::size_t c = 1; c < n_classes; ++c) order.push_back(static_cast<std::int32_t>(c));
    const std::size_t extras = rng.uniform_int(3);
    for (std::size_t e = 0; e < extras; ++e)
      order.push_back(static_cast<std::int32_t>(1 + rng.uniform_int(n_classes - 1)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    for (std::int32_t c : order) detail::paint_shape(rng, lab, c);

    std::vector<std::size_t> counts(n_classes, 0);
    for (auto v : lab.data) ++counts[static_cast<std::size_t>(v)];
    if (std::any_of(counts.begin(), counts.end(), [&](std::size_t k) { return k < opt.min_class_pixels; })) continue;

    std::vector<std::array<double, 3>> colors(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
      colors[c] = detail::class_color(c, n_classes);
      for (double& ch : colors[c]) ch += rng.normal(0.0, opt.color_jitter);
    }
    Tensor img(Shape{1, 3, H, W});
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double v = colors[static_cast<std::size_t>(lab.at(i, j))][ch] + rng.normal(0.0, opt.pixel_noise);
          img.at(0, ch, i, j) = std::clamp(v, 0.0, 1.0);
        }
    Tensor soft = soft_targets(lab, n_classes, opt.soft_temperature, opt.soft_radius);
    out.push_back(ShapesSample{std::move(img), std::move(lab), std::move(soft)});
  }
  return out;
}

/// Separable Gaussian blur with clamp-to-edge borders, truncated at 4 sigma.
inline Tensor gaussian_blur(const Tensor& t, double sigma) {
  detail::require(sigma >= 0.0, "gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return t;
  const auto R = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * R + 1));
  double z = 0.0;
  for (std::ptrdiff_t d = -R; d <= R; ++d) {
    const double v = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
    k[static_cast<std::size_t>(d + R)] = v;
    z += v;
  }
  for (double& v : k) v /= z;
  const Shape& s = t.shape();
  const auto Hs = static_cast<std::ptrdiff_t>(s.h), Ws = static_cast<std::ptrdiff_t>(s.w);
  Tensor tmp(s), out(s);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::ptrdiff_t i = 0; i < Hs; ++i)
        for (std::ptrdiff_t j = 0; j < Ws; ++j) {
          double acc = 0.0;
          for (std::ptrdiff_t d = -R; d <= R; ++d)
            acc += k[static_cast<std::size_t>(d + R)] *
                   t.at(b, c, static_cast<std::size_t>(i), static_cast<std::size_t>(std::clamp(j + d, std::ptrdiff_t{0}, Ws - 1)));
          tmp.at(b, c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
        }
      for (std::ptrdiff_t i = 0; i < Hs; ++i)
        for (std::ptrdiff_t j = 0; j < Ws; ++j) {
          double acc = 0.0;
          for (std::ptrdiff_t d = -R; d <= R; ++d)
            acc += k[static_cast<std::size_t>(d + R)] *
                   tmp.at(b, c, static_cast<std::size_t>(std::clamp(i + d, std::ptrdiff_t{0}, Hs - 1)), static_cast<std::size_t>(j));
          out.at(b, c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
        }
    }
  return out;
}

/// Piecewise-smooth random field in [0, 1]: offset + Gaussian bumps + step
/// edges across random lines, clamped.
inline Tensor random_field(Rng& rng, std::size_t H, std::size_t W) {
  Tensor f(Shape{1, 1, H, W}, 0.5);
  const double m = static_cast<double>(std::min(H, W));
  const std::size_t n_bumps = 3 + rng.uniform_int(4);
  for (std::size_t q = 0; q < n_bumps; ++q) {
    const double cy = rng.uniform(0.0, static_cast<double>(H)), cx = rng.uniform(0.0, static_cast<double>(W));
    const double s = rng.uniform(0.08, 0.25) * m;
    const double a = rng.uniform(-0.25, 0.25);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double dy = static_cast<double>(i) + 0.5 - cy, dx = static_cast<double>(j) + 0.5 - cx;
        f.at(0, 0, i, j) += a * std::exp(-0.5 * (dx * dx + dy * dy) / (s * s));
      }
  }
  const std::size_t n_steps = 2 + rng.uniform_int(3);
  for (std::size_t q = 0; q < n_steps; ++q) {
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double ny = std::sin(theta), nx = std::cos(theta);
    const double py = rng.uniform(0.2, 0.8) * static_cast<double>(H), px = rng.uniform(0.2, 0.8) * static_cast<double>(W);
    const double a = rng.uniform(-0.2, 0.2);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double d = (static_cast<double>(i) + 0.5 - py) * ny + (static_cast<double>(j) + 0.5 - px) * nx;
        if (d > 0.0) f.at(0, 0, i, j) += a;
      }
  }
  for (double& v : f.data()) v = std::clamp(v, 0.0, 1.0);
  return f;
}

/// clean = random_field; degraded = gaussian_blur(clean, blur_sigma) + N(0, noise_sigma^2).
inline std::vector<RestoreSample> gen_restore(Rng& rng, std::size_t count, std::size_t H, std::size_t W,
                                              double blur_sigma, double noise_sigma) {
  detail::require_dims(H, W, "gen_restore");
  detail::require(blur_sigma >= 0.0 && noise_sigma >= 0.0, "gen_restore: sigmas must be >= 0");
  std::vector<RestoreSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Tensor clean = random_field(rng, H, W);
    Tensor degraded = gaussian_blur(clean, blur_sigma);
    if (noise_sigma > 0.0)
      for (double& v : degraded.data()) v += rng.normal(0.0, noise_sigma);
    out.push_back(RestoreSample{std::move(degraded), std::move(clean)});
  }
  return out;
}

/// n_classes x n_classes pixel counts, rows = truth, cols = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
    detail::require(n_classes >= 1, "confusion matrix needs >= 1 class");
  }

  void add(const LabelMap& pred, const LabelMap& truth) {
    detail::require(pred.h == truth.h && pred.w == truth.w, "mIoU: label maps differ in shape");
    for (std::size_t k = 0; k < pred.data.size(); ++k) {
      const auto p = pred.data[k], t = truth.data[k];
      detail::require(p >= 0 && t >= 0 && static_cast<std::size_t>(p) < n_ && static_cast<std::size_t>(t) < n_,
                      "mIoU: class index out of range");
      ++counts_[static_cast<std::size_t>(t) * n_ + static_cast<std::size_t>(p)];
    }
  }

  /// Mean over classes of |pred & true| / |pred | true|, skipping classes
  /// absent from both.
  double miou() const {
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < n_; ++c) {
      std::uint64_t inter = counts_[c * n_ + c], row = 0, col = 0;
      for (std::size_t o = 0; o < n_; ++o) {
        row += counts_[c * n_ + o];
        col += counts_[o * n_ + c];
      }
      const std::uint64_t uni = row + col - inter;
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++present;
    }
    detail::require(present > 0, "mIoU: no pixels");
    return sum / static_cast<double>(present);
  }

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

inline double miou(const LabelMap& pred, const LabelMap& truth, std::size_t n_classes) {
  ConfusionMatrix cm(n_classes);
  cm.add(pred, truth);
  return cm.miou();
}

}  // namespace rpl
