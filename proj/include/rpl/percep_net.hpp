#pragma once

// The fixed, randomly weighted VGG-style loss network.
//
// A network is described by per-block conv counts N_1..N_k and per-block
// widths. Block i applies N_i times (conv -> relu) and then one 2x2 max-pool.
// Weights are drawn once from the spec seed and never change; biases are zero.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "rpl/error.hpp"
#include "rpl/ops.hpp"
#include "rpl/rng.hpp"
#include "rpl/tensor.hpp"

namespace rpl {

namespace init {
/// Zero-mean Gaussian with std sqrt(2 / n_l).
struct Calibrated {
  friend bool operator==(const Calibrated&, const Calibrated&) = default;
};
/// Zero-mean Gaussian with a fixed std.
struct Gaussian {
  double sigma = 1.0;
  friend bool operator==(const Gaussian&, const Gaussian&) = default;
};
/// Uniform on [-a, a].
struct Uniform {
  double a = 1.0;
  friend bool operator==(const Uniform&, const Uniform&) = default;
};
/// Zero-mean Gaussian with std sqrt(2 / (fan_in + fan_out)), fan_out = k^2 * d_l.
struct XavierNormal {
  friend bool operator==(const XavierNormal&, const XavierNormal&) = default;
};
}  // namespace init

using InitScheme = std::variant<init::Calibrated, init::Gaussian, init::Uniform, init::XavierNormal>;

namespace detail {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
}  // namespace detail

/// Text form: "calibrated", "xavier", "gaussian:<sigma>", "uniform:<a>".
inline std::string to_string(const InitScheme& s) {
  return std::visit(detail::overloaded{
                        [](const init::Calibrated&) { return std::string("calibrated"); },
                        [](const init::XavierNormal&) { return std::string("xavier"); },
                        [](const init::Gaussian& g) { return "gaussian:" + detail::format_number(g.sigma); },
                        [](const init::Uniform& u) { return "uniform:" + detail::format_number(u.a); },
                    },
                    s);
}

inline InitScheme parse_init_scheme(const std::string& text) {
  if (text == "calibrated" || text == "ours") return init::Calibrated{};
  if (text == "xavier" || text == "xavier-normal") return init::XavierNormal{};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string kind = text.substr(0, colon);
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(text.substr(colon + 1), &used);
      detail::require(used == text.size() - colon - 1, "trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("init scheme '" + text + "': bad numeric parameter");
    }
    if (kind == "gaussian") return init::Gaussian{value};
    if (kind == "uniform") return init::Uniform{value};
  }
  throw ConfigError("unknown init scheme '" + text + "'");
}

/// Per-layer variance factor (1/2) * n_l * Var[w_l] that the scheme implies.
inline double variance_factor(const InitScheme& scheme, std::size_t fan_in, std::size_t fan_out) {
  const double n = static_cast<double>(fan_in);
  return std::visit(detail::overloaded{
                        [&](const init::Calibrated&) { return 0.5 * n * (2.0 / n); },
                        [&](const init::XavierNormal&) {
                          return 0.5 * n * 2.0 / (n + static_cast<double>(fan_out));
                        },
                        [&](const init::Gaussian& g) { return 0.5 * n * g.sigma * g.sigma; },
                        [&](const init::Uniform& u) { return 0.5 * n * u.a * u.a / 3.0; },
                    },
                    scheme);
}

struct PercepNetSpec {
  std::vector<std::size_t> blocks{2, 2, 3, 3, 3};
  std::vector<std::size_t> channels{64, 128, 256, 512, 512};
  std::size_t kernel_size = 3;
  std::size_t in_channels = 1;
  InitScheme init = init::Calibrated{};
  std::uint64_t seed = 0;

  std::size_t block_count() const { return blocks.size(); }
  std::size_t conv_count() const {
    std::size_t n = 0;
    for (std::size_t b : blocks) n += b;
    return n;
  }
  /// Spatial dims must be divisible by this before forward.
  std::size_t spatial_multiple() const { return std::size_t{1} << blocks.size(); }

  void validate() const {
    detail::require(!blocks.empty(), "percep spec: at least one block required");
    detail::require(blocks.size() == channels.size(), "percep spec: blocks and channels lengths differ");
    for (std::size_t b : blocks) detail::require(b >= 1, "percep spec: every block needs >= 1 conv");
    for (std::size_t c : channels) detail::require(c >= 1, "percep spec: every width must be >= 1");
    detail::require(kernel_size >= 1 && kernel_size % 2 == 1, "percep spec: kernel_size must be odd");
    detail::require(in_channels >= 1, "percep spec: in_channels must be >= 1");
    detail::require(blocks.size() < 16, "percep spec: too many pooling stages");
    std::visit(detail::overloaded{
                   [](const init::Gaussian& g) {
                     detail::require(g.sigma > 0.0 && std::isfinite(g.sigma), "percep spec: gaussian sigma must be > 0");
                   },
                   [](const init::Uniform& u) {
                     detail::require(u.a > 0.0 && std::isfinite(u.a), "percep spec: uniform bound must be > 0");
                   },
                   [](const auto&) {},
               },
               init);
  }

  friend bool operator==(const PercepNetSpec&, const PercepNetSpec&) = default;
};

/// Parses the comma-separated per-block conv counts, e.g. "2,2,3,3,3".
inline std::vector<std::size_t> parse_structure(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    detail::require(first != std::string::npos, "structure '" + text + "': empty entry");
    item = item.substr(first, last - first + 1);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    detail::require(used == item.size() && !item.empty() && item[0] != '-' && v >= 1,
                    "structure '" + text + "': entries must be positive integers");
    out.push_back(v);
  }
  detail::require(!out.empty(), "structure '" + text + "' is empty");
  return out;
}

inline std::string format_structure(const std::vector<std::size_t>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) s += (i ? "," : "") + std::to_string(blocks[i]);
  return s;
}

enum class LayerKind { Conv, Relu, MaxPool };

/// Outputs of the final relu of every block (pre-pool) and the pooled embedding.
struct BlockActivations {
  std::vector<Tensor> blocks;
  Tensor embedding;
};

/// Everything backward needs from a forward pass.
struct ForwardTrace {
  BlockActivations activations;
  std::vector<Tensor> pre_activations;  // conv outputs e_l, one per conv layer
  std::vector<PoolIndices> pools;
};

/// Gradients injected at the activation taps. Empty tensors mean "no gradient".
struct LevelGradients {
  std::vector<Tensor> blocks;
  Tensor embedding;
};

class PercepNet {
 public:
  /// Draws every weight from one Rng seeded with spec.seed, layer by layer in
  /// network order, each kernel in (d_out, c_in, u, v) row-major order.
  static PercepNet build(const PercepNetSpec& spec) {
    spec.validate();
    PercepNet net;
    net.spec_ = spec;
    Rng rng(spec.seed);
    std::size_t c_in = spec.in_channels;
    const std::size_t k = spec.kernel_size;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
      for (std::size_t r = 0; r < spec.blocks[b]; ++r) {
        ConvKernel kernel(spec.channels[b], c_in, k);
        const double n = static_cast<double>(kernel.fan_in());
        const double fan_out = static_cast<double>(k * k * kernel.d_out);
        std::visit(detail::overloaded{
                       [&](const init::Calibrated&) {
                         const double sd = std::sqrt(2.0 / n);
                         for (double& w : kernel.weights) w = rng.normal(0.0, sd);
                       },
                       [&](const init::XavierNormal&) {
                         const double sd = std::sqrt(2.0 / (n + fan_out));
                         for (double& w : kernel.weights) w = rng.normal(0.0, sd);
                       },
                       [&](const init::Gaussian& g) {
                         for (double& w : kernel.weights) w = rng.normal(0.0, g.sigma);
                       },
                       [&](const init::Uniform& u) {
                         for (double& w : kernel.weights) w = rng.uniform(-u.a, u.a);
                       },
                   },
                   spec.init);
        net.convs_.push_back(std::move(kernel));
        c_in = spec.channels[b];
      }
    }
    return net;
  }

  const PercepNetSpec& spec() const { return spec_; }
  const std::vector<ConvKernel>& convs() const { return convs_; }

  std::vector<LayerKind> layers() const {
    std::vector<LayerKind> out;
    for (std::size_t n : spec_.blocks) {
      for (std::size_t r = 0; r < n; ++r) {
        out.push_back(LayerKind::Conv);
        out.push_back(LayerKind::Relu);
      }
      out.push_back(LayerKind::MaxPool);
    }
    return out;
  }

  void check_input(const Shape& s) const {
    detail::require(s.c == spec_.in_channels, "percep forward: input has " + std::to_string(s.c) +
                                                  " channels, net expects " + std::to_string(spec_.in_channels));
    const std::size_t m = spec_.spatial_multiple();
    detail::require(s.h > 0 && s.w > 0 && s.h % m == 0 && s.w % m == 0,
                    "percep forward: spatial dims " + to_string(s) + " not divisible by " + std::to_string(m));
  }

  /// Runs the network. With `keep_trace` the conv outputs and pool indices are
  /// retained for backward_to_input.
  ForwardTrace run(const Tensor& x, bool keep_trace) const {
    check_input(x.shape());
    detail::require_finite(x, "percep forward");
    ForwardTrace trace;
    Tensor cur = x;
    std::size_t l = 0;
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
      for (std::size_t r = 0; r < spec_.blocks[b]; ++r, ++l) {
        Tensor e = conv2d_forward(cur, convs_[l]);
        cur = relu_forward(e);
        if (keep_trace) trace.pre_activations.push_back(std::move(e));
      }
      PoolResult pooled = maxpool2x2_forward(cur);
      trace.activations.blocks.push_back(std::move(cur));
      if (keep_trace) trace.pools.push_back(std::move(pooled.indices));
      cur = std::move(pooled.output);
    }
    trace.activations.embedding = std::move(cur);
    return trace;
  }

  BlockActivations forward(const Tensor& x) const { return run(x, false).activations; }

  Tensor backward_to_input(const ForwardTrace& trace, const LevelGradients& grads) const {
    const std::size_t nb = spec_.blocks.size();
    detail::require(trace.pre_activations.size() == convs_.size() && trace.pools.size() == nb,
                    "backward_to_input: trace was recorded without keep_trace");
    detail::require(grads.blocks.empty() || grads.blocks.size() == nb,
                    "backward_to_input: expected " + std::to_string(nb) + " block gradients");
    std::optional<Tensor> g;
    if (!grads.embedding.empty()) {
      detail::require(grads.embedding.shape() == trace.activations.embedding.shape(),
                      "backward_to_input: embedding gradient shape mismatch");
      g = grads.embedding;
    }
    std::size_t l = convs_.size();
    for (std::size_t b = nb; b-- > 0;) {
      if (g) g = maxpool2x2_backward(*g, trace.pools[b]);
      if (!grads.blocks.empty() && !grads.blocks[b].empty()) {
        detail::require(grads.blocks[b].shape() == trace.activations.blocks[b].shape(),
                        "backward_to_input: block " + std::to_string(b) + " gradient shape mismatch");
        if (g)
          *g += grads.blocks[b];
        else
          g = grads.blocks[b];
      }
      for (std::size_t r = 0; r < spec_.blocks[b]; ++r) {
        --l;
        if (!g) continue;
        g = conv2d_backward_input(relu_backward(*g, trace.pre_activations[l]), convs_[l]);
      }
    }
    if (!g) {
      const Tensor& e0 = trace.pre_activations.front();
      return Tensor(Shape{e0.n(), spec_.in_channels, e0.h(), e0.w()});
    }
    return std::move(*g);
  }

  Tensor backward_to_input(const Tensor& x, const LevelGradients& grads) const {
    return backward_to_input(run(x, true), grads);
  }

 private:
  PercepNetSpec spec_;
  std::vector<ConvKernel> convs_;
};

inline PercepNet build(const PercepNetSpec& spec) { return PercepNet::build(spec); }

}  // namespace rpl
