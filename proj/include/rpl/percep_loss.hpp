#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rpl/error.hpp"
#include "rpl/ops.hpp"
#include "rpl/percep_net.hpp"
#include "rpl/tensor.hpp"

namespace rpl {

namespace levels {
/// Discrepancy of the pooled final embedding only.
struct FinalOnly {
  friend bool operator==(const FinalOnly&, const FinalOnly&) = default;
};
/// Weighted sum of per-block discrepancies at the pre-pool taps.
struct MultiLevel {
  std::vector<double> scales;
  friend bool operator==(const MultiLevel&, const MultiLevel&) = default;
};
}  // namespace levels

using LevelSelection = std::variant<levels::FinalOnly, levels::MultiLevel>;

/// Per-level weights 1/2^(k-1), ..., 1/4, 1/2, 1 for a k-block network.
inline std::vector<double> halving_scales(std::size_t block_count) {
  std::vector<double> s(block_count);
  double v = 1.0;
  for (std::size_t i = block_count; i-- > 0; v *= 0.5) s[i] = v;
  return s;
}

struct LossConfig {
  double lambda = 0.1;
  LevelSelection levels = levels::FinalOnly{};

  void validate(const PercepNet& net) const {
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "loss config: lambda must be >= 0");
    if (const auto* ml = std::get_if<levels::MultiLevel>(&levels)) {
      detail::require(ml->scales.size() == net.spec().block_count(),
                      "loss config: " + std::to_string(ml->scales.size()) + " level scales for a " +
                          std::to_string(net.spec().block_count()) + "-block net");
      bool any = false;
      for (double s : ml->scales) {
        detail::require(s >= 0.0 && std::isfinite(s), "loss config: level scales must be >= 0");
        any = any || s > 0.0;
      }
      detail::require(any, "loss config: level scales are all zero");
    }
  }
};

/// Target-side activations, reusable across evaluations against the same target.
/// Only the levels the config reads are kept.
struct TargetFeatures {
  Shape input_shape{};
  BlockActivations activations;
};

namespace detail {

inline void check_pair(const PercepNet& net, const Shape& pred, const Shape& target) {
  require(pred == target, "percep loss: pred " + to_string(pred) + " and target " + to_string(target) +
                              " differ in shape");
  require(pred.c == net.spec().in_channels, "percep loss: tensors have " + std::to_string(pred.c) +
                                                " channels, net expects " + std::to_string(net.spec().in_channels));
}

inline bool uses_level(const LevelSelection& sel, std::size_t block) {
  const auto* ml = std::get_if<levels::MultiLevel>(&sel);
  return ml && ml->scales[block] != 0.0;
}

}  // namespace detail

inline TargetFeatures embed_target(const PercepNet& net, const Tensor& target, const LossConfig& cfg) {
  cfg.validate(net);
  detail::require(target.c() == net.spec().in_channels, "embed_target: channel mismatch");
  TargetFeatures tf{target.shape(), net.forward(pad_to_multiple(target, net.spec().spatial_multiple()))};
  if (std::holds_alternative<levels::FinalOnly>(cfg.levels)) {
    tf.activations.blocks.clear();
  } else {
    for (std::size_t b = 0; b < tf.activations.blocks.size(); ++b)
      if (!detail::uses_level(cfg.levels, b)) tf.activations.blocks[b] = Tensor();
    tf.activations.embedding = Tensor();
  }
  return tf;
}

namespace detail {

inline double level_loss(const BlockActivations& p, const BlockActivations& t, const LossConfig& cfg) {
  if (std::holds_alternative<levels::FinalOnly>(cfg.levels)) return mse(p.embedding, t.embedding);
  const auto& scales = std::get<levels::MultiLevel>(cfg.levels).scales;
  double total = 0.0;
  for (std::size_t b = 0; b < scales.size(); ++b)
    if (scales[b] != 0.0) total += scales[b] * mse(p.blocks[b], t.blocks[b]);
  return total;
}

}  // namespace detail

inline double percep_loss(const PercepNet& net, const Tensor& pred, const TargetFeatures& target,
                          const LossConfig& cfg) {
  cfg.validate(net);
  detail::check_pair(net, pred.shape(), target.input_shape);
  const BlockActivations p = net.forward(pad_to_multiple(pred, net.spec().spatial_multiple()));
  return detail::level_loss(p, target.activations, cfg);
}

/// Perceptual discrepancy between pred and target through the shared net.
inline double percep_loss(const PercepNet& net, const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  cfg.validate(net);
  detail::check_pair(net, pred.shape(), target.shape());
  const std::size_t m = net.spec().spatial_multiple();
  const BlockActivations p = net.forward(pad_to_multiple(pred, m));
  const BlockActivations t = net.forward(pad_to_multiple(target, m));
  return detail::level_loss(p, t, cfg);
}

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Loss and its gradient with respect to pred. The target is a constant.
inline LossAndGrad percep_loss_grad(const PercepNet& net, const Tensor& pred, const TargetFeatures& target,
                                    const LossConfig& cfg) {
  cfg.validate(net);
  detail::check_pair(net, pred.shape(), target.input_shape);
  const ForwardTrace trace = net.run(pad_to_multiple(pred, net.spec().spatial_multiple()), true);
  const BlockActivations& p = trace.activations;
  const BlockActivations& t = target.activations;
  LevelGradients lg;
  if (std::holds_alternative<levels::FinalOnly>(cfg.levels)) {
    lg.embedding = mse_grad(p.embedding, t.embedding);
  } else {
    const auto& scales = std::get<levels::MultiLevel>(cfg.levels).scales;
    lg.blocks.resize(scales.size());
    for (std::size_t b = 0; b < scales.size(); ++b)
      if (scales[b] != 0.0) lg.blocks[b] = scales[b] * mse_grad(p.blocks[b], t.blocks[b]);
  }
  LossAndGrad out{detail::level_loss(p, t, cfg), net.backward_to_input(trace, lg)};
  out.grad = crop(out.grad, pred.h(), pred.w());
  return out;
}

inline LossAndGrad percep_loss_grad(const PercepNet& net, const Tensor& pred, const Tensor& target,
                                    const LossConfig& cfg) {
  detail::check_pair(net, pred.shape(), target.shape());
  return percep_loss_grad(net, pred, embed_target(net, target, cfg), cfg);
}

/// task_loss + lambda * percep_loss, with the matching gradient.
inline LossAndGrad combined_loss(double task_loss, const Tensor& task_grad, const PercepNet& net, const Tensor& pred,
                                 const TargetFeatures& target, const LossConfig& cfg) {
  detail::require(task_grad.shape() == pred.shape(), "combined_loss: task gradient shape " +
                                                         to_string(task_grad.shape()) + " differs from pred " +
                                                         to_string(pred.shape()));
  cfg.validate(net);
  if (cfg.lambda == 0.0) return {task_loss, task_grad};
  LossAndGrad pl = percep_loss_grad(net, pred, target, cfg);
  LossAndGrad out{task_loss + cfg.lambda * pl.loss, task_grad};
  out.grad.axpy(cfg.lambda, pl.grad);
  return out;
}

inline LossAndGrad combined_loss(double task_loss, const Tensor& task_grad, const PercepNet& net, const Tensor& pred,
                                 const Tensor& target, const LossConfig& cfg) {
  detail::require(task_grad.shape() == pred.shape(), "combined_loss: task gradient shape mismatch");
  detail::check_pair(net, pred.shape(), target.shape());
  cfg.validate(net);
  if (cfg.lambda == 0.0) return {task_loss, task_grad};
  return combined_loss(task_loss, task_grad, net, pred, embed_target(net, target, cfg), cfg);
}

}  // namespace rpl
