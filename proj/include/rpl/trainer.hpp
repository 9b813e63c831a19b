#pragma once

// Small fully-convolutional student trained with plain SGD and a poly
// learning-rate schedule, with an optional perceptual term computed through a
// fixed random loss network.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rpl/error.hpp"
#include "rpl/ops.hpp"
#include "rpl/percep_loss.hpp"
#include "rpl/percep_net.hpp"
#include "rpl/rng.hpp"
#include "rpl/tensor.hpp"
#include "rpl/toy_tasks.hpp"

namespace rpl {

/// Six 3x3 same-padded conv layers, relu after all but the last, no pooling.
class StudentNet {
 public:
  static constexpr std::array<std::size_t, 5> kHiddenWidths{16, 32, 32, 32, 16};

  StudentNet() = default;

  /// He-normal weights (std sqrt(2 / fan_in)) drawn from `seed`, zero biases.
  StudentNet(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed) {
    detail::require(in_channels >= 1 && out_channels >= 1, "student: channel counts must be >= 1");
    Rng rng(seed);
    std::size_t c = in_channels;
    for (std::size_t l = 0; l <= kHiddenWidths.size(); ++l) {
      const std::size_t d = l < kHiddenWidths.size() ? kHiddenWidths[l] : out_channels;
      ConvKernel k(d, c, 3);
      const double sd = std::sqrt(2.0 / static_cast<double>(k.fan_in()));
      for (double& w : k.weights) w = rng.normal(0.0, sd);
      layers_.push_back(std::move(k));
      c = d;
    }
  }

  std::size_t in_channels() const { return layers_.front().c_in; }
  std::size_t out_channels() const { return layers_.back().d_out; }
  std::vector<ConvKernel>& layers() { return layers_; }
  const std::vector<ConvKernel>& layers() const { return layers_; }

  struct Cache {
    std::vector<Tensor> inputs;  // input of each conv
    std::vector<Tensor> pre;     // conv outputs
  };

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
    detail::require(x.c() == in_channels(), "student: input channel mismatch");
    Tensor cur = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Tensor e = conv2d_forward(cur, layers_[l]);
      if (cache) cache->inputs.push_back(std::move(cur));
      if (l + 1 == layers_.size()) return e;
      cur = relu_forward(e);
      if (cache) cache->pre.push_back(std::move(e));
    }
    return cur;
  }

  std::vector<ConvGrads> backward(const Cache& cache, const Tensor& grad_out) const {
    std::vector<ConvGrads> grads(layers_.size());
    Tensor g = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      grads[l] = conv2d_backward_params(cache.inputs[l], g, layers_[l]);
      if (l == 0) break;
      g = relu_backward(conv2d_backward_input(g, layers_[l]), cache.pre[l - 1]);
    }
    return grads;
  }

  void sgd_step(const std::vector<ConvGrads>& grads, double lr) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      for (std::size_t q = 0; q < layers_[l].weights.size(); ++q) layers_[l].weights[q] -= lr * grads[l].weights[q];
      for (std::size_t q = 0; q < layers_[l].bias.size(); ++q) layers_[l].bias[q] -= lr * grads[l].bias[q];
    }
  }

  bool all_finite() const {
    for (const auto& k : layers_) {
      for (double w : k.weights)
        if (!std::isfinite(w)) return false;
      for (double b : k.bias)
        if (!std::isfinite(b)) return false;
    }
    return true;
  }

  friend bool operator==(const StudentNet&, const StudentNet&) = default;

 private:
  std::vector<ConvKernel> layers_;
};

/// Channel softmax of an NCHW tensor.
inline Tensor softmax_channels(const Tensor& logits) {
  Tensor p(logits.shape());
  const Shape& s = logits.shape();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        double mx = logits.at(b, 0, i, j);
        for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, logits.at(b, c, i, j));
        double z = 0.0;
        for (std::size_t c = 0; c < s.c; ++c) z += (p.at(b, c, i, j) = std::exp(logits.at(b, c, i, j) - mx));
        for (std::size_t c = 0; c < s.c; ++c) p.at(b, c, i, j) /= z;
      }
  return p;
}

/// Pulls a gradient with respect to softmax probabilities back to the logits.
inline Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_probs) {
  detail::require(probs.shape() == grad_probs.shape(), "softmax backward: shape mismatch");
  Tensor g(probs.shape());
  const Shape& s = probs.shape();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < s.c; ++c) dot += probs.at(b, c, i, j) * grad_probs.at(b, c, i, j);
        for (std::size_t c = 0; c < s.c; ++c)
          g.at(b, c, i, j) = probs.at(b, c, i, j) * (grad_probs.at(b, c, i, j) - dot);
      }
  return g;
}

/// Mean per-pixel softmax cross-entropy over every pixel of the batch; the
/// gradient is (softmax - one_hot) / pixel_count.
inline LossAndGrad pixel_ce_loss(const Tensor& logits, std::span<const LabelMap> labels) {
  const Shape& s = logits.shape();
  detail::require(labels.size() == s.n, "pixel_ce_loss: one label map per batch element required");
  LossAndGrad out{0.0, softmax_channels(logits)};
  const double pixels = static_cast<double>(s.n * s.h * s.w);
  for (std::size_t b = 0; b < s.n; ++b) {
    const LabelMap& lab = labels[b];
    detail::require(lab.h == s.h && lab.w == s.w, "pixel_ce_loss: label map shape mismatch");
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        const auto y = lab.at(i, j);
        detail::require(y >= 0 && static_cast<std::size_t>(y) < s.c, "pixel_ce_loss: label out of range");
        double mx = logits.at(b, 0, i, j);
        for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, logits.at(b, c, i, j));
        double z = 0.0;
        for (std::size_t c = 0; c < s.c; ++c) z += std::exp(logits.at(b, c, i, j) - mx);
        out.loss += std::log(z) + mx - logits.at(b, static_cast<std::size_t>(y), i, j);
        out.grad.at(b, static_cast<std::size_t>(y), i, j) -= 1.0;
      }
  }
  out.loss /= pixels;
  out.grad *= 1.0 / pixels;
  return out;
}

/// Per-element MSE and its gradient 2 (pred - target) / count.
inline LossAndGrad pixel_mse_loss(const Tensor& pred, const Tensor& target) {
  return LossAndGrad{mse(pred, target), mse_grad(pred, target)};
}

struct SegmentationData {
  std::vector<ShapesSample> train;
  std::vector<ShapesSample> eval;
  std::size_t n_classes = 4;
};

struct RestorationData {
  std::vector<RestoreSample> train;
  std::vector<RestoreSample> eval;
};

using TaskData = std::variant<SegmentationData, RestorationData>;

struct TrainConfig {
  double base_lr = 0.05;
  std::size_t max_iter = 2000;
  std::size_t batch_size = 1;
  double poly_power = 0.9;
  double lambda = 0.1;
  PercepNetSpec percep{};
  LevelSelection levels = levels::FinalOnly{};
  std::uint64_t seed = 0;  // student init and sampling
  std::size_t eval_every = 500;
  bool flip = true;

  void validate() const {
    detail::require(base_lr >= 0.0 && std::isfinite(base_lr), "train config: base_lr must be >= 0");
    detail::require(max_iter >= 1, "train config: max_iter must be >= 1");
    detail::require(batch_size >= 1, "train config: batch_size must be >= 1");
    detail::require(eval_every >= 1, "train config: eval_every must be >= 1");
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "train config: lambda must be >= 0");
    detail::require(poly_power >= 0.0, "train config: poly_power must be >= 0");
    percep.validate();
  }
};

/// base_lr * (1 - iter / max_iter)^power, clamped at 0 past the end.
inline double poly_lr(double base_lr, std::size_t iter, std::size_t max_iter, double power) {
  if (iter >= max_iter) return 0.0;
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

struct EvalRecord {
  std::size_t iteration = 0;
  double lr = 0.0;
  double train_loss = 0.0;   // mean objective over the steps since the previous record
  double eval_task_loss = 0.0;
  double eval_percep_loss = 0.0;
  double eval_metric = 0.0;  // mIoU (segmentation) or RMSE (restoration)
};

struct RunMetrics {
  std::string task;
  std::string metric_name;
  bool use_percep = false;
  std::vector<EvalRecord> records;
  bool diverged = false;
  std::string diagnostic;
  std::size_t last_iteration = 0;

  double final_metric() const { return records.empty() ? std::nan("") : records.back().eval_metric; }
};

struct EvalResult {
  double metric = 0.0;
  double task_loss = 0.0;
  double percep_loss = 0.0;
};

/// mIoU of per-pixel argmax for segmentation, RMSE for restoration.
inline double evaluate(const StudentNet& net, const TaskData& data) {
  return std::visit(
      detail::overloaded{
          [&](const SegmentationData& d) {
            detail::require(!d.eval.empty(), "evaluate: empty eval set");
            ConfusionMatrix cm(d.n_classes);
            for (const auto& s : d.eval) cm.add(argmax_labels(net.forward(s.image)), s.label);
            return cm.miou();
          },
          [&](const RestorationData& d) {
            detail::require(!d.eval.empty(), "evaluate: empty eval set");
            double se = 0.0, n = 0.0;
            for (const auto& s : d.eval) {
              const Tensor p = net.forward(s.degraded);
              for (std::size_t k = 0; k < p.size(); ++k) se += (p[k] - s.clean[k]) * (p[k] - s.clean[k]);
              n += static_cast<double>(p.size());
            }
            return std::sqrt(se / n);
          },
      },
      data);
}

/// Trains a fresh student on `data`. When use_percep is set the per-step
/// objective is task_loss + lambda * percep_loss against soft targets
/// (segmentation) or clean images (restoration). Both arms log the eval-set
/// perceptual loss through the same net so records stay comparable.
/// `final_student`, when given, receives the trained weights.
inline RunMetrics train(const TaskData& data, const TrainConfig& cfg, bool use_percep,
                        StudentNet* final_student = nullptr,
                        const std::function<void(const EvalRecord&)>& on_record = {}) {
  cfg.validate();
  const bool seg = std::holds_alternative<SegmentationData>(data);
  const std::size_t n_classes = seg ? std::get<SegmentationData>(data).n_classes : 1;
  const std::size_t n_train = seg ? std::get<SegmentationData>(data).train.size()
                                  : std::get<RestorationData>(data).train.size();
  detail::require(n_train > 0, "train: empty training set");
  detail::require(cfg.percep.in_channels == n_classes, "train: percep net expects " +
                                                           std::to_string(cfg.percep.in_channels) +
                                                           " channels, task emits " + std::to_string(n_classes));
  const PercepNet pnet = build(cfg.percep);
  const LossConfig lcfg{cfg.lambda, cfg.levels};
  lcfg.validate(pnet);
  LossConfig eval_cfg = lcfg;
  eval_cfg.lambda = 1.0;

  StudentNet student(seg ? 3 : 1, n_classes, Rng::derive(cfg.seed, 1));
  Rng sampler(Rng::derive(cfg.seed, 2));

  RunMetrics m;
  m.task = seg ? "shapes" : "restore";
  m.metric_name = seg ? "miou" : "rmse";
  m.use_percep = use_percep;

  // Target features, indexed 2 * sample + flipped, built on first use.
  std::vector<std::optional<TargetFeatures>> train_targets(2 * n_train);
  std::vector<TargetFeatures> eval_targets;

  auto target_tensor = [&](std::size_t idx, bool flipped) -> Tensor {
    const Tensor& t = seg ? std::get<SegmentationData>(data).train[idx].soft_target
                          : std::get<RestorationData>(data).train[idx].clean;
    return flipped ? flip_horizontal(t) : t;
  };

  auto run_eval = [&]() {
    EvalResult r;
    if (eval_targets.empty()) {
      std::visit(detail::overloaded{
                     [&](const SegmentationData& d) {
                       for (const auto& s : d.eval) eval_targets.push_back(embed_target(pnet, s.soft_target, eval_cfg));
                     },
                     [&](const RestorationData& d) {
                       for (const auto& s : d.eval) eval_targets.push_back(embed_target(pnet, s.clean, eval_cfg));
                     },
                 },
                 data);
    }
    r.metric = evaluate(student, data);
    double tl = 0.0, pl = 0.0;
    std::visit(detail::overloaded{
                   [&](const SegmentationData& d) {
                     for (std::size_t k = 0; k < d.eval.size(); ++k) {
                       const Tensor logits = student.forward(d.eval[k].image);
                       tl += pixel_ce_loss(logits, std::span<const LabelMap>(&d.eval[k].label, 1)).loss;
                       pl += percep_loss(pnet, softmax_channels(logits), eval_targets[k], eval_cfg);
                     }
                     tl /= static_cast<double>(d.eval.size());
                     pl /= static_cast<double>(d.eval.size());
                   },
                   [&](const RestorationData& d) {
                     for (std::size_t k = 0; k < d.eval.size(); ++k) {
                       const Tensor pred = student.forward(d.eval[k].degraded);
                       tl += mse(pred, d.eval[k].clean);
                       pl += percep_loss(pnet, pred, eval_targets[k], eval_cfg);
                     }
                     tl /= static_cast<double>(d.eval.size());
                     pl /= static_cast<double>(d.eval.size());
                   },
               },
               data);
    r.task_loss = tl;
    r.percep_loss = pl;
    return r;
  };

  double loss_acc = 0.0;
  std::size_t loss_steps = 0;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    try {
      const double lr = poly_lr(cfg.base_lr, it, cfg.max_iter, cfg.poly_power);
      std::vector<std::size_t> idx(cfg.batch_size);
      std::vector<bool> flipped(cfg.batch_size);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        idx[b] = sampler.uniform_int(n_train);
        flipped[b] = cfg.flip && sampler.bernoulli(0.5);
      }

      std::vector<Tensor> inputs;
      std::vector<LabelMap> labels;
      std::vector<Tensor> plain_targets;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        if (seg) {
          const auto& s = std::get<SegmentationData>(data).train[idx[b]];
          inputs.push_back(flipped[b] ? flip_horizontal(s.image) : s.image);
          labels.push_back(flipped[b] ? flip_horizontal(s.label) : s.label);
        } else {
          const auto& s = std::get<RestorationData>(data).train[idx[b]];
          inputs.push_back(flipped[b] ? flip_horizontal(s.degraded) : s.degraded);
          plain_targets.push_back(flipped[b] ? flip_horizontal(s.clean) : s.clean);
        }
      }
      const Tensor x = stack(inputs);
      StudentNet::Cache cache;
      const Tensor out = student.forward(x, &cache);

      LossAndGrad task = seg ? pixel_ce_loss(out, labels) : pixel_mse_loss(out, stack(plain_targets));
      double objective = task.loss;
      Tensor grad = std::move(task.grad);

      if (use_percep && cfg.lambda != 0.0) {
        const Tensor probs = seg ? softmax_channels(out) : Tensor();
        const Tensor& pred_all = seg ? probs : out;
        Tensor grad_pred(pred_all.shape());
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
          auto& cached = train_targets[2 * idx[b] + (flipped[b] ? 1 : 0)];
          if (!cached) cached = embed_target(pnet, target_tensor(idx[b], flipped[b]), lcfg);
          const LossAndGrad pl = percep_loss_grad(pnet, pred_all.slice(b), *cached, lcfg);
          objective += cfg.lambda * inv_batch * pl.loss;
          auto dst = grad_pred.data().subspan(b * pl.grad.size(), pl.grad.size());
          for (std::size_t q = 0; q < dst.size(); ++q) dst[q] = cfg.lambda * inv_batch * pl.grad[q];
        }
        grad += seg ? softmax_channels_backward(probs, grad_pred) : grad_pred;
      }

      if (!std::isfinite(objective) || !grad.all_finite()) {
        m.diverged = true;
        m.last_iteration = it;
        m.diagnostic = "non-finite objective at iteration " + std::to_string(it) + " (lr " +
                       detail::format_number(lr) + ")";
        if (final_student) *final_student = student;
        return m;
      }
      loss_acc += objective;
      ++loss_steps;

      student.sgd_step(student.backward(cache, grad), lr);
      m.last_iteration = it + 1;
      if (!student.all_finite()) {
        m.diverged = true;
        m.diagnostic = "non-finite weights after iteration " + std::to_string(it + 1) + " (lr " +
                       detail::format_number(lr) + ")";
        if (final_student) *final_student = student;
        return m;
      }

      if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.max_iter) {
        const EvalResult r = run_eval();
        EvalRecord rec{it + 1, lr, loss_acc / static_cast<double>(loss_steps), r.task_loss, r.percep_loss, r.metric};
        loss_acc = 0.0;
        loss_steps = 0;
        if (!std::isfinite(r.task_loss) || !std::isfinite(r.metric)) {
          m.diverged = true;
          m.diagnostic = "non-finite evaluation at iteration " + std::to_string(it + 1);
          m.records.push_back(rec);
          if (final_student) *final_student = student;
          return m;
        }
        m.records.push_back(rec);
        if (on_record) on_record(rec);
      }
    } catch (const NumericError& e) {
      // Overflowing weights or activations surface here as non-finite conv inputs.
      m.diverged = true;
      m.last_iteration = it;
      m.diagnostic = std::string(e.what()) + " at iteration " + std::to_string(it);
      if (final_student) *final_student = student;
      return m;
    }
  }
  if (final_student) *final_student = student;
  return m;
}

}  // namespace rpl
