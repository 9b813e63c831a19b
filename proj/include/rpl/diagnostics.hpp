#pragma once

// Empirical checks of how activation variance propagates through the random
// loss network, and a stability probe for weight-initialization schemes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rpl/error.hpp"
#include "rpl/ops.hpp"
#include "rpl/percep_net.hpp"
#include "rpl/rng.hpp"

namespace rpl {

/// Size of the standard-normal probe input.
struct ProbeInput {
  std::size_t batch = 1;
  std::size_t height = 64;
  std::size_t width = 64;
};

namespace detail {

inline Tensor standard_normal(Rng& rng, Shape s) { return Tensor(s, randn(rng, s.numel(), 0.0, 1.0)); }

inline PercepNetSpec with_seed(PercepNetSpec spec, std::uint64_t seed) {
  spec.seed = seed;
  return spec;
}

/// A trial seed fixes both the net weights and the probe input.
inline std::uint64_t net_seed(std::uint64_t trial_seed) { return Rng::derive(trial_seed, 0); }
inline std::uint64_t input_seed(std::uint64_t trial_seed) { return Rng::derive(trial_seed, 1); }

inline std::vector<std::uint64_t> seed_range(std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

/// Per-conv-layer variance factors f_l = (1/2) n_l Var[w_l].
inline std::vector<double> layer_factors(const PercepNetSpec& spec) {
  std::vector<double> f;
  std::size_t c_in = spec.in_channels;
  const std::size_t k2 = spec.kernel_size * spec.kernel_size;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b)
    for (std::size_t r = 0; r < spec.blocks[b]; ++r) {
      f.push_back(variance_factor(spec.init, k2 * c_in, k2 * spec.channels[b]));
      c_in = spec.channels[b];
    }
  return f;
}

inline std::vector<std::size_t> layer_fan_ins(const PercepNetSpec& spec) {
  std::vector<std::size_t> n;
  std::size_t c_in = spec.in_channels;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b)
    for (std::size_t r = 0; r < spec.blocks[b]; ++r) {
      n.push_back(spec.kernel_size * spec.kernel_size * c_in);
      c_in = spec.channels[b];
    }
  return n;
}

/// True for conv layers whose input has just been max-pooled.
inline std::vector<bool> pooled_input(const PercepNetSpec& spec) {
  std::vector<bool> out;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b)
    for (std::size_t r = 0; r < spec.blocks[b]; ++r) out.push_back(b > 0 && r == 0);
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Predicted Var[e_l] / Var[e_1] = prod_{m=2..l} f_m, for every conv layer.
inline std::vector<double> predicted_variance_profile(const PercepNetSpec& spec) {
  const auto f = detail::layer_factors(spec);
  std::vector<double> p(f.size(), 1.0);
  for (std::size_t l = 1; l < f.size(); ++l) p[l] = p[l - 1] * f[l];
  return p;
}

struct VarianceLayer {
  std::size_t layer = 0;   // 1-based conv index
  std::size_t block = 0;   // 1-based block index
  bool after_pool = false; // input of this layer was max-pooled
  std::size_t fan_in = 0;
  double factor = 0.0;          // (1/2) n_l Var[w_l]
  double measured = 0.0;        // mean over seeds of Var[e_l]
  double predicted = 0.0;       // Var[e_1] * prod_{m<=l} factor_m
  double ratio = 0.0;           // measured / predicted
  double step_log_slope = 0.0;  // log(measured_l / measured_{l-1}), 0 for l = 1
  double step_ratio = 1.0;      // measured_l / (factor_l * measured_{l-1})
};

struct VarianceReport {
  PercepNetSpec spec;
  ProbeInput input;
  std::vector<std::uint64_t> seeds;
  std::vector<VarianceLayer> layers;
  std::vector<std::vector<double>> per_seed;  // [seed][layer] Var[e_l]

  double max_abs_log_ratio() const {
    double m = 0.0;
    for (const auto& l : layers) m = std::max(m, std::abs(std::log(l.ratio)));
    return m;
  }
};

/// Draws n_seeds (net, input) pairs and records Var[e_l] of every conv output
/// (pre-relu), averaged over seeds, next to the product-of-factors prediction.
inline VarianceReport measure_variance_propagation(const PercepNetSpec& spec, std::span<const std::uint64_t> seeds,
                                                   const ProbeInput& input = {}) {
  spec.validate();
  const std::size_t n_seeds = seeds.size();
  detail::require(n_seeds >= 1, "measure_variance_propagation: need at least one seed");
  VarianceReport rep{spec, input, {}, {}, {}};
  const std::size_t L = spec.conv_count();
  std::vector<double> sum(L, 0.0);
  for (std::uint64_t trial : seeds) {
    const PercepNet net = build(detail::with_seed(spec, detail::net_seed(trial)));
    Rng rng(detail::input_seed(trial));
    const Tensor x = detail::standard_normal(rng, Shape{input.batch, spec.in_channels, input.height, input.width});
    const ForwardTrace tr = net.run(x, true);
    std::vector<double> v(L);
    for (std::size_t l = 0; l < L; ++l) {
      v[l] = variance(tr.pre_activations[l]);
      sum[l] += v[l];
    }
    rep.seeds.push_back(trial);
    rep.per_seed.push_back(std::move(v));
  }
  const auto factors = detail::layer_factors(spec);
  const auto profile = predicted_variance_profile(spec);
  const auto pooled = detail::pooled_input(spec);
  const auto fan_ins = detail::layer_fan_ins(spec);
  const double base = sum[0] / static_cast<double>(n_seeds);
  std::size_t block = 1, within = 0;
  for (std::size_t l = 0; l < L; ++l) {
    VarianceLayer row;
    row.layer = l + 1;
    row.block = block;
    row.after_pool = pooled[l];
    row.fan_in = fan_ins[l];
    row.factor = factors[l];
    row.measured = sum[l] / static_cast<double>(n_seeds);
    row.predicted = base * profile[l];
    row.ratio = row.measured / row.predicted;
    if (l > 0) {
      const double prev = rep.layers.back().measured;
      row.step_log_slope = std::log(row.measured / prev);
      row.step_ratio = row.measured / (factors[l] * prev);
    }
    rep.layers.push_back(row);
    if (++within == spec.blocks[block - 1]) {
      ++block;
      within = 0;
    }
  }
  return rep;
}

inline VarianceReport measure_variance_propagation(const PercepNetSpec& spec, std::size_t n_seeds,
                                                   const ProbeInput& input = {}) {
  const auto seeds = detail::seed_range(n_seeds);
  return measure_variance_propagation(spec, seeds, input);
}

enum class Verdict { Stable, Exploded, Vanished };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Stable: return "stable";
    case Verdict::Exploded: return "exploded";
    case Verdict::Vanished: return "vanished";
  }
  return "?";
}

inline constexpr double kExplodeRatio = 1e3;
inline constexpr double kVanishRatio = 1e-3;

inline Verdict classify_ratio(double ratio) {
  if (!(ratio <= kExplodeRatio)) return Verdict::Exploded;  // includes inf / nan
  if (ratio < kVanishRatio) return Verdict::Vanished;
  return Verdict::Stable;
}

/// VGG-style block layout for a given conv depth: two 2-conv blocks, then the
/// remaining layers spread over three blocks (extras to the deeper ones).
/// Depth 13 gives 2,2,3,3,3 and depth 16 gives 2,2,4,4,4.
inline std::vector<std::size_t> vgg_blocks_for_depth(std::size_t depth) {
  detail::require(depth >= 7, "vgg_blocks_for_depth: depth must be >= 7");
  const std::size_t rest = depth - 4;
  std::vector<std::size_t> b{2, 2, rest / 3, rest / 3, rest / 3};
  for (std::size_t i = 0; i < rest % 3; ++i) ++b[4 - i];
  return b;
}

struct StabilityProbe {
  InitScheme scheme;
  std::size_t depth = 16;
  std::vector<double> trial_ratios;  // rms(e_L) / rms(e_1) per trial
  std::vector<Verdict> trial_verdicts;
  double ratio = 0.0;  // geometric mean over trials
  Verdict verdict = Verdict::Stable;
  double predicted_log10_ratio = 0.0;  // from the factor product, pooling ignored
};

struct StabilityOptions {
  std::size_t in_channels = 4;
  std::vector<std::size_t> channels{64, 128, 256, 512, 512};
  std::size_t kernel_size = 3;
  ProbeInput input{};
};

/// Classifies an init scheme by how much the conv-output magnitude grows or
/// shrinks from the first to the last of `depth` layers; majority over trials.
inline StabilityProbe probe_stability(const InitScheme& scheme, std::size_t depth,
                                      std::span<const std::uint64_t> trial_seeds, const StabilityOptions& opt = {}) {
  detail::require(depth >= 8, "probe_stability: depth must be >= 8");
  const std::size_t trials = trial_seeds.size();
  detail::require(trials >= 1, "probe_stability: need at least one trial");
  PercepNetSpec spec;
  spec.blocks = vgg_blocks_for_depth(depth);
  spec.channels = opt.channels;
  spec.kernel_size = opt.kernel_size;
  spec.in_channels = opt.in_channels;
  spec.init = scheme;
  spec.validate();
  StabilityProbe p{scheme, depth, {}, {}, 0.0, Verdict::Stable, 0.0};
  double log_sum = 0.0;
  std::size_t counts[3] = {0, 0, 0};
  for (std::uint64_t trial : trial_seeds) {
    const PercepNet net = build(detail::with_seed(spec, detail::net_seed(trial)));
    Rng rng(detail::input_seed(trial));
    const Tensor x = detail::standard_normal(rng, Shape{opt.input.batch, spec.in_channels, opt.input.height,
                                                        opt.input.width});
    const ForwardTrace tr = net.run(x, true);
    const double r = rms(tr.pre_activations.back()) / rms(tr.pre_activations.front());
    p.trial_ratios.push_back(r);
    p.trial_verdicts.push_back(classify_ratio(r));
    ++counts[static_cast<int>(p.trial_verdicts.back())];
    log_sum += std::log(r);
  }
  p.ratio = std::exp(log_sum / static_cast<double>(trials));
  // Majority; ties fall back to the verdict of the geometric-mean ratio.
  const std::size_t best = std::max({counts[0], counts[1], counts[2]});
  const std::size_t winners = (counts[0] == best) + (counts[1] == best) + (counts[2] == best);
  if (winners == 1)
    p.verdict = counts[0] == best ? Verdict::Stable : counts[1] == best ? Verdict::Exploded : Verdict::Vanished;
  else
    p.verdict = classify_ratio(p.ratio);
  p.predicted_log10_ratio = 0.5 * std::log10(predicted_variance_profile(spec).back());
  return p;
}

inline StabilityProbe probe_stability(const InitScheme& scheme, std::size_t depth, std::size_t trials,
                                      const StabilityOptions& opt = {}) {
  const auto seeds = detail::seed_range(trials);
  return probe_stability(scheme, depth, seeds, opt);
}

/// The init rows compared in the stability table.
inline std::vector<InitScheme> standard_init_schemes() {
  return {init::Gaussian{1.0}, init::Gaussian{0.1},  init::Gaussian{0.01}, init::Uniform{1.0},
          init::Uniform{0.1},  init::Uniform{0.01}, init::XavierNormal{},  init::Calibrated{}};
}

struct DiscrepancyLayer {
  std::size_t seed_index = 0;
  std::size_t layer = 0;                // 1-based
  double var_independent = 0.0;         // Var[e'_l - e_l], independent inputs
  double bound = 0.0;                   // (Var[e_1] + Var[e'_1]) * prod_{m=2..l} f_m
  double bound_ratio = 0.0;             // var_independent / bound
  double var_identical = 0.0;           // x' == x
  double var_perturbed = 0.0;           // x' = x + eps * n
  double perturbed_over_independent = 0.0;
};

struct DiscrepancyReport {
  PercepNetSpec spec;
  ProbeInput input;
  double perturbation = 0.01;
  std::vector<std::uint64_t> seeds;
  std::vector<DiscrepancyLayer> rows;

  /// Largest bound_ratio at the last conv layer, over seeds.
  double worst_final_bound_ratio() const {
    double m = 0.0;
    for (const auto& r : rows)
      if (r.layer == spec.conv_count()) m = std::max(m, r.bound_ratio);
    return m;
  }
};

/// Monte-Carlo check of the discrepancy-variance bound for pairs of inputs
/// pushed through the same random net.
inline DiscrepancyReport measure_discrepancy_bound(const PercepNetSpec& spec, std::span<const std::uint64_t> seeds,
                                                   const ProbeInput& input = {}, double perturbation = 0.01) {
  spec.validate();
  const std::size_t n_seeds = seeds.size();
  detail::require(n_seeds >= 1, "measure_discrepancy_bound: need at least one seed");
  DiscrepancyReport rep{spec, input, perturbation, {}, {}};
  const auto profile = predicted_variance_profile(spec);
  const Shape s{input.batch, spec.in_channels, input.height, input.width};
  for (std::size_t t = 0; t < n_seeds; ++t) {
    const PercepNet net = build(detail::with_seed(spec, detail::net_seed(seeds[t])));
    Rng rng(detail::input_seed(seeds[t]));
    const Tensor x = detail::standard_normal(rng, s);
    const Tensor x_ind = detail::standard_normal(rng, s);
    Tensor x_pert = x;
    x_pert.axpy(perturbation, detail::standard_normal(rng, s));
    const ForwardTrace a = net.run(x, true);
    const ForwardTrace b = net.run(x_ind, true);
    const ForwardTrace same = net.run(x, true);
    const ForwardTrace near = net.run(x_pert, true);
    const double base = variance(a.pre_activations[0]) + variance(b.pre_activations[0]);
    for (std::size_t l = 0; l < profile.size(); ++l) {
      DiscrepancyLayer row;
      row.seed_index = t;
      row.layer = l + 1;
      row.var_independent = variance(b.pre_activations[l] - a.pre_activations[l]);
      row.bound = base * profile[l];
      row.bound_ratio = row.var_independent / row.bound;
      row.var_identical = variance(same.pre_activations[l] - a.pre_activations[l]);
      row.var_perturbed = variance(near.pre_activations[l] - a.pre_activations[l]);
      row.perturbed_over_independent = row.var_perturbed / row.var_independent;
      rep.rows.push_back(row);
    }
    rep.seeds.push_back(seeds[t]);
  }
  return rep;
}

inline DiscrepancyReport measure_discrepancy_bound(const PercepNetSpec& spec, std::size_t n_seeds,
                                                   const ProbeInput& input = {}, double perturbation = 0.01) {
  const auto seeds = detail::seed_range(n_seeds);
  return measure_discrepancy_bound(spec, seeds, input, perturbation);
}

}  // namespace rpl
