#include <gtest/gtest.h>

#include <cmath>

#include "rpl/diagnostics.hpp"

namespace {

using namespace rpl;

// One block, so no max-pool sits between measured layers.
PercepNetSpec single_block(InitScheme scheme, std::size_t convs = 5, std::size_t width = 64) {
  PercepNetSpec s;
  s.blocks = {convs};
  s.channels = {width};
  s.in_channels = 4;
  s.init = scheme;
  return s;
}

StabilityOptions narrow_options() {
  StabilityOptions o;
  o.channels = {16, 32, 32, 64, 64};
  o.input = {1, 32, 32};
  return o;
}

TEST(PredictedProfile, CalibratedIsFlat) {
  for (const PercepNetSpec& s : {PercepNetSpec{}, single_block(init::Calibrated{}, 7)})
    for (double p : predicted_variance_profile(s)) EXPECT_DOUBLE_EQ(p, 1.0);
}

TEST(PredictedProfile, GaussianFactorIsHalfFanInSigmaSquared) {
  PercepNetSpec s = single_block(init::Gaussian{0.3}, 3, 10);
  const auto f = detail::layer_factors(s);
  EXPECT_DOUBLE_EQ(f[0], 0.5 * 36 * 0.09);
  EXPECT_DOUBLE_EQ(f[1], 0.5 * 90 * 0.09);
  const auto p = predicted_variance_profile(s);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[2], f[1] * f[2]);
}

TEST(VarianceReport, LayoutAndAnnotations) {
  PercepNetSpec s;
  s.blocks = {1, 2};
  s.channels = {8, 8};
  s.in_channels = 2;
  const VarianceReport r = measure_variance_propagation(s, 3, ProbeInput{1, 16, 16});
  ASSERT_EQ(r.layers.size(), 3u);
  EXPECT_EQ(r.per_seed.size(), 3u);
  EXPECT_EQ(r.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(r.layers[0].block, 1u);
  EXPECT_EQ(r.layers[1].block, 2u);
  EXPECT_EQ(r.layers[2].block, 2u);
  EXPECT_FALSE(r.layers[0].after_pool);
  EXPECT_TRUE(r.layers[1].after_pool);
  EXPECT_FALSE(r.layers[2].after_pool);
  EXPECT_EQ(r.layers[0].fan_in, 18u);
  EXPECT_EQ(r.layers[2].fan_in, 72u);
  EXPECT_DOUBLE_EQ(r.layers[0].ratio, 1.0);
  for (const auto& l : r.layers) EXPECT_GE(l.measured, 0.0);
}

TEST(VarianceReport, ExplicitSeedsAreReproducible) {
  const std::vector<std::uint64_t> seeds{4, 9};
  const PercepNetSpec s = single_block(init::Calibrated{}, 2, 8);
  const VarianceReport a = measure_variance_propagation(s, seeds, ProbeInput{1, 8, 8});
  const VarianceReport b = measure_variance_propagation(s, seeds, ProbeInput{1, 8, 8});
  EXPECT_EQ(a.per_seed, b.per_seed);
  EXPECT_THROW(measure_variance_propagation(s, std::vector<std::uint64_t>{}), ConfigError);
}

TEST(VarianceLaw, CalibratedProfileIsFlatWithoutPooling) {
  const VarianceReport r = measure_variance_propagation(single_block(init::Calibrated{}), 10, ProbeInput{1, 32, 32});
  EXPECT_LT(r.max_abs_log_ratio(), std::log(4.0));
}

TEST(VarianceLaw, GaussianSlopeTracksLogFactor) {
  // f = 0.5 * 576 * 0.01 = 2.88 past the first layer.
  const VarianceReport r = measure_variance_propagation(single_block(init::Gaussian{0.1}), 10, ProbeInput{1, 32, 32});
  for (std::size_t l = 1; l < r.layers.size(); ++l) {
    const double expect = std::log(r.layers[l].factor);
    EXPECT_GT(r.layers[l].step_log_slope, 0.0);
    EXPECT_NEAR(r.layers[l].step_log_slope / expect, 1.0, 0.3) << "layer " << l + 1;
  }
}

TEST(Verdicts, Thresholds) {
  EXPECT_EQ(classify_ratio(1.0), Verdict::Stable);
  EXPECT_EQ(classify_ratio(1e3), Verdict::Stable);
  EXPECT_EQ(classify_ratio(1e-3), Verdict::Stable);
  EXPECT_EQ(classify_ratio(1.0001e3), Verdict::Exploded);
  EXPECT_EQ(classify_ratio(0.9999e-3), Verdict::Vanished);
  EXPECT_EQ(classify_ratio(INFINITY), Verdict::Exploded);
  EXPECT_EQ(classify_ratio(NAN), Verdict::Exploded);
  EXPECT_EQ(to_string(Verdict::Vanished), "vanished");
}

TEST(Verdicts, VggBlocksForDepth) {
  EXPECT_EQ(vgg_blocks_for_depth(13), (std::vector<std::size_t>{2, 2, 3, 3, 3}));
  EXPECT_EQ(vgg_blocks_for_depth(16), (std::vector<std::size_t>{2, 2, 4, 4, 4}));
  EXPECT_EQ(vgg_blocks_for_depth(14), (std::vector<std::size_t>{2, 2, 3, 3, 4}));
  EXPECT_THROW(vgg_blocks_for_depth(6), ConfigError);
}

TEST(StabilityProbe, ClassifiesExtremeSchemes) {
  const auto opt = narrow_options();
  EXPECT_EQ(probe_stability(init::Calibrated{}, 16, 3, opt).verdict, Verdict::Stable);
  EXPECT_EQ(probe_stability(init::Gaussian{1.0}, 16, 3, opt).verdict, Verdict::Exploded);
  EXPECT_EQ(probe_stability(init::Uniform{1.0}, 16, 3, opt).verdict, Verdict::Exploded);
  EXPECT_EQ(probe_stability(init::Gaussian{0.01}, 16, 3, opt).verdict, Verdict::Vanished);
  EXPECT_EQ(probe_stability(init::Uniform{0.01}, 16, 3, opt).verdict, Verdict::Vanished);
}

TEST(StabilityProbe, DeterministicGivenSeeds) {
  const std::vector<std::uint64_t> seeds{3, 5};
  const auto a = probe_stability(init::XavierNormal{}, 8, seeds, narrow_options());
  const auto b = probe_stability(init::XavierNormal{}, 8, seeds, narrow_options());
  EXPECT_EQ(a.trial_ratios, b.trial_ratios);
  EXPECT_EQ(a.trial_verdicts, b.trial_verdicts);
  EXPECT_EQ(a.trial_ratios.size(), 2u);
}

TEST(StabilityProbe, PredictionFollowsFactorProduct) {
  const auto p = probe_stability(init::Gaussian{1.0}, 16, 1, narrow_options());
  EXPECT_GT(p.predicted_log10_ratio, 3.0);
  EXPECT_DOUBLE_EQ(probe_stability(init::Calibrated{}, 8, 1, narrow_options()).predicted_log10_ratio, 0.0);
}

TEST(StabilityProbe, Errors) {
  EXPECT_THROW(probe_stability(init::Calibrated{}, 7, 1), ConfigError);
  EXPECT_THROW(probe_stability(init::Calibrated{}, 16, std::vector<std::uint64_t>{}), ConfigError);
  EXPECT_EQ(standard_init_schemes().size(), 8u);
}

TEST(Discrepancy, IdenticalZeroPerturbedSmallIndependentBounded) {
  PercepNetSpec s;
  s.blocks = {1, 1, 1, 1, 1};
  s.channels = {16, 32, 32, 64, 64};
  s.in_channels = 4;
  const DiscrepancyReport r = measure_discrepancy_bound(s, 4, ProbeInput{1, 32, 32});
  EXPECT_EQ(r.rows.size(), 4u * 5u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.var_identical, 0.0);
    EXPECT_LT(row.perturbed_over_independent, 1e-2);
    EXPECT_LE(row.bound_ratio, 1.5);
  }
  EXPECT_LE(r.worst_final_bound_ratio(), 1.5);
}

}  // namespace
