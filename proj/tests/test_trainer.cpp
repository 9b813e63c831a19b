#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rpl/trainer.hpp"

namespace {

using namespace rpl;

SegmentationData tiny_shapes(std::uint64_t seed, std::size_t n_train = 6, std::size_t n_eval = 3) {
  Rng rng(seed);
  SegmentationData d;
  d.n_classes = 4;
  d.train = gen_shapes(rng, n_train, 32, 32, 4);
  d.eval = gen_shapes(rng, n_eval, 32, 32, 4);
  return d;
}

RestorationData tiny_restore(std::uint64_t seed, double blur = 1.0, double noise = 0.05) {
  Rng rng(seed);
  RestorationData d;
  d.train = gen_restore(rng, 4, 32, 32, blur, noise);
  d.eval = gen_restore(rng, 2, 32, 32, blur, noise);
  return d;
}

TrainConfig tiny_config(std::size_t in_channels, std::size_t iters = 6) {
  TrainConfig c;
  c.max_iter = iters;
  c.eval_every = 3;
  c.batch_size = 2;
  c.percep.blocks = {1, 1};
  c.percep.channels = {8, 8};
  c.percep.in_channels = in_channels;
  c.seed = 17;
  return c;
}

TEST(PolyLr, ScheduleShape) {
  EXPECT_DOUBLE_EQ(poly_lr(0.05, 0, 100, 0.9), 0.05);
  EXPECT_DOUBLE_EQ(poly_lr(0.05, 100, 100, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(0.05, 150, 100, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(0.05, 50, 100, 0.9), 0.05 * std::pow(0.5, 0.9));
  double prev = 1.0;
  for (std::size_t t = 0; t <= 100; ++t) {
    const double lr = poly_lr(0.05, t, 100, 0.9);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(PixelCe, UniformLogitsGiveLogC) {
  const Tensor logits(Shape{2, 5, 4, 4});
  const std::vector<LabelMap> labels{LabelMap(4, 4, 1), LabelMap(4, 4, 4)};
  EXPECT_NEAR(pixel_ce_loss(logits, labels).loss, std::log(5.0), 1e-15);
}

TEST(PixelCe, ConfidentCorrectLogitsGiveNearZero) {
  LabelMap lab(3, 3, 0);
  lab.at(1, 1) = 2;
  Tensor logits(Shape{1, 3, 3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) logits.at(0, static_cast<std::size_t>(lab.at(i, j)), i, j) = 30.0;
  EXPECT_LT(pixel_ce_loss(logits, std::span<const LabelMap>(&lab, 1)).loss, 1e-12);
}

TEST(PixelCe, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(1);
  const Tensor logits = oracle::random_tensor(gen, Shape{2, 3, 4, 5}, -2.0, 2.0);
  std::vector<LabelMap> labels(2, LabelMap(4, 5));
  for (auto& l : labels)
    for (auto& v : l.data) v = static_cast<std::int32_t>(gen() % 3);
  auto f = [&](const Tensor& z) { return pixel_ce_loss(z, labels).loss; };
  const Tensor g = pixel_ce_loss(logits, labels).grad;
  EXPECT_LT(oracle::relative_error(g.data(), oracle::finite_difference(f, logits).data()), 1e-6);
}

TEST(PixelCe, Errors) {
  const Tensor logits(Shape{1, 3, 2, 2});
  const std::vector<LabelMap> bad{LabelMap(2, 2, 3)};
  EXPECT_THROW(pixel_ce_loss(logits, bad), ConfigError);
  const std::vector<LabelMap> wrong_shape{LabelMap(2, 3, 0)};
  EXPECT_THROW(pixel_ce_loss(logits, wrong_shape), ConfigError);
  EXPECT_THROW(pixel_ce_loss(logits, std::vector<LabelMap>{}), ConfigError);
}

TEST(PixelMse, CasesAndGradient) {
  const Tensor ones(Shape{1, 1, 4, 4}, 1.0), zeros(Shape{1, 1, 4, 4});
  EXPECT_EQ(pixel_mse_loss(ones, ones).loss, 0.0);
  EXPECT_EQ(pixel_mse_loss(ones, zeros).loss, 1.0);
  std::mt19937_64 gen(2);
  const Tensor p = oracle::random_tensor(gen, Shape{1, 2, 3, 3}), t = oracle::random_tensor(gen, Shape{1, 2, 3, 3});
  auto f = [&](const Tensor& z) { return pixel_mse_loss(z, t).loss; };
  EXPECT_LT(oracle::relative_error(pixel_mse_loss(p, t).grad.data(), oracle::finite_difference(f, p).data()), 1e-6);
  EXPECT_THROW(pixel_mse_loss(ones, Tensor(Shape{1, 1, 4, 3})), ConfigError);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  const Tensor logits = oracle::random_tensor(gen, Shape{1, 4, 3, 3});
  const Tensor G = oracle::random_tensor(gen, logits.shape());
  auto f = [&](const Tensor& z) { return oracle::dot(G, softmax_channels(z)); };
  const Tensor g = softmax_channels_backward(softmax_channels(logits), G);
  EXPECT_LT(oracle::relative_error(g.data(), oracle::finite_difference(f, logits).data()), 1e-6);
}

TEST(StudentNet, ShapesAndDeterminism) {
  const StudentNet a(3, 4, 9), b(3, 4, 9), c(3, 4, 10);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.layers().size(), 6u);
  std::mt19937_64 gen(4);
  const Tensor x = oracle::random_tensor(gen, Shape{2, 3, 16, 8});
  EXPECT_EQ(a.forward(x).shape(), (Shape{2, 4, 16, 8}));
  EXPECT_EQ(StudentNet(1, 1, 1).forward(Tensor(Shape{1, 1, 8, 8})).shape(), (Shape{1, 1, 8, 8}));
  EXPECT_THROW(a.forward(Tensor(Shape{1, 2, 8, 8})), ConfigError);
}

TEST(StudentNet, ParameterGradientsMatchFiniteDifferences) {
  StudentNet net(2, 3, 5);
  std::mt19937_64 gen(5);
  const Tensor x = oracle::random_tensor(gen, Shape{1, 2, 5, 5});
  const Tensor G = oracle::random_tensor(gen, Shape{1, 3, 5, 5});
  StudentNet::Cache cache;
  net.forward(x, &cache);
  const auto grads = net.backward(cache, G);
  for (std::size_t l : {0u, 3u, 5u}) {
    std::vector<std::size_t> coords;
    for (std::size_t q = 0; q < net.layers()[l].weights.size(); q += 37) coords.push_back(q);
    std::vector<double> analytic, numeric;
    for (std::size_t q : coords) {
      double& w = net.layers()[l].weights[q];
      const double orig = w;
      w = orig + 1e-6;
      const double fp = oracle::dot(G, net.forward(x));
      w = orig - 1e-6;
      const double fm = oracle::dot(G, net.forward(x));
      w = orig;
      numeric.push_back((fp - fm) / 2e-6);
      analytic.push_back(grads[l].weights[q]);
    }
    EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-6) << "layer " << l;
  }
}

TEST(Evaluate, UntrainedNetIsNearChance) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    SegmentationData d;
    d.eval = gen_shapes(rng, 10, 64, 64, 4);
    EXPECT_LT(evaluate(StudentNet(3, 4, Rng::derive(seed, 1)), d), 0.35) << "seed " << seed;
  }
}

TEST(Evaluate, PerfectPredictionsScoreOne) {
  Rng rng(6);
  ConfusionMatrix cm(4);
  for (const auto& s : gen_shapes(rng, 5, 32, 32, 4)) cm.add(argmax_labels(one_hot(s.label, 4)), s.label);
  EXPECT_DOUBLE_EQ(cm.miou(), 1.0);
}

TEST(Evaluate, IdentityNetOnCleanRestorationHasZeroRmse) {
  StudentNet net(1, 1, 7);
  for (auto& k : net.layers()) {
    std::fill(k.weights.begin(), k.weights.end(), 0.0);
    std::fill(k.bias.begin(), k.bias.end(), 0.0);
    k.weight(0, 0, 1, 1) = 1.0;
  }
  EXPECT_EQ(evaluate(net, tiny_restore(8, 0.0, 0.0)), 0.0);
  EXPECT_THROW(evaluate(net, RestorationData{}), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.max_iter = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.base_lr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda = NAN;
  EXPECT_THROW(c.validate(), ConfigError);
  // The loss net must read the task's output channels.
  EXPECT_THROW(train(tiny_shapes(1), tiny_config(1), true), ConfigError);
}

TEST(Train, ZeroLrSingleStepLeavesWeightsUnchanged) {
  TrainConfig c = tiny_config(4, 1);
  c.base_lr = 0.0;
  StudentNet trained;
  const RunMetrics m = train(tiny_shapes(2), c, true, &trained);
  EXPECT_EQ(trained, StudentNet(3, 4, Rng::derive(c.seed, 1)));
  ASSERT_EQ(m.records.size(), 1u);
  EXPECT_EQ(m.records[0].iteration, 1u);
  EXPECT_FALSE(m.diverged);
}

TEST(Train, LambdaZeroMatchesBaselineBitwise) {
  for (bool seg : {true, false}) {
    TrainConfig c = tiny_config(seg ? 4 : 1);
    c.lambda = 0.0;
    const TaskData d = seg ? TaskData(tiny_shapes(3)) : TaskData(tiny_restore(3));
    StudentNet a, b;
    const RunMetrics ma = train(d, c, false, &a);
    const RunMetrics mb = train(d, c, true, &b);
    EXPECT_EQ(a, b);
    ASSERT_EQ(ma.records.size(), mb.records.size());
    for (std::size_t k = 0; k < ma.records.size(); ++k) {
      EXPECT_EQ(ma.records[k].train_loss, mb.records[k].train_loss);
      EXPECT_EQ(ma.records[k].eval_metric, mb.records[k].eval_metric);
      EXPECT_EQ(ma.records[k].eval_percep_loss, mb.records[k].eval_percep_loss);
    }
  }
}

TEST(Train, DeterministicAndRecordsWellFormed) {
  const TaskData d = tiny_shapes(4);
  TrainConfig c = tiny_config(4, 7);
  StudentNet a, b;
  const RunMetrics ma = train(d, c, true, &a);
  const RunMetrics mb = train(d, c, true, &b);
  EXPECT_EQ(a, b);
  ASSERT_EQ(ma.records.size(), 3u);  // iterations 3, 6 and the final 7
  std::size_t prev = 0;
  for (std::size_t k = 0; k < ma.records.size(); ++k) {
    EXPECT_GT(ma.records[k].iteration, prev);
    prev = ma.records[k].iteration;
    EXPECT_EQ(ma.records[k].eval_metric, mb.records[k].eval_metric);
    EXPECT_TRUE(std::isfinite(ma.records[k].train_loss));
    EXPECT_TRUE(std::isfinite(ma.records[k].eval_percep_loss));
  }
  EXPECT_EQ(ma.records.back().iteration, 7u);
  EXPECT_EQ(ma.metric_name, "miou");
}

TEST(Train, PercepTermChangesTheRun) {
  const TaskData d = tiny_shapes(5);
  StudentNet a, b;
  train(d, tiny_config(4), false, &a);
  train(d, tiny_config(4), true, &b);
  EXPECT_FALSE(a == b);
}

TEST(Train, LearnsRestoration) {
  TrainConfig c = tiny_config(1, 60);
  c.eval_every = 60;
  c.base_lr = 0.01;
  const RestorationData d = tiny_restore(9);
  const double before = evaluate(StudentNet(1, 1, Rng::derive(c.seed, 1)), d);
  const RunMetrics m = train(d, c, true);
  EXPECT_EQ(m.metric_name, "rmse");
  EXPECT_LT(m.final_metric(), before);
}

TEST(Train, DivergenceIsRecordedNotThrown) {
  TrainConfig c = tiny_config(1, 50);
  c.base_lr = 10.0;
  const RunMetrics m = train(tiny_restore(6), c, false);
  EXPECT_TRUE(m.diverged);
  EXPECT_FALSE(m.diagnostic.empty());
  EXPECT_LT(m.last_iteration, 50u);
}

}  // namespace
