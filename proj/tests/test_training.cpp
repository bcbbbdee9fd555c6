#include "multiception/training.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

using namespace multiception;

namespace {

LayerPlan tiny_plan() {
  return build_plan(load_model_config(std::string(MULTICEPTION_CONFIG_DIR) + "/tiny_multiception.cfg"));
}

std::vector<float> flatten(ModelWeights<float> &w) {
  std::vector<float> out;
  for (const auto &s : collect_params(w)) out.insert(out.end(), s.values.begin(), s.values.end());
  return out;
}

} // namespace

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 20, 0.1, 5e-5), 0.1);
  EXPECT_DOUBLE_EQ(cosine_lr(19, 20, 0.1, 5e-5), 5e-5);
  EXPECT_DOUBLE_EQ(cosine_lr(25, 20, 0.1, 5e-5), 5e-5);
}

TEST(CosineLr, MidpointIsMean) {
  EXPECT_NEAR(cosine_lr(5, 11, 0.2, 0.0), 0.1, 1e-15);
  EXPECT_NEAR(cosine_lr(2, 5, 1.0, 0.5), 0.75, 1e-15);
}

TEST(CosineLr, SingleEpochUsesMax) {
  EXPECT_EQ(cosine_lr(0, 1, 0.3, 0.01), 0.3);
  EXPECT_EQ(cosine_lr(0, 0, 0.3, 0.01), 0.3);
}

TEST(CosineLrProperties, MonotoneAndBounded) {
  for (std::size_t T = 2; T <= 60; ++T) {
    double prev = cosine_lr(0, T, 0.1, 1e-4);
    for (std::size_t e = 1; e < T; ++e) {
      const double lr = cosine_lr(static_cast<double>(e), T, 0.1, 1e-4);
      ASSERT_LE(lr, prev);
      ASSERT_GE(lr, 1e-4);
      prev = lr;
    }
  }
}

TEST(Nesterov, ScalarExample) {
  std::vector<double> p{1.0}, g{0.1}, v{0.0};
  sgd_nesterov_step<double>(p, g, v, 1.0, 0.9, 0.0);
  EXPECT_NEAR(p[0], 0.81, 1e-12);
  EXPECT_NEAR(v[0], 0.1, 1e-12);
}

TEST(Nesterov, TwoStepsByHand) {
  std::vector<double> p{2.0}, g{0.5}, v{0.0};
  const double lr = 0.1, m = 0.5, wd = 0.1;
  double ep = 2.0, ev = 0.0;
  for (int s = 0; s < 2; ++s) {
    const double gg = 0.5 + wd * ep;
    ev = m * ev + gg;
    ep -= lr * (gg + m * ev);
    sgd_nesterov_step<double>(p, g, v, lr, m, wd);
  }
  EXPECT_NEAR(p[0], ep, 1e-14);
  EXPECT_NEAR(v[0], ev, 1e-14);
}

TEST(Nesterov, ZeroMomentumIsVanillaSgdBitwise) {
  Rng rng(1);
  std::vector<float> p(257), g(257), v(257, 0.0f);
  for (auto &x : p) x = static_cast<float>(rng.uniform(-1, 1));
  for (auto &x : g) x = static_cast<float>(rng.uniform(-1, 1));
  auto expected = p;
  const float lr = 0.05f;
  for (std::size_t i = 0; i < p.size(); ++i) expected[i] -= lr * g[i];
  sgd_nesterov_step<float>(p, g, v, lr, 0.0, 0.0);
  EXPECT_EQ(std::memcmp(p.data(), expected.data(), p.size() * sizeof(float)), 0);
}

TEST(Nesterov, ZeroGradientKeepsParameters) {
  std::vector<double> p{1.5, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
  sgd_nesterov_step<double>(p, g, v, 0.1, 0.9, 0.0);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
}

TEST(Nesterov, BufferSizeMismatch) {
  std::vector<double> p(3), g(2), v(3);
  EXPECT_THROW(sgd_nesterov_step<double>(p, g, v, 0.1, 0.9, 0.0), DimensionError);
}

TEST(Nesterov, WeightDecayOnlyOnKernelsAndFcWeights) {
  const auto plan = tiny_plan();
  auto w = init_model<float>(plan, 3);
  for (auto &s : collect_params(w)) std::fill(s.values.begin(), s.values.end(), 1.0f);
  auto grads = model_zero<float>(plan);
  for (auto &s : collect_params(grads)) std::fill(s.values.begin(), s.values.end(), 0.0f);
  OptimizerState<float> state(plan);
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.5;
  sgd_nesterov_step(w, grads, state, 0.1, cfg);
  for (const auto &s : collect_params(w)) {
    const float expected = decays(s.role) ? 0.95f : 1.0f;
    for (float v : s.values) ASSERT_FLOAT_EQ(v, expected) << static_cast<int>(s.role);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  Tensor4<double> logits(Shape4{2, 7, 1, 1}, 0.25);
  const auto r = cross_entropy_loss(logits, std::vector<int>{0, 6});
  EXPECT_NEAR(r.loss, std::log(7.0), 1e-12);
}

TEST(CrossEntropy, TwoClassExample) {
  Tensor4<double> logits(Shape4{1, 2, 1, 1}, std::vector<double>{0.0, std::log(3.0)});
  const auto r = cross_entropy_loss(logits, std::vector<int>{0});
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(r.grad_logits[0], 0.25 - 1.0, 1e-12);
  EXPECT_NEAR(r.grad_logits[1], 0.75, 1e-12);
  EXPECT_EQ(r.correct, 0u);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  Tensor4<float> logits(Shape4{1, 3, 1, 1}, std::vector<float>{1000.0f, 0.0f, -5.0f});
  const auto r = cross_entropy_loss(logits, std::vector<int>{0});
  EXPECT_LT(r.loss, 1e-12);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_EQ(r.correct, 1u);
}

TEST(CrossEntropy, InvalidInputs) {
  Tensor4<double> logits(Shape4{2, 3, 1, 1});
  EXPECT_THROW(cross_entropy_loss(logits, std::vector<int>{0, 3}), InputError);
  EXPECT_THROW(cross_entropy_loss(logits, std::vector<int>{-1, 0}), InputError);
  EXPECT_THROW(cross_entropy_loss(logits, std::vector<int>{0}), DimensionError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    auto logits = testutil::random_tensor({3, 5, 1, 1}, rng, 3.0);
    const std::vector<int> y{static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5)),
                             static_cast<int>(rng.below(5))};
    const auto r = cross_entropy_loss(logits, y);
    auto f = [&] { return cross_entropy_loss(logits, y).loss; };
    ASSERT_LT(testutil::max_rel(r.grad_logits.span(), testutil::numeric_gradient(logits.span(), f)), 1e-6);
  }
}

TEST(TrainConfigCheck, RejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_min = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.weight_decay = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, MetricsFormat) {
  EXPECT_EQ(format_metrics({3, 0.05, 0.6931471, 0.5}), "epoch=3 lr=0.050000 loss=0.693147 accuracy=0.500000");
}

TEST(Training, ZeroLearningRateKeepsWeights) {
  const auto plan = tiny_plan();
  auto w = init_model<float>(plan, 5);
  const auto data = normalize(make_synthetic(32, 6));
  TrainConfig cfg;
  cfg.lr_max = cfg.lr_min = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  auto before = w;
  train(plan, w, data, cfg, [](const EpochMetrics &) {});
  // running BN statistics move even at lr 0; learnable tensors must not
  EXPECT_EQ(flatten(w), flatten(before));
}

TEST(Training, DeterministicForSeed) {
  const auto plan = tiny_plan();
  const auto data = normalize(make_synthetic(48, 7));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 11;
  cfg.augment = true;
  auto a = init_model<float>(plan, 1), b = init_model<float>(plan, 1);
  const auto la = train(plan, a, data, cfg, [](const EpochMetrics &) {});
  const auto lb = train(plan, b, data, cfg, [](const EpochMetrics &) {});
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].loss, lb[i].loss);
  EXPECT_EQ(flatten(a), flatten(b));
}

TEST(Training, SyntheticLossHalvesWithinTwentyEpochs) {
  const auto plan = tiny_plan();
  const auto data = normalize(make_synthetic(256, 8));
  auto w = init_model<float>(plan, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  std::size_t calls = 0;
  const auto log = train(plan, w, data, cfg, [&](const EpochMetrics &m) {
    EXPECT_EQ(m.epoch, calls++);
    EXPECT_GE(m.accuracy, 0.0);
    EXPECT_LE(m.accuracy, 1.0);
    EXPECT_TRUE(std::isfinite(m.loss));
  });
  ASSERT_EQ(log.size(), 20u);
  EXPECT_LE(log.back().loss, 0.5 * log.front().loss);
  EXPECT_GE(evaluate(plan, w, data, 64).accuracy, 0.95);
}

TEST(Training, EmptyDatasetRejected) {
  const auto plan = tiny_plan();
  auto w = init_model<float>(plan, 1);
  Dataset empty;
  EXPECT_THROW(evaluate(plan, w, empty, 8), InputError);
}
