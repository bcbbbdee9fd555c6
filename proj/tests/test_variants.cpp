#include "multiception/accounting.hpp"
#include "multiception/variants.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace multiception;
using testutil::random_tensor;

namespace {

template <typename T> void randomize_bn(BatchNormParams<T> &bn, Rng &rng) {
  for (auto &v : bn.gamma) v = static_cast<T>(rng.uniform(0.5, 1.5));
  for (auto &v : bn.beta) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  for (auto &v : bn.running_mean) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  for (auto &v : bn.running_var) v = static_cast<T>(rng.uniform(0.5, 2.0));
}

std::vector<ParamSlot<double>> slots(VariantWeights<double> &w) {
  std::vector<ParamSlot<double>> s;
  collect_params(w, s);
  return s;
}

} // namespace

TEST(PaddingForKernel, HalfKernel) {
  EXPECT_EQ(padding_for_kernel(1), 0u);
  EXPECT_EQ(padding_for_kernel(3), 1u);
  EXPECT_EQ(padding_for_kernel(5), 2u);
  EXPECT_EQ(padding_for_kernel(7), 3u);
  EXPECT_THROW(padding_for_kernel(4), ConfigError);
  EXPECT_THROW(padding_for_kernel(9), ConfigError);
}

TEST(KernelSetType, RejectsInvalidSets) {
  EXPECT_THROW(KernelSet(std::vector<std::size_t>{}), ConfigError);
  EXPECT_THROW((KernelSet{5, 3}), ConfigError);
  EXPECT_THROW((KernelSet{3, 3}), ConfigError);
  EXPECT_THROW((KernelSet{3, 9}), ConfigError);
  EXPECT_THROW((KernelSet{2}), ConfigError);
  EXPECT_NO_THROW((KernelSet{1, 3, 5, 7}));
  EXPECT_EQ((KernelSet{3, 5, 7}).sum_of_squares(), 83u);
  EXPECT_EQ((KernelSet{3, 5}).str(), "{3,5}");
}

TEST(VariantSpec, SingleKernelVariantsRejectSets) {
  ConvVariantSpec s{Variant::dsconv, 4, 4, KernelSet{3, 5}, 1};
  EXPECT_THROW(s.validate(), ConfigError);
  s.variant = Variant::standard;
  EXPECT_THROW(s.validate(), ConfigError);
  s.variant = Variant::multiception;
  EXPECT_NO_THROW(s.validate());
}

TEST(VariantSpec, ParseRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("inception"), ConfigError);
}

TEST(DsconvForward, OutputShape) {
  ConvVariantSpec s{Variant::dsconv, 8, 16, KernelSet{3}, 1};
  auto w = variant_init<float>(s, 1);
  Tensor4<float> x(Shape4{2, 8, 16, 16}, 0.5f);
  EXPECT_EQ(dsconv_forward(x, w, s).shape(), (Shape4{2, 16, 16, 16}));
  s.stride = 2;
  EXPECT_EQ(dsconv_forward(x, w, s).shape(), (Shape4{2, 16, 8, 8}));
}

TEST(DsconvForward, ComposedIdentity) {
  const std::size_t C = 5;
  ConvVariantSpec s{Variant::dsconv, C, C, KernelSet{3}, 1};
  auto w = variant_zero<double>(s);
  for (std::size_t c = 0; c < C; ++c) {
    w.spatial[0].kernel(c, 0, 1, 1) = 1.0;
    w.pointwise->kernel(c, c, 0, 0) = 1.0;
  }
  Rng rng(2);
  const auto x = random_tensor({2, C, 6, 6}, rng);
  const auto y = dsconv_forward(x, w, s, Mode::eval);
  const double scale = 1.0 / (1.0 + 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] * scale, 1e-12);
}

TEST(DsconvForward, ParameterCountIsSeparableFormula) {
  for (std::size_t k : {1, 3, 5, 7}) {
    ConvVariantSpec s{Variant::dsconv, 12, 20, KernelSet{k}, 1};
    const auto w = variant_zero<float>(s);
    const std::size_t convs = w.spatial[0].param_count() + w.pointwise->param_count();
    EXPECT_EQ(convs, 12u * (k * k + 20));
    EXPECT_EQ(w.param_count(), 12u * (k * k + 20) + 2 * 12 + 2 * 20);
  }
}

TEST(DsconvForward, RejectsOtherVariants) {
  ConvVariantSpec s{Variant::multiception, 2, 2, KernelSet{3}, 1};
  auto w = variant_zero<float>(s);
  Tensor4<float> x(Shape4{1, 2, 4, 4});
  EXPECT_THROW(dsconv_forward(x, w, s), ConfigError);
  EXPECT_THROW(mixconv_forward(x, w, s), ConfigError);
}

TEST(MixconvForward, EvenPartition) {
  EXPECT_EQ(mixconv_partition(8, 2), (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(mixconv_partition(7, 3), (std::vector<std::size_t>{3, 2, 2}));
  EXPECT_EQ(mixconv_partition(3, 3), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_THROW(mixconv_partition(2, 3), ConfigError);
}

TEST(MixconvForward, GroupsAndShape) {
  ConvVariantSpec s{Variant::mixconv, 8, 12, KernelSet{3, 5}, 1};
  auto w = variant_init<float>(s, 3);
  ASSERT_EQ(w.spatial.size(), 2u);
  EXPECT_EQ(w.spatial[0].in_channels(), 4u);
  EXPECT_EQ(w.spatial[0].k(), 3u);
  EXPECT_EQ(w.spatial[1].in_channels(), 4u);
  EXPECT_EQ(w.spatial[1].k(), 5u);
  EXPECT_EQ(w.pointwise->in_channels(), 8u);
  Tensor4<float> x(Shape4{1, 8, 7, 7}, 1.0f);
  EXPECT_EQ(mixconv_forward(x, w, s).shape(), (Shape4{1, 12, 7, 7}));
}

TEST(MixconvForward, TooManyKernelSizes) {
  ConvVariantSpec s{Variant::mixconv, 2, 4, KernelSet{3, 5, 7}, 1};
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(variant_zero<float>(s), ConfigError);
}

TEST(MixconvForward, GroupsAreIndependent) {
  // perturbing a channel of group 0 must not change the group-1 branch output
  ConvVariantSpec s{Variant::mixconv, 4, 4, KernelSet{3, 5}, 1};
  auto w = variant_init<double>(s, 4);
  Rng rng(5);
  auto x = random_tensor({1, 4, 6, 6}, rng);
  VariantCache<double> c1, c2;
  variant_forward(x, w, s, Mode::eval, &c1);
  x(0, 0, 2, 2) += 1.0;
  variant_forward(x, w, s, Mode::eval, &c2);
  for (std::size_t ch = 2; ch < 4; ++ch)
    for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(c1.mid_bn_out.plane(0, ch)[i], c2.mid_bn_out.plane(0, ch)[i]);
}

TEST(MulticeptionForward, IntermediateWidthIsChannelsTimesKernels) {
  ConvVariantSpec s{Variant::multiception, 6, 10, KernelSet{3, 5, 7}, 1};
  EXPECT_EQ(s.intermediate_channels(), 18u);
  auto w = variant_init<float>(s, 6);
  ASSERT_EQ(w.spatial.size(), 3u);
  for (const auto &c : w.spatial) {
    EXPECT_EQ(c.groups, 6u);
    EXPECT_EQ(c.in_channels(), 6u);
  }
  EXPECT_EQ(w.pointwise->in_channels(), 18u);
  EXPECT_EQ(w.mid_bn->channels(), 18u);
  Tensor4<float> x(Shape4{2, 6, 8, 8}, 0.25f);
  EXPECT_EQ(multiception_forward(x, w, s).shape(), (Shape4{2, 10, 8, 8}));
  s.stride = 2;
  EXPECT_EQ(multiception_forward(x, w, s).shape(), (Shape4{2, 10, 4, 4}));
}

TEST(MulticeptionForward, BranchesSeeEveryChannel) {
  // every branch is a centred delta, so the concatenation repeats the input per kernel size
  ConvVariantSpec s{Variant::multiception, 2, 2, KernelSet{1, 3, 5}, 1};
  auto w = variant_zero<double>(s);
  for (auto &c : w.spatial)
    for (std::size_t ch = 0; ch < 2; ++ch) c.kernel(ch, 0, c.k() / 2, c.k() / 2) = 1.0;
  Rng rng(7);
  const auto x = random_tensor({1, 2, 5, 5}, rng);
  VariantCache<double> cache;
  variant_forward(x, w, s, Mode::eval, &cache);
  const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t ch = 0; ch < 2; ++ch)
      for (std::size_t i = 0; i < 25; ++i)
        EXPECT_NEAR(cache.mid_bn_out.plane(0, 2 * b + ch)[i], x.plane(0, ch)[i] * scale, 1e-12);
}

TEST(MulticeptionForward, ParameterCount) {
  ConvVariantSpec s{Variant::multiception, 16, 32, KernelSet{3, 5, 7}, 1};
  const auto w = variant_zero<float>(s);
  EXPECT_EQ(w.param_count(), params_multiception_exact(16, s.kernels, 32, true));
  EXPECT_EQ(w.param_count(), 16u * 83 + 16u * 3 * 32 + 2 * 48 + 2 * 32);
}

TEST(MulticeptionForward, SingletonEqualsDsconvBitwise) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    ConvVariantSpec ds{Variant::dsconv, 1 + rng.below(6), 1 + rng.below(6), KernelSet{3}, 1 + rng.below(2)};
    ConvVariantSpec mc = ds;
    mc.variant = Variant::multiception;
    auto wd = variant_init<float>(ds, rng.bits());
    randomize_bn(*wd.mid_bn, rng);
    randomize_bn(wd.out_bn, rng);
    auto wm = wd;
    const auto x = random_tensor<float>({2, ds.in_c, 3 + rng.below(6), 3 + rng.below(6)}, rng);
    const Mode mode = rng.coin() ? Mode::train : Mode::eval;
    const auto a = dsconv_forward(x, wd, ds, mode);
    const auto b = multiception_forward(x, wm, mc, mode);
    ASSERT_EQ(a.shape(), b.shape());
    ASSERT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0) << t;
  }
}

TEST(StandardVariant, IsConvThenBatchNorm) {
  ConvVariantSpec s{Variant::standard, 3, 4, KernelSet{3}, 1};
  auto w = variant_init<double>(s, 9);
  Rng rng(10);
  randomize_bn(w.out_bn, rng);
  const auto x = random_tensor({2, 3, 5, 5}, rng);
  auto bn = w.out_bn;
  const auto expected = batch_norm2d(conv2d_naive(x, w.spatial[0], 1, 1), bn, Mode::eval);
  EXPECT_LT(max_relative_error(variant_forward(x, w, s, Mode::eval), expected), 1e-12);
  EXPECT_FALSE(w.pointwise.has_value());
  EXPECT_FALSE(w.mid_bn.has_value());
}

TEST(VariantForward, MismatchedWeightsRejected) {
  ConvVariantSpec a{Variant::multiception, 4, 4, KernelSet{3, 5}, 1};
  ConvVariantSpec b{Variant::multiception, 4, 4, KernelSet{3, 7}, 1};
  auto w = variant_zero<float>(a);
  Tensor4<float> x(Shape4{1, 4, 5, 5});
  EXPECT_THROW(variant_forward(x, w, b), DimensionError);
  Tensor4<float> wrong(Shape4{1, 3, 5, 5});
  EXPECT_THROW(variant_forward(wrong, w, a), DimensionError);
}

TEST(VariantForward, InnerReluChangesOnlyThePointwiseInput) {
  ConvVariantSpec s{Variant::multiception, 3, 3, KernelSet{3, 5}, 1};
  auto w = variant_init<double>(s, 11);
  Rng rng(12);
  const auto x = random_tensor({2, 3, 5, 5}, rng);
  VariantCache<double> plain, gated;
  variant_forward(x, w, s, Mode::eval, &plain);
  s.inner_relu = true;
  variant_forward(x, w, s, Mode::eval, &gated);
  EXPECT_EQ(plain.mid_bn_out, gated.mid_bn_out);
  EXPECT_EQ(gated.pointwise_in, relu(gated.mid_bn_out));
}

TEST(VariantBackward, MatchesFiniteDifferencesForEveryVariant) {
  Rng rng(13);
  const std::vector<ConvVariantSpec> specs = {
      {Variant::standard, 3, 2, KernelSet{3}, 1},          {Variant::standard, 2, 3, KernelSet{5}, 2},
      {Variant::dsconv, 3, 4, KernelSet{3}, 1},            {Variant::dsconv, 2, 2, KernelSet{7}, 2},
      {Variant::mixconv, 5, 3, KernelSet{3, 5, 7}, 1},     {Variant::mixconv, 4, 2, KernelSet{1, 3}, 2},
      {Variant::multiception, 2, 3, KernelSet{3, 5, 7}, 1}, {Variant::multiception, 3, 2, KernelSet{1, 5}, 2},
  };
  for (const auto &spec : specs) {
    for (Mode mode : {Mode::train, Mode::eval}) {
      auto w = variant_init<double>(spec, rng.bits());
      if (w.mid_bn) randomize_bn(*w.mid_bn, rng);
      randomize_bn(w.out_bn, rng);
      auto x = random_tensor({2, spec.in_c, 5, 5}, rng);
      VariantCache<double> cache;
      auto scratch = w;
      const auto y = variant_forward(x, scratch, spec, mode, &cache);
      const auto r = random_tensor(y.shape(), rng);
      auto back = variant_backward(w, spec, cache, r);
      auto f = [&] {
        auto q = w;
        return testutil::dot(variant_forward(x, q, spec, mode), r);
      };
      const std::string label = std::string(to_string(spec.variant)) + spec.kernels.str();
      ASSERT_LT(testutil::max_rel(back.grad_input.span(), testutil::numeric_gradient(x.span(), f)), 1e-4) << label;
      auto ps = slots(w);
      auto gs = slots(back.grads);
      ASSERT_EQ(ps.size(), gs.size());
      for (std::size_t i = 0; i < ps.size(); ++i) {
        ASSERT_LT(testutil::max_rel(gs[i].values, testutil::numeric_gradient(ps[i].values, f)), 1e-4)
            << label << " tensor " << i;
      }
    }
  }
}

TEST(VariantBackward, InnerReluGradients) {
  ConvVariantSpec s{Variant::multiception, 2, 2, KernelSet{3, 5}, 1};
  s.inner_relu = true;
  Rng rng(14);
  auto w = variant_init<double>(s, 15);
  auto x = random_tensor({2, 2, 4, 4}, rng);
  VariantCache<double> cache;
  auto scratch = w;
  const auto r = random_tensor(variant_forward(x, scratch, s, Mode::train, &cache).shape(), rng);
  const auto back = variant_backward(w, s, cache, r);
  auto f = [&] {
    auto q = w;
    return testutil::dot(variant_forward(x, q, s, Mode::train), r);
  };
  EXPECT_LT(testutil::max_rel(back.grad_input.span(), testutil::numeric_gradient(x.span(), f)), 1e-4);
}

TEST(VariantInit, DeterministicForSeed) {
  ConvVariantSpec s{Variant::mixconv, 6, 6, KernelSet{3, 5, 7}, 1};
  const auto a = variant_init<float>(s, 99), b = variant_init<float>(s, 99), c = variant_init<float>(s, 100);
  EXPECT_EQ(a.spatial[1].kernel, b.spatial[1].kernel);
  EXPECT_NE(a.spatial[1].kernel, c.spatial[1].kernel);
}
