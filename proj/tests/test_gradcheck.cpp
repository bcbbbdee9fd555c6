#include "multiception/gradcheck.hpp"

#include <gtest/gtest.h>

using namespace multiception;

TEST(FdRelativeError, FloorGuardsTinyGradients) {
  EXPECT_DOUBLE_EQ(fd_relative_error(1e-9, 2e-9, 1e-3), 1e-6);
  EXPECT_DOUBLE_EQ(fd_relative_error(2.0, 1.0, 1e-3), 0.5);
  EXPECT_DOUBLE_EQ(fd_relative_error(-4.0, -4.0, 1e-3), 0.0);
}

TEST(CheckCoords, ExactGradientOfQuadratic) {
  std::vector<double> x{0.5, -1.0, 2.0};
  const std::vector<double> analytic{1.0, -2.0, 4.0};
  Rng rng(1);
  const auto r = check_coords(x, analytic, [&] { return Probe{x[0] * x[0] + x[1] * x[1] + x[2] * x[2], false}; }, rng,
                              GradcheckOptions{});
  EXPECT_EQ(r.checked, 3u);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(x, (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(CheckCoords, CorruptedGradientFails) {
  Rng rng(2);
  const auto x0 = detail::random_tensor({2, 3, 5, 5}, rng);
  ConvWeights<double> w(4, 3, 3, 1, true);
  for (auto &v : w.kernel.span()) v = rng.normal();
  auto x = x0;
  const auto r = detail::random_tensor(conv2d_naive(x, w, 1, 1).shape(), rng);
  auto g = conv2d_backward(x, w, r, 1, 1);
  for (auto &v : g.grad_kernel.span()) v *= 1.01;
  GradReport rep{"corrupted", 1};
  rep.merge(check_coords(w.kernel.span(), g.grad_kernel.span(),
                         detail::smooth([&] { return detail::weighted_sum(conv2d_fast(x, w, 1, 1), r); }), rng,
                         GradcheckOptions{}));
  EXPECT_FALSE(rep.passed());
  EXPECT_GT(rep.max_rel_error, 5e-3);
}

TEST(CheckCoords, KinksAreSkipped) {
  std::vector<double> x{0.0, 1.0};
  const std::vector<double> analytic{123.0, 1.0};
  Rng rng(3);
  const auto r = check_coords(
      x, analytic, [&] { return Probe{x[1], std::abs(x[0]) < 1e-3}; }, rng, GradcheckOptions{});
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_EQ(r.checked, 0u);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(CheckCoords, SamplesAtMostTheConfiguredCount) {
  std::vector<double> x(1000, 1.0), analytic(1000, 1.0);
  Rng rng(4);
  const auto r = check_coords(
      x, analytic, [&] {
        double s = 0;
        for (double v : x) s += v;
        return Probe{s, false};
      },
      rng, GradcheckOptions{});
  EXPECT_EQ(r.checked, 24u);
  EXPECT_THROW(check_coords(x, std::span<const double>(analytic).first(3), [] { return Probe{}; }, rng, {}),
               DimensionError);
}

TEST(GradcheckSuites, ZeroCasesIsAnEmptyPass) {
  const auto reports = run_gradcheck(1, 0);
  ASSERT_EQ(reports.size(), 12u);
  for (const auto &r : reports) {
    EXPECT_EQ(r.checked, 0u);
    EXPECT_TRUE(r.passed()) << r.op;
  }
}

TEST(GradcheckSuites, DefaultRunPasses) {
  const auto reports = run_gradcheck(1, 20);
  for (const auto &r : reports) {
    EXPECT_GT(r.checked, 0u) << r.op;
    EXPECT_TRUE(r.passed()) << r.op << " max_rel_error=" << r.max_rel_error;
  }
  EXPECT_EQ(reports.back().op, "multiception_2layer");
}

TEST(GradcheckSuites, CrossEntropyUsesTighterTolerance) {
  Rng rng(5);
  const auto r = gradcheck_cross_entropy(10, rng);
  EXPECT_LE(r.tolerance, 1e-6);
  EXPECT_TRUE(r.passed());
}

TEST(GradcheckSuites, TwoLayerModelsForEveryVariant) {
  Rng rng(6);
  for (Variant v : kAllVariants) {
    const auto plan = two_layer_plan(v, 3, 3, 3);
    const auto r = gradcheck_model(plan, 5, rng, {}, std::string(to_string(v)));
    EXPECT_GT(r.checked, 0u);
    EXPECT_TRUE(r.passed()) << to_string(v) << " " << r.max_rel_error;
  }
}
