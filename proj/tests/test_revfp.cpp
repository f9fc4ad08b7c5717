#include <cmath>

#include "test_util.hpp"

namespace rcnet {
namespace {

using test::randn;

class Revfp : public ::testing::Test {
 protected:
  checks::Fixture f = checks::make_fixture(test::small_config());
  ParamStore store{11};
  revfp::FguParams fgu{ConvParams::make(store, "fgu/conv", 8, 1, 3), store.add("fgu/t", {1}, init::Constant{1.0})};
  revfp::FusionParams step{ConvParams::make(store, "s/head", 8, 1, 1), ConvParams::make(store, "s/conv", 4, 4, 3),
                           NormParams::make(store, "s/norm", 4)};
};

TEST_F(Revfp, ConstantLogitsLeaveUpsampledUnchanged) {
  for (auto& v : fgu.conv.weight.mutable_data()) v = 0.0;
  for (auto& v : fgu.conv.bias.mutable_data()) v = 3.7;
  auto g = revfp::feature_guided_upsample(randn({1, 4, 4, 4}, 1), randn({1, 4, 2, 2}, 2), fgu);
  for (double v : g.weights.data()) EXPECT_NEAR(v, 1.0, 1e-14);
  EXPECT_LE(max_abs_diff(g.output, g.upsampled), 1e-14);
}

TEST_F(Revfp, FguWeightsHaveUnitMean) {
  for (int t = 0; t < 20; ++t) {
    auto g = revfp::feature_guided_upsample(randn({2, 4, 8, 8}, 10 + t), randn({2, 4, 4, 4}, 50 + t), fgu);
    const Tensor m = ops::mean(g.weights, {2, 3});
    for (double v : m.data()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
  EXPECT_THROW((void)revfp::feature_guided_upsample(randn({1, 4, 4, 4}, 1), randn({1, 4, 3, 2}, 2), fgu),
               ShapeError);
}

TEST_F(Revfp, DynamicWeight) {
  Tensor a = randn({2, 4, 3, 3}, 1), b = randn({2, 4, 3, 3}, 2);
  for (auto& v : step.head.weight.mutable_data()) v = 0.0;
  for (auto& v : step.head.bias.mutable_data()) v = 0.0;
  const Tensor half = revfp::dynamic_weight(a, b, step.head);
  for (double v : half.data()) EXPECT_EQ(v, 0.5);
  step.head.bias.mutable_data()[0] = 10.0;
  const Tensor high = revfp::dynamic_weight(a, b, step.head);
  for (double v : high.data()) EXPECT_GE(v, 0.999);
  EXPECT_THROW((void)revfp::dynamic_weight(a, randn({2, 4, 3, 2}, 3), step.head), ShapeError);
}

TEST_F(Revfp, DynamicWeightMatchesComposition) {
  Tensor a = randn({2, 4, 3, 3}, 1), b = randn({2, 4, 3, 3}, 2);
  Tensor w = revfp::dynamic_weight(a, b, step.head);
  const auto hw = step.head.weight.data();
  for (int n = 0; n < 2; ++n) {
    double z = step.head.bias.data()[0];
    for (int c = 0; c < 8; ++c) {
      const Tensor& src = c < 4 ? a : b;
      double s = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s += src.at({n, c % 4, i, j});
      z += hw[static_cast<std::size_t>(c)] * s / 9.0;
    }
    EXPECT_NEAR(w.data()[static_cast<std::size_t>(n)], 1.0 / (1.0 + std::exp(-z)), 1e-14);
  }
}

TEST_F(Revfp, ForcedWeightsSelectEndpoints) {
  Tensor a = randn({2, 4, 4, 4}, 1), b = randn({2, 4, 4, 4}, 2);
  checks::force_head(step.head, 1.0);
  EXPECT_TRUE(bitwise_equal(revfp::pre_fuse(a, b, step).blend, a));
  EXPECT_TRUE(bitwise_equal(revfp::post_fuse(a, randn({2, 4, 8, 8}, 3), step).blend, a));
  checks::force_head(step.head, 0.0);
  EXPECT_TRUE(bitwise_equal(revfp::pre_fuse(a, b, step).blend, b));
}

TEST_F(Revfp, PostFuseMatchesOracle) {
  Tensor cur = randn({2, 4, 4, 4}, 1), prev = randn({2, 4, 8, 8}, 2);
  auto r = revfp::post_fuse(cur, prev, step);
  Tensor down = oracle::maxpool2d(prev, 2, 2);
  Tensor blend = down.clone();
  for (std::int64_t i = 0; i < blend.numel(); ++i) {
    const double w = r.weight.data()[static_cast<std::size_t>(i / (4 * 16))];
    auto& v = blend.mutable_data()[static_cast<std::size_t>(i)];
    v = w * cur.data()[static_cast<std::size_t>(i)] + (1 - w) * v;
  }
  Tensor expect = oracle::channel_norm(oracle::conv2d(blend, step.conv.weight, step.conv.bias, 1, 1),
                                       step.norm.gamma, step.norm.beta, 1e-5);
  EXPECT_LE(max_abs_diff(r.output, expect), 1e-10);
  EXPECT_THROW((void)revfp::post_fuse(cur, randn({2, 4, 4, 4}, 3), step), ShapeError);
}

TEST_F(Revfp, Invariants) {
  EXPECT_TRUE(checks::boundary_rules(f).pass);
  EXPECT_TRUE(checks::convex_envelope(f).pass);
  const auto bi = checks::revfp_bidirectional(f);
  EXPECT_TRUE(bi.pass) << bi.detail;
  EXPECT_TRUE(checks::revfp_locality(f.cfg).pass);
}

TEST_F(Revfp, MissingLevelIsRejected) {
  FeaturePyramid c;
  for (const auto& [level, t] : f.inputs)
    if (level != 4) c.set(level, t);
  EXPECT_THROW((void)revfp::revfp_forward(c, f.params.revfp), ShapeError);
}

}  // namespace
}  // namespace rcnet
