#include <cmath>

#include "rcnet/bench.hpp"
#include "test_util.hpp"

namespace rcnet {
namespace {

using test::randn;

FeaturePyramid random_pyramid(int d, int base, std::uint64_t seed, int batch = 1) {
  FeaturePyramid p;
  for (int l = 3; l <= 7; ++l) p.set(l, randn({batch, d, base >> (l - 3), base >> (l - 3)}, seed + l));
  return p;
}

/// 1x1 conv over a rank-5 stack via the 2-D conv oracle.
Tensor pointwise_oracle(const Tensor& x, const ConvParams& c) {
  Tensor flat(Shape{x.dim(0), x.dim(1), x.dim(2) * x.dim(3), x.dim(4)}, std::vector<double>(x.data().begin(), x.data().end()));
  Tensor w(Shape{c.weight.dim(0), c.weight.dim(1), 1, 1},
           std::vector<double>(c.weight.data().begin(), c.weight.data().end()));
  Tensor y = oracle::conv2d(flat, w, c.bias, 1, 0);
  return Tensor(Shape{x.dim(0), c.weight.dim(0), x.dim(2), x.dim(3), x.dim(4)},
                std::vector<double>(y.data().begin(), y.data().end()));
}

TEST(Gather, ConstantPyramidGivesConstantStack) {
  FeaturePyramid p;
  for (int l = 3; l <= 7; ++l) p.set(l, Tensor::full({1, 4, 32 >> (l - 3), 32 >> (l - 3)}, 1.25));
  Tensor s = csn::gather_to_reference(p, 4);
  EXPECT_EQ(s.shape(), (Shape{1, 4, 5, 16, 16}));
  for (double v : s.data()) EXPECT_EQ(v, 1.25);
}

TEST(Gather, SlicesMatchResizeOracle) {
  const auto p = random_pyramid(4, 32, 1);
  Tensor s = csn::gather_to_reference(p, 4);
  for (int l = 3; l <= 7; ++l) {
    Tensor expect = checks::oracle_resize(p.at(l), l, 4);
    Tensor slice = ops::slice(s, 2, l - 3, 1);
    EXPECT_LE(max_abs_diff(ops::reshape(slice, expect.shape()), expect), 1e-12) << "level " << l;
  }
  EXPECT_THROW((void)csn::gather_to_reference(p, 8), ShapeError);
  FeaturePyramid gap;
  for (const auto& [l, t] : p)
    if (l != 5) gap.set(l, t);
  EXPECT_THROW((void)csn::gather_to_reference(gap, 4), ShapeError);
}

TEST(ScaleShift, LevelSixRoutingTable) {
  NeckConfig cfg;
  EXPECT_EQ(checks::scale_routing(cfg, 6), (std::vector<int>{6, 4, 5, 7, 3}));
  EXPECT_EQ(checks::scale_routing(cfg, 3), (std::vector<int>{3, 6, 7, 4, 5}));
  EXPECT_TRUE(checks::shift_routing(cfg).pass);
}

TEST(ScaleShift, NoShiftedChannelsIsIdentity) {
  Tensor s = randn({1, 8, 5, 2, 2}, 1);
  EXPECT_TRUE(bitwise_equal(csn::scale_shift(s, csn::ShiftPlan::none()), s));
}

TEST(ScaleShift, IndivisibleChannelsAreRejected) {
  EXPECT_THROW((void)csn::ShiftPlan::from_ratio(12, 2), ShapeError);
  EXPECT_THROW((void)csn::scale_shift(randn({1, 4, 5, 2, 2}, 1), csn::ShiftPlan::from_ratio(64, 4)), ShapeError);
}

TEST(ScaleShift, StructuralProperties) {
  for (int r : {1, 2, 4, 8}) {
    NeckConfig cfg;
    cfg.shift_ratio = r;
    EXPECT_TRUE(checks::circulant_equivariance(cfg).pass) << r;
    EXPECT_TRUE(checks::shift_bijective(cfg).pass) << r;
    EXPECT_TRUE(checks::shift_routing(cfg).pass) << r;
  }
}

TEST(ScaleShift, ScalarShiftSumIsCirculantConv) {
  const auto r = checks::shift_sum_oracle(42);
  EXPECT_TRUE(r.pass) << r.value;
}

TEST(ScaleShift, DenseRoutingConvReproducesShift) {
  const auto plan = csn::ShiftPlan::from_ratio(16, 2);
  Tensor s = randn({1, 16, 5, 3, 3}, 3);
  EXPECT_LE(max_abs_diff(csn::scale_shift(s, plan), csn::dense_scale_conv(s, csn::routing_weights(plan, 16))), 1e-12);
}

class CsnModules : public ::testing::Test {
 protected:
  ParamStore store{5};
  csn::CsnParams zero = csn::CsnParams::make(store, 8, 2, 4, true);
  ParamStore store2{6};
  csn::CsnParams live = csn::CsnParams::make(store2, 8, 2, 4, false);
  Tensor shifted = randn({2, 12, 5, 4, 4}, 7);
};

TEST_F(CsnModules, ZeroInitAggregateIsIdentity) {
  EXPECT_TRUE(bitwise_equal(csn::shift_aggregate(shifted, zero.aggregate), ops::slice(shifted, 1, 0, 8)));
  EXPECT_THROW((void)csn::shift_aggregate(randn({2, 8, 5, 4, 4}, 1), zero.aggregate), ShapeError);
}

TEST_F(CsnModules, AggregateMatchesComposition) {
  const auto& p = live.aggregate;
  Tensor h = pointwise_oracle(shifted, p.reduce);
  Tensor flat(Shape{2, 8, 20, 4}, std::vector<double>(h.data().begin(), h.data().end()));
  Tensor normed = oracle::channel_norm(flat, p.norm.gamma, p.norm.beta, 1e-5);
  Tensor act(Shape{2, 8, 5, 4, 4}, std::vector<double>(normed.data().begin(), normed.data().end()));
  for (auto& v : act.mutable_data()) v = std::max(v, 0.0);
  Tensor expand = pointwise_oracle(act, p.expand);
  Tensor expect = ops::add(ops::slice(shifted, 1, 0, 8), expand);
  EXPECT_LE(max_abs_diff(csn::shift_aggregate(shifted, p), expect), 1e-10);
}

TEST_F(CsnModules, ZeroInitContextIsIdentity) {
  Tensor y = randn({2, 8, 5, 4, 4}, 8);
  EXPECT_TRUE(bitwise_equal(csn::dual_global_context(y, zero.context), y));
  EXPECT_THROW((void)csn::dual_global_context(randn({2, 4, 5, 4, 4}, 1), zero.context), ShapeError);
}

TEST_F(CsnModules, ConstantStackHasUniformWeights) {
  Tensor y = Tensor::full({1, 8, 5, 4, 4}, 0.6);
  csn::DualContextTrace tr;
  (void)csn::dual_global_context(y, live.context, &tr);
  for (double v : tr.scale_weights.data()) EXPECT_NEAR(v, 1.0, 1e-14);
  for (double v : tr.spatial_weights.data()) EXPECT_NEAR(v, 1.0, 1e-14);
}

TEST_F(CsnModules, ContextMatchesStepwiseComposition) {
  const std::int64_t N = 2, C = 8, n = 5, H = 3, W = 4;
  Tensor y = randn({N, C, n, H, W}, 9);
  const auto& p = live.context;
  auto w = [](const ConvParams& c, std::int64_t o, std::int64_t i) { return c.weight.at({o, i}); };
  auto yv = [&](std::int64_t b, std::int64_t c, std::int64_t s, std::int64_t h, std::int64_t x) {
    return y.at({b, c, s, h, x});
  };
  Tensor out = csn::dual_global_context(y, p);
  double worst = 0.0;
  for (std::int64_t b = 0; b < N; ++b) {
    // Scale branch.
    std::vector<double> pooled(static_cast<std::size_t>(C * n), 0.0);
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t x = 0; x < W; ++x) pooled[static_cast<std::size_t>(c * n + s)] += yv(b, c, s, h, x);
        pooled[static_cast<std::size_t>(c * n + s)] /= static_cast<double>(H * W);
      }
    std::vector<double> logits(static_cast<std::size_t>(C * n));
    for (std::int64_t o = 0; o < C; ++o)
      for (std::int64_t s = 0; s < n; ++s) {
        double z = p.scale_mid.bias.data()[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < C; ++i) z += w(p.scale_mid, o, i) * pooled[static_cast<std::size_t>(i * n + s)];
        logits[static_cast<std::size_t>(o * n + s)] = z;
      }
    const auto a = oracle::softmax_groups(logits, static_cast<std::size_t>(n));
    std::vector<double> zs(static_cast<std::size_t>(C * H * W), 0.0);
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t q = 0; q < H * W; ++q)
          zs[static_cast<std::size_t>(c * H * W + q)] +=
              yv(b, c, s, q / W, q % W) * a[static_cast<std::size_t>(c * n + s)];
    // Spatial branch.
    std::vector<double> smean(static_cast<std::size_t>(C * H * W), 0.0);
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t q = 0; q < H * W; ++q) {
        for (std::int64_t s = 0; s < n; ++s) smean[static_cast<std::size_t>(c * H * W + q)] += yv(b, c, s, q / W, q % W);
        smean[static_cast<std::size_t>(c * H * W + q)] /= static_cast<double>(n);
      }
    std::vector<double> sl(static_cast<std::size_t>(C * H * W));
    for (std::int64_t o = 0; o < C; ++o)
      for (std::int64_t q = 0; q < H * W; ++q) {
        double z = p.spatial_mid.bias.data()[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < C; ++i) z += w(p.spatial_mid, o, i) * smean[static_cast<std::size_t>(i * H * W + q)];
        sl[static_cast<std::size_t>(o * H * W + q)] = z;
      }
    const auto bw = oracle::softmax_groups(sl, static_cast<std::size_t>(H * W));
    std::vector<double> zp(static_cast<std::size_t>(C * n), 0.0);
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t q = 0; q < H * W; ++q)
          zp[static_cast<std::size_t>(c * n + s)] +=
              yv(b, c, s, q / W, q % W) * bw[static_cast<std::size_t>(c * H * W + q)];
    // Projections and sum.
    for (std::int64_t o = 0; o < C; ++o)
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t q = 0; q < H * W; ++q) {
          double sc = p.scale_out.bias.data()[static_cast<std::size_t>(o)];
          double sp = p.spatial_out.bias.data()[static_cast<std::size_t>(o)];
          for (std::int64_t i = 0; i < C; ++i) {
            sc += w(p.scale_out, o, i) * zs[static_cast<std::size_t>(i * H * W + q)];
            sp += w(p.spatial_out, o, i) * zp[static_cast<std::size_t>(i * n + s)];
          }
          const double expect = yv(b, o, s, q / W, q % W) + sc + sp;
          worst = std::max(worst, std::abs(out.at({b, o, s, q / W, q % W}) - expect));
        }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Scatter, ZeroStackReturnsPyramid) {
  const auto p = random_pyramid(4, 32, 2);
  const auto out = csn::scatter_and_combine(Tensor::zeros({1, 4, 5, 16, 16}), p, 4);
  EXPECT_TRUE(bitwise_equal(out, p));
}

TEST(Scatter, MatchesResizeAddOracle) {
  const auto p = random_pyramid(4, 32, 3);
  Tensor yc = randn({1, 4, 5, 16, 16}, 4);
  const auto out = csn::scatter_and_combine(yc, p, 4);
  for (int l = 3; l <= 7; ++l) {
    Tensor slice = ops::reshape(ops::slice(yc, 2, l - 3, 1), {1, 4, 16, 16});
    Tensor expect = ops::add(p.at(l), checks::oracle_resize(slice, 4, l));
    EXPECT_LE(max_abs_diff(out.at(l), expect), 1e-12);
  }
  EXPECT_THROW((void)csn::scatter_and_combine(Tensor::zeros({1, 4, 4, 16, 16}), p, 4), ShapeError);
  EXPECT_THROW((void)csn::scatter_and_combine(Tensor::zeros({1, 4, 5, 15, 16}), p, 4), ShapeError);
}

TEST(CsnForward, ZeroInitIsRoundTripOracle) {
  auto f = checks::make_fixture(test::small_config());
  const auto r = checks::zero_init_identity(f);
  EXPECT_TRUE(r.pass) << r.value << " " << r.detail;
}

TEST(CsnForward, ReachesNonAdjacentLevels) {
  EXPECT_TRUE(checks::csn_nonadjacent_reach(test::small_config()).pass);
  EXPECT_TRUE(checks::context_softmax_mean(test::small_config()).pass);
}

TEST(BenchShift, StableAndExact) {
  const auto a = bench::bench_shift(16, 2, 5, 8, 8, 10, 1);
  const auto b = bench::bench_shift(16, 2, 5, 8, 8, 100, 1);
  EXPECT_LE(a.max_abs_diff, 1e-12);
  EXPECT_GT(a.shift_median_ns, 0.0);
  EXPECT_NEAR(a.dense_median_ns / b.dense_median_ns, 1.0, 0.5);
  EXPECT_THROW((void)bench::bench_shift(16, 2, 5, 8, 8, 9, 1), ConfigError);
}

}  // namespace
}  // namespace rcnet
