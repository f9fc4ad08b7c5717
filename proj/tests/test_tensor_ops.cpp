#include <cmath>

#include "test_util.hpp"

namespace rcnet {
namespace {

using test::from;
using test::randn;

TEST(Conv2d, IdentityKernelReturnsInput) {
  Tensor x = randn({1, 3, 4, 5}, 1);
  Tensor w = Tensor::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.mutable_data()[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  EXPECT_TRUE(bitwise_equal(ops::conv2d(x, w, Tensor::zeros({3})), x));
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  Tensor y = ops::conv2d(Tensor::full({1, 1, 4, 4}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 1);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0);
  EXPECT_EQ(y.at({0, 0, 3, 3}), 4.0);
  EXPECT_EQ(y.at({0, 0, 0, 1}), 6.0);
  EXPECT_EQ(y.at({0, 0, 1, 1}), 9.0);
  EXPECT_EQ(y.at({0, 0, 2, 2}), 9.0);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Tensor x = randn({1, 2, 5, 5}, 2), w = randn({3, 2, 3, 3}, 3), b = randn({3}, 4);
  for (int stride : {1, 2})
    for (int pad : {0, 1})
      EXPECT_LE(max_abs_diff(ops::conv2d(x, w, b, stride, pad), oracle::conv2d(x, w, b, stride, pad)), 1e-12);
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  Tensor x = randn({1, 2, 5, 5}, 2);
  try {
    (void)ops::conv2d(x, Tensor::zeros({3, 4, 3, 3}), Tensor::zeros({3}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dim 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)ops::conv2d(x, Tensor::zeros({3, 2, 7, 7}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW((void)ops::conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(Upsample, PreservesConstants) {
  Tensor y = ops::bilinear_upsample_x2(Tensor::full({1, 2, 3, 2}, 2.5));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 2.5);
  Tensor one = ops::bilinear_upsample_x2(from({1, 1, 1, 1}, {-3.0}));
  for (double v : one.data()) EXPECT_EQ(v, -3.0);
}

TEST(Upsample, HalfPixelHandValues) {
  // Source coordinate of output o is max(0, (o + 0.5) / 2 - 0.5), clamped
  // at the far edge: rows/cols map to {0, 0.25, 0.75, 1}.
  Tensor y = ops::bilinear_upsample_x2(from({1, 1, 2, 2}, {1, 2, 3, 4}));
  const double expect[4][4] = {{1.0, 1.25, 1.75, 2.0},
                               {1.5, 1.75, 2.25, 2.5},
                               {2.5, 2.75, 3.25, 3.5},
                               {3.0, 3.25, 3.75, 4.0}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(y.at({0, 0, i, j}), expect[i][j], 1e-15);
  Tensor r = randn({2, 3, 3, 5}, 9);
  EXPECT_LE(max_abs_diff(ops::bilinear_upsample_x2(r), oracle::bilinear_upsample_x2(r)), 1e-12);
}

TEST(MaxPool, ValuesAndErrors) {
  EXPECT_EQ(ops::maxpool2d(from({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2).item(), 4.0);
  const Tensor pooled = ops::maxpool2d(Tensor::full({1, 2, 4, 4}, 7.0), 2, 2);
  for (double v : pooled.data()) EXPECT_EQ(v, 7.0);
  Tensor r = randn({1, 3, 8, 8}, 10);
  EXPECT_TRUE(bitwise_equal(ops::maxpool2d(r, 2, 2), oracle::maxpool2d(r, 2, 2)));
  EXPECT_THROW((void)ops::maxpool2d(randn({1, 1, 5, 4}, 1), 2, 2), ShapeError);
}

TEST(GlobalAvgPool, Values) {
  EXPECT_EQ(ops::global_avg_pool(from({1, 1, 2, 2}, {0, 2, 4, 6})).item(), 3.0);
  const Tensor flat = ops::global_avg_pool(Tensor::full({2, 2, 3, 3}, 1.5));
  for (double v : flat.data()) EXPECT_EQ(v, 1.5);
  Tensor r = randn({2, 4, 7, 5}, 11);
  EXPECT_LE(max_abs_diff(ops::global_avg_pool(r), oracle::global_avg_pool(r)), 1e-12);
}

TEST(Softmax, UniformAndOracle) {
  Tensor u = ops::softmax(Tensor::full({1, 1, 2, 3}, 0.7), {2, 3});
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
  Tensor r = randn({2, 3, 4, 5}, 12, 3.0);
  Tensor s = ops::softmax(r, {2, 3});
  const auto expect = oracle::softmax_groups(r.data(), 20);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(s.data()[i], expect[i], 1e-12);
  Tensor big = ops::softmax(from({1, 3}, {1000.0, 1000.0, -1000.0}), {1});
  EXPECT_NEAR(big.data()[0], 0.5, 1e-15);
}

TEST(Concat, ShapeArithmeticAndErrors) {
  Tensor c = ops::concat({randn({1, 2, 4, 4}, 1), randn({1, 3, 4, 4}, 2)}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_THROW((void)ops::concat({randn({1, 2, 4, 4}, 1), randn({1, 3, 4, 5}, 2)}, 1), ShapeError);
  EXPECT_THROW((void)ops::add(randn({2, 3}, 1), randn({2, 4}, 2)), ShapeError);
}

TEST(ChannelNorm, StandardisedInputIsNearlyUnchanged) {
  Tensor x = from({1, 1, 2, 2}, {1, -1, 1, -1});  // mean 0, variance 1
  Tensor y = ops::channel_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), 1e-5);
  EXPECT_LE(max_abs_diff(x, y), 1e-5);
}

TEST(ChannelNorm, MatchesTwoPassOracle) {
  Tensor x = randn({2, 3, 4, 4}, 13, 2.0), g = randn({3}, 14), b = randn({3}, 15);
  EXPECT_LE(max_abs_diff(ops::channel_norm(x, g, b, 1e-5), oracle::channel_norm(x, g, b, 1e-5)), 1e-10);
}

TEST(ChannelNorm, NeedsTwoValuesPerChannel) {
  EXPECT_THROW((void)ops::channel_norm(randn({1, 2, 1, 1}, 1), Tensor::full({2}, 1.0), Tensor::zeros({2})),
               ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = randn({2, 3}, 1);
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeGuard g(tape);
    loss = ops::sum(x);
  }
  backward(tape, loss);
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, HalfSquareGivesInput) {
  Tensor x = randn({4}, 2);
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeGuard g(tape);
    loss = ops::scale(ops::sum(ops::mul(x, x)), 0.5);
  }
  backward(tape, loss);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], x.data()[i], 1e-15);
}

TEST(Backward, ComposedGraphMatchesFiniteDifferences) {
  Tensor x = randn({1, 2, 4, 4}, 3), w = randn({2, 2, 3, 3}, 4), b = randn({2}, 5);
  gradcheck::RandomProjection proj(6);
  auto r = gradcheck::check("composed", [&] {
    Tensor h = ops::relu(ops::conv2d(x, w, b, 1, 1));
    return proj({ops::sigmoid(ops::bilinear_upsample_x2(ops::maxpool2d(h, 2, 2)))});
  }, {x, w, b});
  EXPECT_TRUE(r.pass) << r.max_error << " at " << r.worst;
}

TEST(Backward, Errors) {
  Tensor x = randn({3}, 1);
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss, vec;
  {
    TapeGuard g(tape);
    vec = ops::scale(x, 2.0);
    loss = ops::sum(vec);
  }
  EXPECT_THROW(backward(tape, vec), AutogradError);
  EXPECT_THROW(backward(tape, ops::sum(randn({3}, 2))), AutogradError);
  backward(tape, loss);
  EXPECT_THROW(backward(tape, loss), AutogradError);
  tape.reset();
  EXPECT_THROW(backward(tape, loss), AutogradError);
}

TEST(ConvexBlend, EndpointsAndEnvelope) {
  Tensor a = randn({2, 3, 2, 2}, 1), b = randn({2, 3, 2, 2}, 2);
  EXPECT_TRUE(bitwise_equal(ops::convex_blend(Tensor::full({2, 1, 1, 1}, 1.0), a, b), a));
  EXPECT_TRUE(bitwise_equal(ops::convex_blend(Tensor::zeros({2, 1, 1, 1}), a, b), b));
  Tensor m = ops::convex_blend(Tensor::full({2, 1, 1, 1}, 0.3), a, b);
  EXPECT_EQ(checks::envelope_violations(m, a, b), 0);
}

TEST(NonFinite, IsRejected) {
  EXPECT_THROW((void)ops::scale(Tensor::full({1}, 1e308), 10.0), NonFiniteError);
}

}  // namespace
}  // namespace rcnet
