#include "test_util.hpp"

namespace rcnet {
namespace {

class Fpn : public ::testing::Test {
 protected:
  checks::Fixture f = checks::make_fixture(test::small_config());
};

TEST_F(Fpn, OutputShapes) {
  const auto out = fpn::fpn_forward(f.inputs, f.params.fpn);
  for (int l = 3; l <= 7; ++l) {
    const auto r = f.cfg.resolution(l);
    EXPECT_EQ(out.at(l).shape(), (Shape{2, 8, r[0], r[1]}));
  }
}

TEST_F(Fpn, ZeroLateralsGiveOutputBias) {
  for (auto& [level, lat] : f.params.fpn.lateral) {
    for (auto& v : lat.weight.mutable_data()) v = 0.0;
    for (auto& v : lat.bias.mutable_data()) v = 0.0;
  }
  const auto out = fpn::fpn_forward(f.inputs, f.params.fpn);
  for (const auto& [level, t] : out) {
    const auto bias = f.params.fpn.output.at(level).bias.data();
    const auto hw = t.dim(2) * t.dim(3);
    for (std::int64_t i = 0; i < t.numel(); ++i)
      EXPECT_EQ(t.data()[static_cast<std::size_t>(i)], bias[static_cast<std::size_t>(i / hw % t.dim(1))]);
  }
}

TEST_F(Fpn, SingleLevelIsOutputOfLateral) {
  FeaturePyramid one;
  one.set(5, f.inputs.at(5));
  ParamStore store(1);
  auto p = fpn::FpnParams::make(store, {{5, 8}}, 8);
  const auto& lat = p.lateral.at(5);
  const auto& oc = p.output.at(5);
  Tensor expect = oracle::conv2d(oracle::conv2d(one.at(5), lat.weight, lat.bias, 1, 0), oc.weight, oc.bias, 1, 1);
  EXPECT_LE(max_abs_diff(fpn::fpn_forward(one, p).at(5), expect), 1e-12);
}

TEST_F(Fpn, TopIgnoresLowerLevels) {
  const auto base = fpn::fpn_forward(f.inputs, f.params.fpn);
  const auto out = fpn::fpn_forward(checks::perturb_level(f.inputs, 3, 99), f.params.fpn);
  EXPECT_TRUE(bitwise_equal(out.at(7), base.at(7)));
  EXPECT_FALSE(bitwise_equal(out.at(3), base.at(3)));
  EXPECT_TRUE(checks::fpn_unidirectional(f).pass);
}

TEST_F(Fpn, Errors) {
  FeaturePyramid gap = f.inputs;
  FeaturePyramid missing;
  for (const auto& [level, t] : f.inputs)
    if (level != 5) missing.set(level, t);
  EXPECT_THROW((void)fpn::fpn_forward(missing, f.params.fpn), ShapeError);
  gap.set(4, test::randn({2, 6, 7, 7}, 1));
  EXPECT_THROW((void)fpn::fpn_forward(gap, f.params.fpn), ShapeError);
}

}  // namespace
}  // namespace rcnet
