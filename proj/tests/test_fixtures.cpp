#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace rcnet {
namespace {

TEST(Config, DefaultsAreTheDeskConfig) {
  const NeckConfig cfg;
  EXPECT_EQ(cfg.batch, 1);
  EXPECT_EQ(cfg.channels, 64);
  EXPECT_EQ(cfg.l_min, 3);
  EXPECT_EQ(cfg.l_max, 7);
  EXPECT_EQ(cfg.shift_ratio, 4);
  EXPECT_EQ(cfg.reference_level, 4);
  EXPECT_NO_THROW(cfg.validate());
  const auto file = load_config(std::string(RCNET_SOURCE_DIR) + "/configs/desk.json");
  EXPECT_EQ(nlohmann::json(file), nlohmann::json(cfg));
}

TEST(Config, ValidationListsEveryViolation) {
  NeckConfig cfg;
  cfg.channels = 30;
  cfg.reference_level = 9;
  cfg.batch = 0;
  EXPECT_EQ(cfg.violations().size(), 3u);
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("channels"), std::string::npos);
    EXPECT_NE(msg.find("reference_level"), std::string::npos);
    EXPECT_NE(msg.find("batch"), std::string::npos);
  }
}

TEST(Config, UnknownFieldsAreRejected) {
  nlohmann::json j = NeckConfig{};
  j["width"] = 3;
  EXPECT_THROW((void)j.get<NeckConfig>(), ConfigError);
}

TEST(SynthBackbone, DeterministicPerSeed) {
  NeckConfig a = test::small_config(5), b = a;
  EXPECT_TRUE(bitwise_equal(fixtures::synth_backbone(a), fixtures::synth_backbone(b)));
  b.seed = 6;
  const auto pa = fixtures::synth_backbone(a), pb = fixtures::synth_backbone(b);
  EXPECT_GT(checks::max_abs_diff(pa, pb), 0.0);
}

TEST(SynthBackbone, StandardNormalMoments) {
  NeckConfig cfg;
  cfg.seed = 17;
  const auto p = fixtures::synth_backbone(cfg);
  double s = 0.0, s2 = 0.0;
  std::int64_t n = 0;
  for (const auto& [level, t] : p)
    for (double v : t.data()) {
      s += v;
      s2 += v * v;
      ++n;
    }
  const double mean = s / static_cast<double>(n);
  EXPECT_LT(std::abs(mean), 5.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(s2 / static_cast<double>(n), 1.0, 0.05);
  EXPECT_EQ(p.min_level(), 3);
  EXPECT_EQ(p.max_level(), 5);
  EXPECT_EQ(p.at(4).shape(), (Shape{1, 32, 32, 32}));
}

TEST(Stem, AddsTwoHalvedLevels) {
  const NeckConfig cfg;
  ParamStore store(cfg.seed);
  const auto stem = fixtures::StemParams::make(store, cfg);
  const auto c = fixtures::make_inputs(cfg, stem);
  EXPECT_EQ(c.at(6).shape(), (Shape{1, 64, 8, 8}));
  EXPECT_EQ(c.at(7).shape(), (Shape{1, 64, 4, 4}));
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW((void)fixtures::extend_stem(c, stem), ShapeError);
}

TEST(Stem, ZeroWeightsGiveBias) {
  const NeckConfig cfg = test::small_config();
  ParamStore store(cfg.seed);
  auto stem = fixtures::StemParams::make(store, cfg);
  for (auto& [level, conv] : stem.convs) {
    for (auto& v : conv.weight.mutable_data()) v = 0.0;
    for (auto& v : conv.bias.mutable_data()) v = 0.25 * level;
  }
  const auto c = fixtures::make_inputs(cfg, stem);
  for (int level : {6, 7})
    for (double v : c.at(level).data()) EXPECT_EQ(v, 0.25 * level);
}

TEST(Stem, MatchesConvOracle) {
  const NeckConfig cfg = test::small_config();
  ParamStore store(cfg.seed);
  const auto stem = fixtures::StemParams::make(store, cfg);
  const auto c = fixtures::make_inputs(cfg, stem);
  const auto& c6 = stem.convs.at(6);
  const auto& c7 = stem.convs.at(7);
  Tensor p6 = oracle::conv2d(c.at(5), c6.weight, c6.bias, 2, 1);
  Tensor r6 = p6.clone();
  for (auto& v : r6.mutable_data()) v = std::max(v, 0.0);
  Tensor p7 = oracle::conv2d(r6, c7.weight, c7.bias, 2, 1);
  EXPECT_LE(max_abs_diff(c.at(6), p6), 1e-12);
  EXPECT_LE(max_abs_diff(c.at(7), p7), 1e-12);
}

class Fpz : public ::testing::Test {
 protected:
  FeaturePyramid pyr = fixtures::synth_backbone(test::small_config());

  static fpz::ErrorKind kind_of(const std::string& bytes) {
    try {
      (void)fpz::decode(bytes);
    } catch (const fpz::FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "decode succeeded";
    return fpz::ErrorKind::Io;
  }

  static std::string with_header(const nlohmann::json& header, const std::string& blobs) {
    const std::string h = header.dump();
    std::string out = "FPZ1";
    const auto len = static_cast<std::uint32_t>(h.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
    return out + h + blobs;
  }
};

TEST_F(Fpz, FileRoundTripIsBitwise) {
  const auto path = (std::filesystem::temp_directory_path() / "rcnet_fixture_test.fpz").string();
  fpz::save_pyramid(path, pyr, {{"seed", 3}});
  const auto d = fpz::load_pyramid(path);
  EXPECT_TRUE(bitwise_equal(d.pyramid, pyr));
  EXPECT_EQ(d.header["seed"], 3);
  std::filesystem::remove(path);
}

TEST_F(Fpz, ErrorKindsAreDistinct) {
  const std::string good = fpz::encode(pyr);
  EXPECT_EQ(kind_of(good.substr(0, good.size() - 8)), fpz::ErrorKind::BlobLength);
  EXPECT_EQ(kind_of(good + "x"), fpz::ErrorKind::BlobLength);
  EXPECT_EQ(kind_of("FPZ2" + good.substr(4)), fpz::ErrorKind::BadMagic);
  EXPECT_EQ(kind_of(with_header(nlohmann::json::object(), "")), fpz::ErrorKind::MalformedHeader);
  EXPECT_EQ(kind_of(std::string("FPZ1\x05\0\0\0{\"a\":", 13)), fpz::ErrorKind::MalformedHeader);
  const auto decoded = fpz::decode(good);
  nlohmann::json header = decoded.header;
  header["shapes"][1][2] = 7;  // level 4 no longer half of level 3
  EXPECT_EQ(kind_of(with_header(header, good.substr(8 + decoded.header.dump().size()))),
            fpz::ErrorKind::ShapeMismatch);
  EXPECT_THROW((void)fpz::load_pyramid("/nonexistent/dir/x.fpz"), fpz::FormatError);
}

}  // namespace
}  // namespace rcnet
