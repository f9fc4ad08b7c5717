#pragma once

#include <string>

#include "rcnet/config.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/params.hpp"
#include "rcnet/pyramid.hpp"
#include "rcnet/rng.hpp"

namespace rcnet::fixtures {

/// Standard-normal stand-ins for backbone stages l_min..backbone_top().
/// Values are drawn level by level, row-major, from Rng(cfg.seed).
inline FeaturePyramid synth_backbone(const NeckConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  FeaturePyramid pyr;
  for (int level = cfg.l_min; level <= cfg.backbone_top(); ++level) {
    const auto [h, w] = cfg.resolution(level);
    Tensor t = Tensor::zeros({cfg.batch, cfg.input_channels(level), h, w});
    for (auto& v : t.mutable_data()) v = rng.normal();
    pyr.set(level, std::move(t));
  }
  return pyr;
}

/// Stride-2 3x3 convs producing C6 from C5 and C7 from relu(C6).
struct StemParams {
  std::map<int, ConvParams> convs;  // keyed by produced level

  static StemParams make(ParamStore& store, const NeckConfig& cfg) {
    StemParams p;
    for (int level = cfg.backbone_top() + 1; level <= cfg.l_max; ++level) {
      const int cin = cfg.input_channels(level - 1);
      p.convs[level] = ConvParams::make(store, "stem/c" + std::to_string(level), cin,
                                        cfg.channels, 3);
    }
    return p;
  }
};

inline FeaturePyramid extend_stem(const FeaturePyramid& c, const StemParams& p) {
  if (p.convs.empty()) return c;
  if (c.max_level() != 5) throw ShapeError("extend_stem: highest input level must be 5");
  FeaturePyramid out = c;
  CountScope scope("stem");
  for (const auto& [level, conv] : p.convs) {
    if (c.contains(level))
      throw ShapeError("extend_stem: level " + std::to_string(level) + " already present");
    if (level != 6 && level != 7) throw ShapeError("extend_stem: can only add levels 6 and 7");
    CountScope lvl("c" + std::to_string(level));
    Tensor src = out.at(level - 1);
    if (level == 7) src = ops::relu(src);
    out.set(level, ops::conv2d(src, conv.weight, conv.bias, 2, 1));
  }
  return out;
}

/// Backbone fixture plus stem extension: the input pyramid of every neck.
inline FeaturePyramid make_inputs(const NeckConfig& cfg, const StemParams& stem) {
  return extend_stem(synth_backbone(cfg), stem);
}

}  // namespace rcnet::fixtures
