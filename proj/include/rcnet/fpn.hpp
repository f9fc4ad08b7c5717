#pragma once

#include <map>
#include <string>

#include "rcnet/config.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/params.hpp"
#include "rcnet/pyramid.hpp"

namespace rcnet::fpn {

/// Lateral 1x1 (stage channels -> d) and output 3x3 (d -> d) per level.
struct FpnParams {
  std::map<int, ConvParams> lateral;
  std::map<int, ConvParams> output;

  /// `in_channels` maps each level to its input width.
  static FpnParams make(ParamStore& store, const std::map<int, int>& in_channels, int d) {
    FpnParams p;
    for (const auto& [level, cin] : in_channels) {
      const std::string base = "fpn/l" + std::to_string(level);
      p.lateral[level] = ConvParams::make(store, base + "/lateral", cin, d, 1);
      p.output[level] = ConvParams::make(store, base + "/output", d, d, 3);
    }
    return p;
  }

  static FpnParams make(ParamStore& store, const NeckConfig& cfg) {
    std::map<int, int> ch;
    for (int l = cfg.l_min; l <= cfg.l_max; ++l) ch[l] = cfg.input_channels(l);
    return make(store, ch, cfg.channels);
  }
};

/// Top-down pyramid: M_top = lateral(C_top), M_i = lateral(C_i) + up(M_{i+1}),
/// P_i = conv3x3(M_i). Levels are computed strictly from the top down.
inline FeaturePyramid fpn_forward(const FeaturePyramid& c, const FpnParams& p) {
  c.validate();
  CountScope scope("fpn");
  for (const auto& [level, _] : c)
    if (!p.lateral.contains(level) || !p.output.contains(level))
      throw ShapeError("fpn_forward: no parameters for level " + std::to_string(level));
  FeaturePyramid out;
  Tensor merged;
  for (int level = c.max_level(); level >= c.min_level(); --level) {
    CountScope lvl("l" + std::to_string(level));
    const auto& lat = p.lateral.at(level);
    Tensor inner = ops::conv2d(c.at(level), lat.weight, lat.bias);
    if (merged.defined()) inner = ops::add(inner, ops::bilinear_upsample_x2(merged));
    merged = inner;
    const auto& oc = p.output.at(level);
    out.set(level, ops::conv2d(inner, oc.weight, oc.bias, 1, 1));
  }
  return out;
}

}  // namespace rcnet::fpn
