#pragma once

#include <cmath>
#include <map>
#include <string>

#include "rcnet/config.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/params.hpp"
#include "rcnet/pyramid.hpp"

namespace rcnet::revfp {

inline constexpr double kNormEps = 1e-5;

/// Spatial-logit conv over concat(C_i, up(C_{i+1})) and its temperature.
struct FguParams {
  ConvParams conv;     // 3x3, 2d -> 1
  Tensor temperature;  // [1], starts at 1
};

/// One weighted fusion step: sigmoid weight head on pooled features,
/// then 3x3 conv + channel norm on the blend.
struct FusionParams {
  ConvParams head;  // 1x1, 2d -> 1
  ConvParams conv;  // 3x3, d -> d
  NormParams norm;
};

struct RevfpParams {
  std::map<int, ConvParams> lateral;  // every level, stage channels -> d
  std::map<int, FguParams> fgu;       // keyed by the lower level of each pair
  std::map<int, FusionParams> pre;    // l_min .. l_max-1
  std::map<int, FusionParams> post;   // l_min+1 .. l_max

  static RevfpParams make(ParamStore& store, const std::map<int, int>& in_channels, int d) {
    RevfpParams p;
    const int lo = in_channels.begin()->first;
    const int hi = in_channels.rbegin()->first;
    for (const auto& [level, cin] : in_channels) {
      const std::string base = "revfp/l" + std::to_string(level);
      p.lateral[level] = ConvParams::make(store, base + "/lateral", cin, d, 1);
      if (level < hi) {
        p.fgu[level] = {ConvParams::make(store, base + "/fgu/conv", 2 * d, 1, 3),
                        store.add(base + "/fgu/temperature", {1}, init::Constant{1.0})};
        p.pre[level] = make_step(store, base + "/pre", d);
      }
      if (level > lo) p.post[level] = make_step(store, base + "/post", d);
    }
    return p;
  }

  static RevfpParams make(ParamStore& store, const NeckConfig& cfg) {
    std::map<int, int> ch;
    for (int l = cfg.l_min; l <= cfg.l_max; ++l) ch[l] = cfg.input_channels(l);
    return make(store, ch, cfg.channels);
  }

 private:
  static FusionParams make_step(ParamStore& store, const std::string& base, int d) {
    return {ConvParams::make(store, base + "/head", 2 * d, 1, 1),
            ConvParams::make(store, base + "/conv", d, d, 3), NormParams::make(store, base + "/norm", d)};
  }
};

struct FguResult {
  Tensor upsampled;  // bilinear 2x of the coarse map
  Tensor weights;    // [N,1,H,W], spatial mean exactly 1
  Tensor output;     // upsampled * weights
};

/// Feature-guided upsampling of `coarse` (level i+1) under the guidance of
/// `fine` (level i). Logits are scaled by T / sqrt(d) and the softmax over
/// all H*W positions is multiplied by H*W.
inline FguResult feature_guided_upsample(const Tensor& fine, const Tensor& coarse,
                                         const FguParams& p) {
  if (fine.rank() != 4 || coarse.rank() != 4 || fine.dim(0) != coarse.dim(0) ||
      fine.dim(1) != coarse.dim(1) || fine.dim(2) != 2 * coarse.dim(2) ||
      fine.dim(3) != 2 * coarse.dim(3))
    throw ShapeError("feature_guided_upsample: " + to_string(coarse.shape()) +
                     " is not half the resolution of " + to_string(fine.shape()));
  CountScope scope("fgu");
  FguResult r;
  r.upsampled = ops::bilinear_upsample_x2(coarse);
  Tensor logits = ops::conv2d(ops::concat({fine, r.upsampled}, 1), p.conv.weight, p.conv.bias, 1, 1);
  logits = ops::scale(ops::mul(logits, p.temperature),
                      1.0 / std::sqrt(static_cast<double>(fine.dim(1))));
  const double positions = static_cast<double>(fine.dim(2) * fine.dim(3));
  r.weights = ops::scale(ops::softmax(logits, {2, 3}), positions);
  r.output = ops::mul(r.upsampled, r.weights);
  return r;
}

/// sigmoid(conv1x1(gap(concat(a, b)))): one scalar in (0,1) per sample,
/// shape [N,1,1,1]. It weighs `a`; `b` gets the complement.
inline Tensor dynamic_weight(const Tensor& a, const Tensor& b, const ConvParams& head) {
  if (a.shape() != b.shape())
    throw ShapeError("dynamic_weight: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  CountScope scope("weight");
  Tensor pooled = ops::global_avg_pool(ops::concat({a, b}, 1));
  return ops::sigmoid(ops::conv2d(pooled, head.weight, head.bias));
}

struct FuseResult {
  Tensor weight;  // [N,1,1,1]
  Tensor blend;   // convex combination before the conv
  Tensor output;
};

/// weight * current + (1 - weight) * other, then conv3x3 + channel norm.
inline FuseResult weighted_fuse(const Tensor& current, const Tensor& other, const FusionParams& p) {
  if (current.shape() != other.shape())
    throw ShapeError("weighted fusion: " + to_string(current.shape()) + " vs " +
                     to_string(other.shape()));
  FuseResult r;
  r.weight = dynamic_weight(current, other, p.head);
  r.blend = ops::convex_blend(r.weight, current, other);
  Tensor conv = ops::conv2d(r.blend, p.conv.weight, p.conv.bias, 1, 1);
  r.output = ops::channel_norm(conv, p.norm.gamma, p.norm.beta, kNormEps);
  return r;
}

/// Pre-fusion of a level with its guided upper neighbour.
inline FuseResult pre_fuse(const Tensor& lateral, const Tensor& guided, const FusionParams& p) {
  CountScope scope("pre");
  return weighted_fuse(lateral, guided, p);
}

/// Post-fusion of P'_i with the max-pooled previous output P_{i-1}.
inline FuseResult post_fuse(const Tensor& pre_out, const Tensor& prev_out, const FusionParams& p,
                            Tensor* downsampled = nullptr) {
  if (prev_out.rank() != 4 || prev_out.dim(2) != 2 * pre_out.dim(2) ||
      prev_out.dim(3) != 2 * pre_out.dim(3))
    throw ShapeError("post_fuse: previous output " + to_string(prev_out.shape()) +
                     " is not twice the resolution of " + to_string(pre_out.shape()));
  CountScope scope("post");
  Tensor down = ops::maxpool2d(prev_out, 2, 2);
  if (downsampled) *downsampled = down;
  return weighted_fuse(pre_out, down, p);
}

/// Intermediates of one forward pass, keyed by level.
struct RevfpTrace {
  std::map<int, Tensor> lateral;
  std::map<int, FguResult> fgu;
  std::map<int, FuseResult> pre;
  std::map<int, Tensor> pre_out;  // P'_i
  std::map<int, Tensor> downsampled;
  std::map<int, FuseResult> post;
};

/// Single bottom-up pass. For each level i (ascending): lateral projection,
/// FGU on (C_i, C_{i+1}) and pre-fusion for i < l_max (P'_{l_max} is the
/// lateral itself), then post-fusion with P_{i-1} for i > l_min
/// (P_{l_min} is P'_{l_min}).
inline FeaturePyramid revfp_forward(const FeaturePyramid& c, const RevfpParams& p,
                                    RevfpTrace* trace = nullptr) {
  c.validate();
  const int lo = c.min_level();
  const int hi = c.max_level();
  for (int l = lo; l <= hi; ++l) {
    if (!p.lateral.contains(l)) throw ShapeError("revfp_forward: no lateral for level " + std::to_string(l));
    if (l < hi && (!p.fgu.contains(l) || !p.pre.contains(l)))
      throw ShapeError("revfp_forward: no pre-fusion parameters for level " + std::to_string(l));
    if (l > lo && !p.post.contains(l))
      throw ShapeError("revfp_forward: no post-fusion parameters for level " + std::to_string(l));
  }
  CountScope scope("revfp");

  std::map<int, Tensor> lateral;
  for (int l = lo; l <= hi; ++l) {
    CountScope lvl("l" + std::to_string(l));
    CountScope lat("lateral");
    const auto& cp = p.lateral.at(l);
    lateral[l] = ops::conv2d(c.at(l), cp.weight, cp.bias);
  }

  FeaturePyramid out;
  for (int l = lo; l <= hi; ++l) {
    CountScope lvl("l" + std::to_string(l));
    Tensor pre_out = lateral[l];
    if (l < hi) {
      FguResult g = feature_guided_upsample(lateral[l], lateral[l + 1], p.fgu.at(l));
      FuseResult f = pre_fuse(lateral[l], g.output, p.pre.at(l));
      pre_out = f.output;
      if (trace) {
        trace->fgu[l] = g;
        trace->pre[l] = f;
      }
    }
    Tensor result = pre_out;
    if (l > lo) {
      Tensor down;
      FuseResult f = post_fuse(pre_out, out.at(l - 1), p.post.at(l), &down);
      result = f.output;
      if (trace) {
        trace->downsampled[l] = down;
        trace->post[l] = f;
      }
    }
    if (trace) {
      trace->lateral[l] = lateral[l];
      trace->pre_out[l] = pre_out;
    }
    out.set(l, result);
  }
  return out;
}

}  // namespace rcnet::revfp
