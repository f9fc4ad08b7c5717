#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "rcnet/config.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/params.hpp"
#include "rcnet/pyramid.hpp"

namespace rcnet::csn {

inline constexpr double kNormEps = 1e-5;

/// Channel partition of the scale shift. Shifted channels come first:
/// block j = [j*q, (j+1)*q) reads from scale (s + kOffsets[j]) mod n.
/// The remaining channels stay in place (offset 0).
struct ShiftPlan {
  static constexpr std::array<int, 4> kOffsets{-2, -1, 1, 2};

  std::int64_t per_offset = 0;  // q

  /// d/r shifted channels split evenly over the four offsets.
  static ShiftPlan from_ratio(std::int64_t channels, std::int64_t ratio) {
    if (ratio <= 0 || channels % (4 * ratio) != 0)
      throw ShapeError("shift plan: channels " + std::to_string(channels) +
                       " not divisible by 4*r = " + std::to_string(4 * ratio));
    return {channels / (4 * ratio)};
  }

  /// No shifted channels (the r -> infinity limit).
  static ShiftPlan none() { return {0}; }

  std::int64_t shifted_channels() const { return 4 * per_offset; }

  /// Offset of channel c, or 0 if c is static.
  int offset_of(std::int64_t c) const {
    if (c >= shifted_channels()) return 0;
    return kOffsets[static_cast<std::size_t>(c / per_offset)];
  }
};

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

/// Moves a [N,C,H,W] map from `from` level resolution to `to` level
/// resolution: 2x2 max pooling per step down, bilinear 2x per step up.
inline Tensor resize_level(const Tensor& x, int from, int to) {
  Tensor t = x;
  for (int l = from; l < to; ++l) t = ops::maxpool2d(t, 2, 2);
  for (int l = from; l > to; --l) t = ops::bilinear_upsample_x2(t);
  return t;
}

/// Stacks every level at reference-level resolution: [N, d, n, h_k, w_k],
/// scale index s = level - l_min.
inline Tensor gather_to_reference(const FeaturePyramid& p, int k) {
  p.validate();
  if (k < p.min_level() || k > p.max_level())
    throw ShapeError("gather_to_reference: reference level " + std::to_string(k) +
                     " outside pyramid [" + std::to_string(p.min_level()) + "," +
                     std::to_string(p.max_level()) + "]");
  CountScope scope("gather");
  std::vector<Tensor> slices;
  for (const auto& [level, t] : p) {
    if (t.dim(1) != p.at(k).dim(1))
      throw ShapeError("gather_to_reference: level " + std::to_string(level) + " channel width differs");
    Tensor r = resize_level(t, level, k);
    slices.push_back(ops::reshape(r, {r.dim(0), r.dim(1), 1, r.dim(2), r.dim(3)}));
  }
  return ops::concat(slices, 2);
}

/// Zero-arithmetic circulant shift along the scale axis. Output is
/// concat(S, shifted blocks) on the channel axis: [N, d + d/r, n, h, w].
inline Tensor scale_shift(const Tensor& s, const ShiftPlan& plan) {
  if (s.rank() != 5) throw ShapeError("scale_shift: stack must be [N,d,n,h,w]");
  const auto N = s.dim(0), C = s.dim(1), n = s.dim(2), HW = s.dim(3) * s.dim(4);
  const auto q = plan.per_offset;
  const auto extra = plan.shifted_channels();
  if (extra > C)
    throw ShapeError("scale_shift: plan shifts " + std::to_string(extra) + " of " +
                     std::to_string(C) + " channels");
  const auto Cout = C + extra;
  // Source flat index for every output element.
  std::vector<std::size_t> src(static_cast<std::size_t>(N * Cout * n * HW));
  std::size_t o = 0;
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t c = 0; c < Cout; ++c) {
      const std::int64_t from_c = c < C ? c : c - C;
      const int off = c < C ? 0 : ShiftPlan::kOffsets[static_cast<std::size_t>((c - C) / q)];
      for (std::int64_t sc = 0; sc < n; ++sc) {
        const auto from_s = wrap(static_cast<int>(sc) + off, static_cast<int>(n));
        const auto base = static_cast<std::size_t>(((b * C + from_c) * n + from_s) * HW);
        for (std::int64_t p = 0; p < HW; ++p) src[o++] = base + static_cast<std::size_t>(p);
      }
    }
  std::vector<double> out(src.size());
  const auto sd = s.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sd[src[i]];
  Shape shape{N, Cout, n, s.dim(3), s.dim(4)};
  return rcnet::detail::make_result("scale_shift", shape, std::move(out), {s}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) rcnet::detail::accumulate(s, src[i], g[i]);
    };
  });
}

struct ShiftAggregateParams {
  ConvParams reduce;  // pointwise, d + d/r -> d
  NormParams norm;
  ConvParams expand;  // pointwise, d -> d; zero at init
};

/// reduce -> channel norm -> relu -> expand, applied per scale slice, plus
/// the residual stack (the first d channels of `shifted`).
inline Tensor shift_aggregate(const Tensor& shifted, const ShiftAggregateParams& p) {
  const auto d = p.expand.weight.dim(0);
  if (shifted.rank() != 5 || shifted.dim(1) != p.reduce.weight.dim(1))
    throw ShapeError("shift_aggregate: expected " + std::to_string(p.reduce.weight.dim(1)) +
                     " channels, got " + to_string(shifted.shape()));
  CountScope scope("aggregate");
  Tensor residual = ops::slice(shifted, 1, 0, d);
  Tensor h = ops::pointwise_conv(shifted, p.reduce.weight, p.reduce.bias);
  h = ops::relu(ops::channel_norm(h, p.norm.gamma, p.norm.beta, kNormEps));
  h = ops::pointwise_conv(h, p.expand.weight, p.expand.bias);
  return ops::add(residual, h);
}

struct DualContextParams {
  ConvParams scale_mid;     // channel context per scale
  ConvParams scale_out;     // zero at init
  ConvParams spatial_mid;   // channel context per position
  ConvParams spatial_out;   // zero at init
};

struct DualContextTrace {
  Tensor scale_weights;    // [N,d,n,1,1], mean over scale = 1
  Tensor spatial_weights;  // [N,d,1,h,w], mean over space = 1
  Tensor scale_context;    // [N,d,1,h,w]
  Tensor spatial_context;  // [N,d,n,1,1]
};

/// Y + scale-branch context + spatial-branch context.
///
/// Scale branch: spatial mean -> 1x1 -> n*softmax over scales -> reweight Y
/// -> scale mean -> 1x1 (broadcast over scales).
/// Spatial branch: scale mean -> 1x1 -> (h*w)*softmax over positions ->
/// reweight Y -> spatial mean -> 1x1 (broadcast over positions).
inline Tensor dual_global_context(const Tensor& y, const DualContextParams& p,
                                  DualContextTrace* trace = nullptr) {
  if (y.rank() != 5 || y.dim(1) != p.scale_mid.weight.dim(1))
    throw ShapeError("dual_global_context: bad stack " + to_string(y.shape()));
  CountScope scope("context");
  const double n = static_cast<double>(y.dim(2));
  const double hw = static_cast<double>(y.dim(3) * y.dim(4));

  Tensor scale_ctx, spatial_ctx, a, b;
  {
    CountScope branch("scale");
    Tensor v = ops::pointwise_conv(ops::mean(y, {3, 4}), p.scale_mid.weight, p.scale_mid.bias);
    a = ops::scale(ops::softmax(v, {2}), n);
    Tensor z = ops::mean(ops::mul(y, a), {2});
    scale_ctx = ops::pointwise_conv(z, p.scale_out.weight, p.scale_out.bias);
  }
  {
    CountScope branch("spatial");
    Tensor v = ops::pointwise_conv(ops::mean(y, {2}), p.spatial_mid.weight, p.spatial_mid.bias);
    b = ops::scale(ops::softmax(v, {3, 4}), hw);
    Tensor z = ops::mean(ops::mul(y, b), {3, 4});
    spatial_ctx = ops::pointwise_conv(z, p.spatial_out.weight, p.spatial_out.bias);
  }
  if (trace) *trace = {a, b, scale_ctx, spatial_ctx};
  return ops::add(ops::add(y, scale_ctx), spatial_ctx);
}

/// Splits the stack back into levels, resizes each slice to its level
/// (bilinear up below k, max-pool down above k) and adds it to P.
inline FeaturePyramid scatter_and_combine(const Tensor& yc, const FeaturePyramid& p, int k) {
  p.validate();
  if (yc.rank() != 5 || yc.dim(2) != static_cast<std::int64_t>(p.size()))
    throw ShapeError("scatter_and_combine: stack has " + std::to_string(yc.rank() == 5 ? yc.dim(2) : 0) +
                     " scales for " + std::to_string(p.size()) + " levels");
  CountScope scope("scatter");
  FeaturePyramid out;
  for (const auto& [level, t] : p) {
    const auto s = level - p.min_level();
    Tensor slice = ops::slice(yc, 2, s, 1);
    slice = ops::reshape(slice, {yc.dim(0), yc.dim(1), yc.dim(3), yc.dim(4)});
    slice = resize_level(slice, k, level);
    if (slice.shape() != t.shape())
      throw ShapeError("scatter_and_combine: level " + std::to_string(level) + " resized to " +
                       to_string(slice.shape()) + ", expected " + to_string(t.shape()));
    out.set(level, ops::add(t, slice));
  }
  return out;
}

struct CsnParams {
  int reference_level = 4;
  ShiftPlan plan;
  ShiftAggregateParams aggregate;
  DualContextParams context;

  /// With `zero_init`, the expand conv and both context output projections
  /// start at zero so the module is an identity on the stack.
  static CsnParams make(ParamStore& store, std::int64_t d, std::int64_t ratio, int k,
                        bool zero_init = true) {
    CsnParams p;
    p.reference_level = k;
    p.plan = ShiftPlan::from_ratio(d, ratio);
    const auto wide = d + p.plan.shifted_channels();
    p.aggregate = {ConvParams::make(store, "csn/aggregate/reduce", wide, d, 0),
                   NormParams::make(store, "csn/aggregate/norm", d),
                   ConvParams::make(store, "csn/aggregate/expand", d, d, 0, zero_init)};
    p.context = {ConvParams::make(store, "csn/context/scale_mid", d, d, 0),
                 ConvParams::make(store, "csn/context/scale_out", d, d, 0, zero_init),
                 ConvParams::make(store, "csn/context/spatial_mid", d, d, 0),
                 ConvParams::make(store, "csn/context/spatial_out", d, d, 0, zero_init)};
    return p;
  }

  static CsnParams make(ParamStore& store, const NeckConfig& cfg, bool zero_init = true) {
    return make(store, cfg.channels, cfg.shift_ratio, cfg.reference_level, zero_init);
  }
};

struct CsnTrace {
  Tensor stack;
  Tensor shifted;
  Tensor aggregated;
  Tensor context;
  DualContextTrace dual;
};

/// gather -> scale_shift -> shift_aggregate -> dual_global_context ->
/// scatter_and_combine.
inline FeaturePyramid csn_forward(const FeaturePyramid& p, const CsnParams& params,
                                  CsnTrace* trace = nullptr) {
  CountScope scope("csn");
  Tensor stack = gather_to_reference(p, params.reference_level);
  Tensor shifted;
  {
    CountScope s("shift");
    shifted = scale_shift(stack, params.plan);
  }
  Tensor agg = shift_aggregate(shifted, params.aggregate);
  DualContextTrace dual;
  Tensor ctx = dual_global_context(agg, params.context, &dual);
  if (trace) *trace = {stack, shifted, agg, ctx, dual};
  return scatter_and_combine(ctx, p, params.reference_level);
}

/// Scalar-weight reduction of shift + aggregation: taps[j] weighs the copy
/// of X shifted by offset j - 2 along the scale axis. X [N, q, n, h, w] is
/// tiled to d = 4q channels, shifted with r = 1 so every channel group sees
/// all four offsets, and reduced by a pointwise conv whose weights are the
/// taps. Equals a kernel-5 circulant convolution along the scale axis.
inline Tensor scalar_shift_sum(const Tensor& x, const std::array<double, 5>& taps) {
  if (x.rank() != 5) throw ShapeError("scalar_shift_sum: stack must be [N,q,n,h,w]");
  const auto q = x.dim(1);
  const auto d = 4 * q;
  Tensor tiled = ops::concat({x, x, x, x}, 1);
  Tensor shifted = scale_shift(tiled, ShiftPlan::from_ratio(d, 1));
  Tensor w = Tensor::zeros({q, 2 * d});
  auto wd = w.mutable_data();
  for (std::int64_t m = 0; m < q; ++m) {
    wd[static_cast<std::size_t>(m * 2 * d + m)] = taps[2];
    for (std::size_t j = 0; j < ShiftPlan::kOffsets.size(); ++j) {
      const auto col = d + static_cast<std::int64_t>(j) * q + m;
      wd[static_cast<std::size_t>(m * 2 * d + col)] =
          taps[static_cast<std::size_t>(ShiftPlan::kOffsets[j] + 2)];
    }
  }
  return ops::pointwise_conv(shifted, w, Tensor::zeros({q}));
}

// ---------------------------------------------------------------------------
// Dense reference path

/// Dense kernel-5 convolution along the scale axis with circulant padding 2:
/// out[b,co,s] = bias-free sum_ci sum_t w[co,ci,t] * S[b,ci,(s+t-2) mod n].
/// Not differentiable; it exists to be compared and timed against
/// scale_shift.
inline Tensor dense_scale_conv(const Tensor& s, const Tensor& w) {
  if (s.rank() != 5 || w.rank() != 3 || w.dim(1) != s.dim(1) || w.dim(2) != 5)
    throw ShapeError("dense_scale_conv: weight must be [Cout, Cin, 5]");
  const auto N = s.dim(0), Cin = s.dim(1), n = s.dim(2), HW = s.dim(3) * s.dim(4);
  const auto Cout = w.dim(0);
  std::vector<double> out(static_cast<std::size_t>(N * Cout * n * HW), 0.0);
  const auto sd = s.data();
  const auto wd = w.data();
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t sc = 0; sc < n; ++sc) {
        double* o = out.data() + ((b * Cout + co) * n + sc) * HW;
        for (std::int64_t ci = 0; ci < Cin; ++ci)
          for (int t = 0; t < 5; ++t) {
            const double wv = wd[(co * Cin + ci) * 5 + t];
            const auto from = wrap(static_cast<int>(sc) + t - 2, static_cast<int>(n));
            const double* in = sd.data() + ((b * Cin + ci) * n + from) * HW;
            for (std::int64_t p = 0; p < HW; ++p) o[p] += wv * in[p];
          }
      }
  record_op("dense_scale_conv", 0, N * Cout * n * HW * Cin * 5);
  return Tensor({N, Cout, n, s.dim(3), s.dim(4)}, std::move(out));
}

/// One-hot kernel that makes dense_scale_conv reproduce scale_shift.
inline Tensor routing_weights(const ShiftPlan& plan, std::int64_t channels) {
  const auto cout = channels + plan.shifted_channels();
  Tensor w = Tensor::zeros({cout, channels, 5});
  auto d = w.mutable_data();
  for (std::int64_t co = 0; co < cout; ++co) {
    const std::int64_t ci = co < channels ? co : co - channels;
    const int off = co < channels ? 0 : plan.offset_of(co - channels);
    d[static_cast<std::size_t>((co * channels + ci) * 5 + off + 2)] = 1.0;
  }
  return w;
}

}  // namespace rcnet::csn
