#pragma once

// Straightforward reference implementations used to cross-check the ops.
// Nothing here calls into rcnet::ops; each routine is written directly from
// the defining formula with plain loops.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rcnet/config.hpp"
#include "rcnet/tensor.hpp"

namespace rcnet::oracle {

/// Six nested loops over (n, co, oh, ow, ci, i, j).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
                     std::int64_t pad) {
  const auto N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Cout = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const auto OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor out = Tensor::zeros({N, Cout, OH, OW});
  auto o = out.mutable_data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          double acc = b.data()[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            for (std::int64_t i = 0; i < KH; ++i)
              for (std::int64_t j = 0; j < KW; ++j) {
                const auto ih = oh * stride + i - pad, iw = ow * stride + j - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w.at({co, ci, i, j}) * x.at({n, ci, ih, iw});
              }
          o[static_cast<std::size_t>(((n * Cout + co) * OH + oh) * OW + ow)] = acc;
        }
  return out;
}

inline Tensor maxpool2d(const Tensor& x, std::int64_t k, std::int64_t s) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto OH = (H - k) / s + 1, OW = (W - k) / s + 1;
  Tensor out = Tensor::zeros({N, C, OH, OW});
  auto o = out.mutable_data();
  std::size_t idx = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < OH; ++y)
        for (std::int64_t z = 0; z < OW; ++z) {
          double m = x.at({n, c, y * s, z * s});
          for (std::int64_t i = 0; i < k; ++i)
            for (std::int64_t j = 0; j < k; ++j) m = std::max(m, x.at({n, c, y * s + i, z * s + j}));
          o[idx++] = m;
        }
  return out;
}

/// Half-pixel bilinear sample position for output index o of a 2x upsample.
inline double upsample_source(std::int64_t o) { return std::max(0.0, (o + 0.5) / 2.0 - 0.5); }

/// Bilinear 2x upsample evaluated pixel by pixel from the interpolation formula.
inline Tensor bilinear_upsample_x2(const Tensor& x) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({N, C, 2 * H, 2 * W});
  auto o = out.mutable_data();
  std::size_t idx = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < 2 * H; ++y)
        for (std::int64_t z = 0; z < 2 * W; ++z) {
          const double sy = upsample_source(y), sz = upsample_source(z);
          const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(sy), H - 1);
          const auto z0 = std::min<std::int64_t>(static_cast<std::int64_t>(sz), W - 1);
          const auto y1 = std::min(y0 + 1, H - 1), z1 = std::min(z0 + 1, W - 1);
          const double fy = sy - static_cast<double>(y0), fz = sz - static_cast<double>(z0);
          o[idx++] = (1 - fy) * (1 - fz) * x.at({n, c, y0, z0}) + (1 - fy) * fz * x.at({n, c, y0, z1}) +
                     fy * (1 - fz) * x.at({n, c, y1, z0}) + fy * fz * x.at({n, c, y1, z1});
        }
  return out;
}

/// Mean over the last two axes of a rank-4 tensor.
inline Tensor global_avg_pool(const Tensor& x) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({N, C, 1, 1});
  auto o = out.mutable_data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) s += x.at({n, c, i, j});
      o[static_cast<std::size_t>(n * C + c)] = s / static_cast<double>(H * W);
    }
  return out;
}

/// Softmax over the trailing `inner` contiguous elements of each group.
inline std::vector<double> softmax_groups(std::span<const double> x, std::size_t inner) {
  std::vector<double> out(x.size());
  for (std::size_t g = 0; g < x.size(); g += inner) {
    double denom = 0.0;
    for (std::size_t i = 0; i < inner; ++i) denom += std::exp(x[g + i]);
    for (std::size_t i = 0; i < inner; ++i) out[g + i] = std::exp(x[g + i]) / denom;
  }
  return out;
}

/// Two-pass per-channel standardization over (N, spatial) for rank-4 input.
inline Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  for (std::int64_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) mean += x.at({n, c, i, j});
    mean /= static_cast<double>(N * H * W);
    double var = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) var += std::pow(x.at({n, c, i, j}) - mean, 2);
    var /= static_cast<double>(N * H * W);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
          o[static_cast<std::size_t>(((n * C + c) * H + i) * W + j)] =
              gamma.data()[static_cast<std::size_t>(c)] * (x.at({n, c, i, j}) - mean) / std::sqrt(var + eps) +
              beta.data()[static_cast<std::size_t>(c)];
  }
  return out;
}

/// Y_i = sum_{j=1..5} taps[j-1] * P_{(i + j - 3) mod n} along axis 2 of a
/// [N, C, n, h, w] stack, evaluated with explicit modular indexing.
inline Tensor circulant_scale_conv(const Tensor& p, const std::array<double, 5>& taps) {
  const auto N = p.dim(0), C = p.dim(1), n = p.dim(2), H = p.dim(3), W = p.dim(4);
  Tensor out = Tensor::zeros(p.shape());
  auto o = out.mutable_data();
  std::size_t idx = 0;
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t z = 0; z < W; ++z) {
            double acc = 0.0;
            for (std::int64_t j = 1; j <= 5; ++j) {
              std::int64_t src = (i + j - 3) % n;
              if (src < 0) src += n;
              acc += taps[static_cast<std::size_t>(j - 1)] * p.at({b, c, src, y, z});
            }
            o[idx++] = acc;
          }
  return out;
}

/// Rotates a [N, C, n, h, w] stack along the scale axis: out[s] = in[(s - t) mod n].
inline Tensor roll_scale(const Tensor& p, std::int64_t t) {
  const auto N = p.dim(0), C = p.dim(1), n = p.dim(2), HW = p.dim(3) * p.dim(4);
  Tensor out = Tensor::zeros(p.shape());
  auto o = out.mutable_data();
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < n; ++s) {
        const auto from = ((s - t) % n + n) % n;
        for (std::int64_t q = 0; q < HW; ++q)
          o[static_cast<std::size_t>(((b * C + c) * n + s) * HW + q)] =
              p.data()[static_cast<std::size_t>(((b * C + c) * n + from) * HW + q)];
      }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form parameter and MAC totals.
//
// Notation: d = pyramid width, c_i = input width of level i, A_i = N*H_i*W_i.
//   conv k x k, cin -> cout:  params cout*cin*k*k + cout,  MACs A*cout*cin*k*k
//   channel norm:             params 2*d,                  MACs 0

struct Totals {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

inline std::int64_t area(const NeckConfig& cfg, int level) {
  const auto r = cfg.resolution(level);
  return static_cast<std::int64_t>(cfg.batch) * r[0] * r[1];
}

/// C6 = conv3x3/2(C5), C7 = conv3x3/2(relu(C6)).
inline Totals stem_totals(const NeckConfig& cfg) {
  Totals t;
  const std::int64_t d = cfg.channels;
  for (int l = cfg.backbone_top() + 1; l <= cfg.l_max; ++l) {
    const std::int64_t cin = cfg.input_channels(l - 1);
    t.params += 9 * cin * d + d;
    t.macs += area(cfg, l) * 9 * cin * d;
  }
  return t;
}

/// Per level: lateral (c_i d + d) and output (9 d^2 + d).
inline Totals fpn_totals(const NeckConfig& cfg) {
  Totals t;
  const std::int64_t d = cfg.channels;
  for (int l = cfg.l_min; l <= cfg.l_max; ++l) {
    const std::int64_t c = cfg.input_channels(l);
    t.params += (c * d + d) + (9 * d * d + d);
    t.macs += area(cfg, l) * (c * d + 9 * d * d);
  }
  return t;
}

/// Lateral at every level. Levels below the top: FGU conv (18 d + 1) +
/// temperature (1) and a pre-fusion step. Levels above the bottom: a
/// post-fusion step. Fusion step = head (2d + 1) + conv (9 d^2 + d) + norm (2d).
inline Totals revfp_totals(const NeckConfig& cfg) {
  Totals t;
  const std::int64_t d = cfg.channels;
  const std::int64_t step_params = (2 * d + 1) + (9 * d * d + d) + 2 * d;
  for (int l = cfg.l_min; l <= cfg.l_max; ++l) {
    const std::int64_t c = cfg.input_channels(l);
    const std::int64_t a = area(cfg, l);
    t.params += c * d + d;
    t.macs += a * c * d;
    const std::int64_t fusion_macs = 2 * d * static_cast<std::int64_t>(cfg.batch) + a * 9 * d * d;
    if (l < cfg.l_max) {
      t.params += (18 * d + 1) + 1 + step_params;
      t.macs += a * 18 * d + fusion_macs;
    }
    if (l > cfg.l_min) {
      t.params += step_params;
      t.macs += fusion_macs;
    }
  }
  return t;
}

/// Aggregation: reduce ((d + d/r) d + d), norm (2d), expand (d^2 + d).
/// Context: four d -> d pointwise convs (d^2 + d each).
/// The scale shift contributes nothing.
inline Totals csn_totals(const NeckConfig& cfg) {
  Totals t;
  const std::int64_t d = cfg.channels;
  const std::int64_t wide = d + d / cfg.shift_ratio;
  const std::int64_t n = cfg.num_levels();
  const std::int64_t hw = area(cfg, cfg.reference_level) / cfg.batch;
  const std::int64_t N = cfg.batch;
  t.params = (wide * d + d) + 2 * d + (d * d + d) + 4 * (d * d + d);
  // reduce + expand over N*n*hw positions; scale_mid and spatial_out over
  // N*n pooled positions; scale_out and spatial_mid over N*hw positions.
  t.macs = N * n * hw * (wide * d + d * d) + 2 * N * n * d * d + 2 * N * hw * d * d;
  return t;
}

}  // namespace rcnet::oracle
