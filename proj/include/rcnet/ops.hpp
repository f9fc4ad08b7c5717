#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rcnet/tensor.hpp"

namespace rcnet::ops {

namespace detail {

using rcnet::detail::accumulate;
using rcnet::detail::make_result;
using rcnet::detail::require;

inline std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const std::string& op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(op + ": cannot broadcast " + to_string(a) + " with " + to_string(b) +
                       " (dim " + std::to_string(i) + ")");
    out[i] = std::max(ea, eb);
  }
  return out;
}

/// For every element of `out` (row-major), the flat index of the source
/// element in a tensor of shape `in` broadcast to `out`.
inline std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  const auto in_strides = strides_of(in);
  std::vector<std::int64_t> stride(rank, 0);
  for (std::size_t a = lead; a < rank; ++a)
    stride[a] = in[a - lead] == 1 ? 0 : in_strides[a - lead];

  std::vector<std::size_t> offsets(static_cast<std::size_t>(numel(out)));
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t off = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    offsets[i] = static_cast<std::size_t>(off);
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < out[a]) {
        off += stride[a];
        break;
      }
      off -= stride[a] * (out[a] - 1);
      idx[a] = 0;
    }
  }
  return offsets;
}

/// Flat offsets of every index combination over the axes selected by `pick`,
/// in row-major order of those axes.
inline std::vector<std::size_t> axis_offsets(const Shape& shape, const std::vector<bool>& pick) {
  const auto strides = strides_of(shape);
  std::vector<std::size_t> offs{0};
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (!pick[a]) continue;
    std::vector<std::size_t> next;
    next.reserve(offs.size() * static_cast<std::size_t>(shape[a]));
    for (auto o : offs)
      for (std::int64_t i = 0; i < shape[a]; ++i)
        next.push_back(o + static_cast<std::size_t>(i * strides[a]));
    offs = std::move(next);
  }
  return offs;
}

inline std::vector<bool> axis_mask(const Shape& shape, std::span<const std::size_t> axes,
                                   const std::string& op) {
  require(!axes.empty(), op + ": axis set must be non-empty");
  std::vector<bool> mask(shape.size(), false);
  for (auto a : axes) {
    require(a < shape.size(), op + ": axis " + std::to_string(a) + " out of range for " +
                                  to_string(shape));
    require(!mask[a], op + ": duplicate axis " + std::to_string(a));
    mask[a] = true;
  }
  return mask;
}

template <class F, class DF>
Tensor unary(const std::string& op, const Tensor& x, F f, DF df) {
  std::vector<double> out(x.data().size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result(op, x.shape(), std::move(out), {x}, 0, [x, df](const auto& self) {
    std::weak_ptr<TensorImpl> weak = self;
    return [x, df, weak](std::span<const double> g) {
      auto y = weak.lock();
      auto xd = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(x, i, g[i] * df(xd[i], y->data[i]));
    };
  });
}

template <class F, class DA, class DB>
Tensor binary(const std::string& op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), op);
  auto oa = broadcast_offsets(a.shape(), shape);
  auto ob = broadcast_offsets(b.shape(), shape);
  std::vector<double> out(oa.size());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[oa[i]], bd[ob[i]]);
  return make_result(op, shape, std::move(out), {a, b}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      auto ad = a.data();
      auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = ad[oa[i]];
        const double y = bd[ob[i]];
        accumulate(a, oa[i], g[i] * da(x, y));
        accumulate(b, ob[i], g[i] * db(x, y));
      }
    };
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(
      "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

/// Subgradient 0 at 0.
inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  const Shape full = detail::broadcast_shape(x.shape(), shape, "broadcast_to");
  detail::require(full == shape, "broadcast_to: " + to_string(x.shape()) +
                                     " does not broadcast to " + to_string(shape));
  auto off = detail::broadcast_offsets(x.shape(), shape);
  std::vector<double> out(off.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[off[i]];
  return detail::make_result("broadcast_to", shape, std::move(out), {x}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(x, off[i], g[i]);
    };
  });
}

inline Tensor reshape(const Tensor& x, const Shape& shape) {
  detail::require(numel(shape) == x.numel(), "reshape: " + to_string(x.shape()) + " -> " +
                                                  to_string(shape) + " changes element count");
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", shape, std::move(out), {x}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(x, i, g[i]);
    };
  });
}

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat: no inputs");
  const Shape& first = xs.front().shape();
  detail::require(axis < first.size(), "concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& t : xs) {
    detail::require(t.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t a = 0; a < first.size(); ++a)
      if (a != axis && t.dim(a) != first[a])
        throw ShapeError("concat: dim " + std::to_string(a) + " mismatch " + to_string(first) +
                         " vs " + to_string(t.shape()));
    shape[axis] += t.dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];

  std::vector<double> out(static_cast<std::size_t>(numel(shape)));
  std::vector<std::int64_t> starts;
  std::int64_t start = 0;
  for (const auto& t : xs) {
    starts.push_back(start);
    const std::int64_t block = t.dim(axis) * inner;
    auto td = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(td.begin() + o * block, block,
                  out.begin() + o * shape[axis] * inner + start * inner);
    start += t.dim(axis);
  }
  const std::int64_t total = shape[axis];
  return detail::make_result("concat", shape, std::move(out), xs, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& t = xs[k];
        if (!t.requires_grad()) continue;
        const std::int64_t block = t.dim(axis) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t j = 0; j < block; ++j)
            detail::accumulate(t, static_cast<std::size_t>(o * block + j),
                               g[static_cast<std::size_t>(o * total * inner + starts[k] * inner + j)]);
      }
    };
  });
}

/// Contiguous range [start, start+length) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::int64_t start, std::int64_t length) {
  detail::require(axis < x.rank(), "slice: axis out of range");
  detail::require(start >= 0 && length >= 1 && start + length <= x.dim(axis),
                  "slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                      ") outside dim " + std::to_string(axis) + " of " + to_string(x.shape()));
  Shape shape = x.shape();
  shape[axis] = length;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::int64_t src_extent = x.dim(axis);
  std::vector<double> out(static_cast<std::size_t>(numel(shape)));
  auto xd = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + (o * src_extent + start) * inner, length * inner,
                out.begin() + o * length * inner);
  return detail::make_result("slice", shape, std::move(out), {x}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t j = 0; j < length * inner; ++j)
          detail::accumulate(x, static_cast<std::size_t>((o * src_extent + start) * inner + j),
                             g[static_cast<std::size_t>(o * length * inner + j)]);
    };
  });
}

/// Sum of all elements, shape [1].
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result("sum", {1}, {s}, {x}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::int64_t i = 0; i < x.numel(); ++i) detail::accumulate(x, static_cast<std::size_t>(i), g[0]);
    };
  });
}

/// Mean over `axes`, keeping them as extent-1 dims.
inline Tensor mean(const Tensor& x, std::vector<std::size_t> axes) {
  const auto mask = detail::axis_mask(x.shape(), axes, "mean");
  std::vector<bool> keep(mask.size());
  Shape shape = x.shape();
  for (std::size_t a = 0; a < mask.size(); ++a) {
    keep[a] = !mask[a];
    if (mask[a]) shape[a] = 1;
  }
  auto outer = detail::axis_offsets(x.shape(), keep);
  auto inner = detail::axis_offsets(x.shape(), mask);
  const double inv = 1.0 / static_cast<double>(inner.size());
  std::vector<double> out(outer.size());
  auto xd = x.data();
  for (std::size_t o = 0; o < outer.size(); ++o) {
    double s = 0.0;
    for (auto i : inner) s += xd[outer[o] + i];
    out[o] = s * inv;
  }
  return detail::make_result("mean", shape, std::move(out), {x}, 0, [=](const auto&) {
    return [=](std::span<const double> g) {
      for (std::size_t o = 0; o < outer.size(); ++o)
        for (auto i : inner) detail::accumulate(x, outer[o] + i, g[o] * inv);
    };
  });
}

/// Mean over the trailing two (spatial) axes.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require(x.rank() >= 2, "global_avg_pool: needs at least two axes");
  return mean(x, {x.rank() - 2, x.rank() - 1});
}

/// Softmax jointly over `axes`, max-subtracted.
inline Tensor softmax(const Tensor& x, std::vector<std::size_t> axes) {
  const auto mask = detail::axis_mask(x.shape(), axes, "softmax");
  std::vector<bool> keep(mask.size());
  for (std::size_t a = 0; a < mask.size(); ++a) keep[a] = !mask[a];
  auto outer = detail::axis_offsets(x.shape(), keep);
  auto inner = detail::axis_offsets(x.shape(), mask);
  std::vector<double> out(x.data().size());
  auto xd = x.data();
  for (auto o : outer) {
    double m = -std::numeric_limits<double>::infinity();
    for (auto i : inner) m = std::max(m, xd[o + i]);
    double s = 0.0;
    for (auto i : inner) {
      out[o + i] = std::exp(xd[o + i] - m);
      s += out[o + i];
    }
    for (auto i : inner) out[o + i] /= s;
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, 0, [=](const auto& self) {
    std::weak_ptr<TensorImpl> weak = self;
    return [=](std::span<const double> g) {
      auto y = weak.lock();
      for (auto o : outer) {
        double dot = 0.0;
        for (auto i : inner) dot += g[o + i] * y->data[o + i];
        for (auto i : inner) detail::accumulate(x, o + i, y->data[o + i] * (g[o + i] - dot));
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Convolution and resampling

/// Plain 2-D cross-correlation. Output extent is
/// floor((H + 2*padding - kh) / stride) + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::int64_t stride = 1, std::int64_t padding = 0) {
  detail::require(x.rank() == 4, "conv2d: input must be [N,C,H,W], got " + to_string(x.shape()));
  detail::require(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,kh,kw], got " +
                                          to_string(weight.shape()));
  const auto N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Cout = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (weight.dim(1) != Cin)
    throw ShapeError("conv2d: input channels (dim 1) " + std::to_string(Cin) +
                     " != weight in-channels (dim 1) " + std::to_string(weight.dim(1)));
  if (bias.rank() != 1 || bias.dim(0) != Cout)
    throw ShapeError("conv2d: bias must be [" + std::to_string(Cout) + "], got " +
                     to_string(bias.shape()));
  detail::require(KH % 2 == 1 && KW % 2 == 1, "conv2d: kernel extents must be odd");
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(padding >= 0, "conv2d: padding must be >= 0");
  const auto span_h = H + 2 * padding - KH;
  const auto span_w = W + 2 * padding - KW;
  if (span_h < 0) throw ShapeError("conv2d: kernel height exceeds padded input height (dim 2)");
  if (span_w < 0) throw ShapeError("conv2d: kernel width exceeds padded input width (dim 3)");
  const auto OH = span_h / stride + 1;
  const auto OW = span_w / stride + 1;

  // Output columns ow with 0 <= ow*stride + j - padding < W.
  auto col_range = [=](std::int64_t j) {
    std::int64_t lo = 0;
    while (lo < OW && lo * stride + j - padding < 0) ++lo;
    std::int64_t hi = OW;
    while (hi > lo && (hi - 1) * stride + j - padding >= W) --hi;
    return std::pair{lo, hi};
  };

  std::vector<double> out(static_cast<std::size_t>(N * Cout * OH * OW));
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  if (!counting_only()) {
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t co = 0; co < Cout; ++co) {
        double* plane = out.data() + (n * Cout + co) * OH * OW;
        std::fill(plane, plane + OH * OW, bd[co]);
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          const double* in = xd.data() + (n * Cin + ci) * H * W;
          for (std::int64_t i = 0; i < KH; ++i)
            for (std::int64_t j = 0; j < KW; ++j) {
              const double wv = wd[((co * Cin + ci) * KH + i) * KW + j];
              const auto [lo, hi] = col_range(j);
              for (std::int64_t oh = 0; oh < OH; ++oh) {
                const auto ih = oh * stride + i - padding;
                if (ih < 0 || ih >= H) continue;
                const double* row = in + ih * W + j - padding;
                double* orow = plane + oh * OW;
                for (std::int64_t ow = lo; ow < hi; ++ow) orow[ow] += wv * row[ow * stride];
              }
            }
        }
      }
  }
  const std::int64_t macs = N * Cout * OH * OW * Cin * KH * KW;
  return detail::make_result(
      "conv2d", {N, Cout, OH, OW}, std::move(out), {x, weight, bias}, macs, [=](const auto&) {
        return [=](std::span<const double> g) {
          const auto xd = x.data();
          const auto wd = weight.data();
          const bool gx = x.requires_grad(), gw = weight.requires_grad();
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Cout; ++co) {
              const double* gp = g.data() + (n * Cout + co) * OH * OW;
              if (bias.requires_grad()) {
                double s = 0.0;
                for (std::int64_t k = 0; k < OH * OW; ++k) s += gp[k];
                detail::accumulate(bias, static_cast<std::size_t>(co), s);
              }
              for (std::int64_t ci = 0; ci < Cin; ++ci)
                for (std::int64_t i = 0; i < KH; ++i)
                  for (std::int64_t j = 0; j < KW; ++j) {
                    const auto widx = static_cast<std::size_t>(((co * Cin + ci) * KH + i) * KW + j);
                    const double wv = wd[widx];
                    const auto [lo, hi] = col_range(j);
                    double gwsum = 0.0;
                    for (std::int64_t oh = 0; oh < OH; ++oh) {
                      const auto ih = oh * stride + i - padding;
                      if (ih < 0 || ih >= H) continue;
                      const auto base = (n * Cin + ci) * H * W + ih * W + j - padding;
                      for (std::int64_t ow = lo; ow < hi; ++ow) {
                        const auto xi = static_cast<std::size_t>(base + ow * stride);
                        const double go = gp[oh * OW + ow];
                        if (gx) detail::accumulate(x, xi, wv * go);
                        if (gw) gwsum += xd[xi] * go;
                      }
                    }
                    if (gw) detail::accumulate(weight, widx, gwsum);
                  }
            }
        };
      });
}

/// 1x1 convolution over channel axis 1 of a tensor of any rank >= 2;
/// weight is [Cout, Cin]. Applied independently at every trailing position.
inline Tensor pointwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require(x.rank() >= 2, "pointwise_conv: input needs a channel axis");
  detail::require(weight.rank() == 2, "pointwise_conv: weight must be [Cout,Cin], got " +
                                          to_string(weight.shape()));
  const auto N = x.dim(0), Cin = x.dim(1), Cout = weight.dim(0);
  if (weight.dim(1) != Cin)
    throw ShapeError("pointwise_conv: input channels (dim 1) " + std::to_string(Cin) +
                     " != weight in-channels " + std::to_string(weight.dim(1)));
  if (bias.rank() != 1 || bias.dim(0) != Cout)
    throw ShapeError("pointwise_conv: bias must be [" + std::to_string(Cout) + "]");
  const auto S = x.numel() / (N * Cin);
  Shape shape = x.shape();
  shape[1] = Cout;
  std::vector<double> out(static_cast<std::size_t>(N * Cout * S));
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  if (!counting_only()) {
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t co = 0; co < Cout; ++co) {
        double* o = out.data() + (n * Cout + co) * S;
        std::fill(o, o + S, bd[co]);
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          const double wv = wd[co * Cin + ci];
          const double* in = xd.data() + (n * Cin + ci) * S;
          for (std::int64_t s = 0; s < S; ++s) o[s] += wv * in[s];
        }
      }
  }
  return detail::make_result(
      "pointwise_conv", shape, std::move(out), {x, weight, bias}, N * Cout * Cin * S,
      [=](const auto&) {
        return [=](std::span<const double> g) {
          const auto xd = x.data();
          const auto wd = weight.data();
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Cout; ++co) {
              const double* gp = g.data() + (n * Cout + co) * S;
              if (bias.requires_grad()) {
                double s = 0.0;
                for (std::int64_t k = 0; k < S; ++k) s += gp[k];
                detail::accumulate(bias, static_cast<std::size_t>(co), s);
              }
              for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const double wv = wd[co * Cin + ci];
                const auto base = (n * Cin + ci) * S;
                double gw = 0.0;
                for (std::int64_t s = 0; s < S; ++s) {
                  detail::accumulate(x, static_cast<std::size_t>(base + s), wv * gp[s]);
                  gw += xd[base + s] * gp[s];
                }
                detail::accumulate(weight, static_cast<std::size_t>(co * Cin + ci), gw);
              }
            }
        };
      });
}

namespace detail {

struct LerpTap {
  std::int64_t i0, i1;
  double w0, w1;
};

/// Half-pixel-center source taps for a 2x upsample along one axis:
/// src = (o + 0.5) / 2 - 0.5, clamped at 0, neighbour clamped at extent-1.
inline std::vector<LerpTap> upsample_taps(std::int64_t extent) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(2 * extent));
  for (std::int64_t o = 0; o < 2 * extent; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * 0.5 - 0.5);
    const auto i0 = std::min(static_cast<std::int64_t>(std::floor(src)), extent - 1);
    const auto i1 = std::min(i0 + 1, extent - 1);
    const double frac = src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace detail

/// Bilinear 2x upsampling, align-corners off (half-pixel centers).
inline Tensor bilinear_upsample_x2(const Tensor& x) {
  detail::require(x.rank() == 4, "bilinear_upsample_x2: input must be [N,C,H,W]");
  const auto NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto OH = 2 * H, OW = 2 * W;
  const auto th = detail::upsample_taps(H);
  const auto tw = detail::upsample_taps(W);
  std::vector<double> out(static_cast<std::size_t>(NC * OH * OW));
  const auto xd = x.data();
  for (std::int64_t p = 0; p < NC; ++p) {
    const double* in = xd.data() + p * H * W;
    double* o = out.data() + p * OH * OW;
    for (std::int64_t y = 0; y < OH; ++y) {
      const auto& a = th[static_cast<std::size_t>(y)];
      for (std::int64_t z = 0; z < OW; ++z) {
        const auto& b = tw[static_cast<std::size_t>(z)];
        o[y * OW + z] = a.w0 * (b.w0 * in[a.i0 * W + b.i0] + b.w1 * in[a.i0 * W + b.i1]) +
                        a.w1 * (b.w0 * in[a.i1 * W + b.i0] + b.w1 * in[a.i1 * W + b.i1]);
      }
    }
  }
  return detail::make_result(
      "bilinear_upsample_x2", {x.dim(0), x.dim(1), OH, OW}, std::move(out), {x}, 0,
      [=](const auto&) {
        return [=](std::span<const double> g) {
          for (std::int64_t p = 0; p < NC; ++p) {
            const auto base = static_cast<std::size_t>(p * H * W);
            const double* gp = g.data() + p * OH * OW;
            for (std::int64_t y = 0; y < OH; ++y) {
              const auto& a = th[static_cast<std::size_t>(y)];
              for (std::int64_t z = 0; z < OW; ++z) {
                const auto& b = tw[static_cast<std::size_t>(z)];
                const double go = gp[y * OW + z];
                detail::accumulate(x, base + static_cast<std::size_t>(a.i0 * W + b.i0), go * a.w0 * b.w0);
                detail::accumulate(x, base + static_cast<std::size_t>(a.i0 * W + b.i1), go * a.w0 * b.w1);
                detail::accumulate(x, base + static_cast<std::size_t>(a.i1 * W + b.i0), go * a.w1 * b.w0);
                detail::accumulate(x, base + static_cast<std::size_t>(a.i1 * W + b.i1), go * a.w1 * b.w1);
              }
            }
          }
        };
      });
}

/// Window maximum. Backward routes each output gradient to the first
/// maximal element of its window in row-major order.
inline Tensor maxpool2d(const Tensor& x, std::int64_t k, std::int64_t stride) {
  detail::require(x.rank() == 4, "maxpool2d: input must be [N,C,H,W]");
  detail::require(k >= 1 && stride >= 1, "maxpool2d: kernel and stride must be >= 1");
  const auto NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < k || (H - k) % stride != 0)
    throw ShapeError("maxpool2d: height (dim 2) " + std::to_string(H) +
                     " not divisible into windows of " + std::to_string(k) + "/" +
                     std::to_string(stride));
  if (W < k || (W - k) % stride != 0)
    throw ShapeError("maxpool2d: width (dim 3) " + std::to_string(W) +
                     " not divisible into windows of " + std::to_string(k) + "/" +
                     std::to_string(stride));
  const auto OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(NC * OH * OW));
  std::vector<std::size_t> argmax(out.size());
  const auto xd = x.data();
  for (std::int64_t p = 0; p < NC; ++p)
    for (std::int64_t y = 0; y < OH; ++y)
      for (std::int64_t z = 0; z < OW; ++z) {
        auto best = static_cast<std::size_t>(p * H * W + y * stride * W + z * stride);
        for (std::int64_t i = 0; i < k; ++i)
          for (std::int64_t j = 0; j < k; ++j) {
            const auto idx = static_cast<std::size_t>(p * H * W + (y * stride + i) * W + z * stride + j);
            if (xd[idx] > xd[best]) best = idx;
          }
        const auto o = static_cast<std::size_t>((p * OH + y) * OW + z);
        out[o] = xd[best];
        argmax[o] = best;
      }
  return detail::make_result("maxpool2d", {x.dim(0), x.dim(1), OH, OW}, std::move(out), {x}, 0,
                             [=](const auto&) {
                               return [=](std::span<const double> g) {
                                 for (std::size_t o = 0; o < g.size(); ++o)
                                   detail::accumulate(x, argmax[o], g[o]);
                               };
                             });
}

// ---------------------------------------------------------------------------
// Normalization and fusion

/// Per-channel standardization with batch statistics over every axis except
/// axis 1, then gamma * xhat + beta. Variance is the biased two-pass estimate.
inline Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps = 1e-5) {
  detail::require(x.rank() >= 2, "channel_norm: input needs a channel axis");
  detail::require(eps > 0.0, "channel_norm: eps must be positive");
  const auto N = x.dim(0), C = x.dim(1);
  const auto S = x.numel() / (N * C);
  detail::require(gamma.rank() == 1 && gamma.dim(0) == C, "channel_norm: gamma must be [C]");
  detail::require(beta.rank() == 1 && beta.dim(0) == C, "channel_norm: beta must be [C]");
  const auto count = N * S;
  if (count < 2)
    throw ShapeError("channel_norm: need at least 2 values per channel, got " + std::to_string(count));

  std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  std::vector<double> out(xhat.size());
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto at = [=](std::int64_t n, std::int64_t c, std::int64_t s) {
    return static_cast<std::size_t>((n * C + c) * S + s);
  };
  for (std::int64_t c = 0; c < C; ++c) {
    double m = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t s = 0; s < S; ++s) m += xd[at(n, c, s)];
    m /= static_cast<double>(count);
    double v = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t s = 0; s < S; ++s) {
        const double dx = xd[at(n, c, s)] - m;
        v += dx * dx;
      }
    v /= static_cast<double>(count);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[static_cast<std::size_t>(c)] = is;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t s = 0; s < S; ++s) {
        const auto i = at(n, c, s);
        xhat[i] = (xd[i] - m) * is;
        out[i] = gd[c] * xhat[i] + bd[c];
      }
  }
  return detail::make_result(
      "channel_norm", x.shape(), std::move(out), {x, gamma, beta}, 0, [=](const auto&) {
        return [=](std::span<const double> g) {
          const auto gd = gamma.data();
          for (std::int64_t c = 0; c < C; ++c) {
            double sg = 0.0, sgx = 0.0;
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t s = 0; s < S; ++s) {
                const auto i = at(n, c, s);
                sg += g[i];
                sgx += g[i] * xhat[i];
              }
            detail::accumulate(gamma, static_cast<std::size_t>(c), sgx);
            detail::accumulate(beta, static_cast<std::size_t>(c), sg);
            if (!x.requires_grad()) continue;
            const double k = gd[c] * inv_std[static_cast<std::size_t>(c)];
            const double mg = sg / static_cast<double>(count);
            const double mgx = sgx / static_cast<double>(count);
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t s = 0; s < S; ++s) {
                const auto i = at(n, c, s);
                detail::accumulate(x, i, k * (g[i] - mg - xhat[i] * mgx));
              }
          }
        };
      });
}

/// w * a + (1 - w) * b with w broadcast to a's shape. The rounded result is
/// clamped into [min(a,b), max(a,b)] so the blend never leaves the operand
/// envelope; the backward pass is that of the unclamped expression.
inline Tensor convex_blend(const Tensor& w, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("convex_blend: operand shapes " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  const Shape full = detail::broadcast_shape(w.shape(), a.shape(), "convex_blend");
  detail::require(full == a.shape(), "convex_blend: weight " + to_string(w.shape()) +
                                         " does not broadcast to " + to_string(a.shape()));
  auto ow = detail::broadcast_offsets(w.shape(), a.shape());
  std::vector<double> out(ow.size());
  const auto wd = w.data();
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = wd[ow[i]] * ad[i] + (1.0 - wd[ow[i]]) * bd[i];
    out[i] = std::clamp(v, std::min(ad[i], bd[i]), std::max(ad[i], bd[i]));
  }
  return detail::make_result("convex_blend", a.shape(), std::move(out), {w, a, b}, 0,
                             [=](const auto&) {
                               return [=](std::span<const double> g) {
                                 const auto wd = w.data();
                                 const auto ad = a.data();
                                 const auto bd = b.data();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   const double wv = wd[ow[i]];
                                   detail::accumulate(a, i, g[i] * wv);
                                   detail::accumulate(b, i, g[i] * (1.0 - wv));
                                   detail::accumulate(w, ow[i], g[i] * (ad[i] - bd[i]));
                                 }
                               };
                             });
}

}  // namespace rcnet::ops

namespace rcnet {

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace rcnet
