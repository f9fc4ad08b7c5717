#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include "rcnet/csn.hpp"
#include "rcnet/rng.hpp"

namespace rcnet::bench {

struct ShiftBench {
  std::int64_t channels = 0;
  std::int64_t scales = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  int repetitions = 0;
  double shift_median_ns = 0.0;
  double dense_median_ns = 0.0;
  double ratio = 0.0;          // dense / shift; > 1 means the shift is cheaper
  double max_abs_diff = 0.0;   // shift vs dense conv with routing weights
};

template <class F>
double median_ns(F&& f, int reps, int warmup) {
  for (int i = 0; i < warmup; ++i) f();
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto start = std::chrono::steady_clock::now();
    f();
    const auto stop = std::chrono::steady_clock::now();
    t.push_back(static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count()));
  }
  std::ranges::sort(t);
  const auto m = t.size() / 2;
  return t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
}

/// Times scale_shift against the dense kernel-5 circulant scale conv whose
/// one-hot weights reproduce the same routing. Warm-up runs are excluded.
inline ShiftBench bench_shift(std::int64_t channels, std::int64_t ratio, std::int64_t scales,
                              std::int64_t h, std::int64_t w, int reps, std::uint64_t seed,
                              int warmup = 2) {
  if (reps < 10) throw ConfigError("bench_shift: repetitions must be >= 10");
  const auto plan = csn::ShiftPlan::from_ratio(channels, ratio);
  Tensor stack = Tensor::zeros({1, channels, scales, h, w});
  Rng rng(seed);
  for (auto& v : stack.mutable_data()) v = rng.normal();
  const Tensor routing = csn::routing_weights(plan, channels);

  ShiftBench r{channels, scales, h, w, reps};
  r.max_abs_diff = max_abs_diff(csn::scale_shift(stack, plan), csn::dense_scale_conv(stack, routing));
  r.shift_median_ns = median_ns([&] { (void)csn::scale_shift(stack, plan); }, reps, warmup);
  r.dense_median_ns = median_ns([&] { (void)csn::dense_scale_conv(stack, routing); }, reps, warmup);
  r.ratio = r.dense_median_ns / r.shift_median_ns;
  return r;
}

}  // namespace rcnet::bench
