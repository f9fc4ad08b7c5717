#pragma once

#include <gtest/gtest.h>

#include "rcnet/checks.hpp"

namespace rcnet::test {

inline Tensor randn(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return checks::random_tensor(shape, rng, scale);
}

inline Tensor from(const Shape& shape, std::vector<double> values) { return Tensor(shape, std::move(values)); }

inline NeckConfig small_config(std::uint64_t seed = 3) {
  NeckConfig cfg;
  cfg.channels = 8;
  cfg.backbone_channels = {4, 6, 8};
  cfg.shift_ratio = 2;
  cfg.base_resolution = {16, 16};
  cfg.batch = 2;  // level 7 is 1x1
  cfg.seed = seed;
  return cfg;
}

}  // namespace rcnet::test
