#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcnet/error.hpp"

namespace rcnet {

/// Structural description of a neck instance. JSON field names match the
/// member names.
struct NeckConfig {
  int l_min = 3;
  int l_max = 7;
  int channels = 64;  // pyramid width d
  /// Stage widths for backbone levels l_min, l_min+1, ... (ResNet
  /// 512/1024/2048 divided by 32 by default).
  std::vector<int> backbone_channels{16, 32, 64};
  int shift_ratio = 4;
  int reference_level = 4;
  int batch = 1;
  std::array<int, 2> base_resolution{64, 64};
  std::uint64_t seed = 0;
  /// "stem": levels above 5 are produced from C5 by stride-2 convs.
  /// "backbone": the synthetic backbone emits every level directly.
  std::string extra_levels = "stem";

  int num_levels() const { return l_max - l_min + 1; }

  /// Highest level the synthetic backbone emits.
  int backbone_top() const { return extra_levels == "stem" ? std::min(5, l_max) : l_max; }

  /// Channel width of input level `level` (after any stem extension).
  int input_channels(int level) const {
    if (level > backbone_top()) return channels;
    return backbone_channels.at(static_cast<std::size_t>(level - l_min));
  }

  std::array<int, 2> resolution(int level) const {
    const int f = 1 << (level - l_min);
    return {base_resolution[0] / f, base_resolution[1] / f};
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (l_min >= l_max) v.push_back("l_min must be < l_max");
    if (num_levels() < 5) v.push_back("need at least 5 levels (shift window is 5)");
    if (channels <= 0) v.push_back("channels must be positive");
    if (shift_ratio <= 0 || channels % (4 * std::max(shift_ratio, 1)) != 0)
      v.push_back("channels must be divisible by 4*shift_ratio");
    if (reference_level < l_min || reference_level > l_max)
      v.push_back("reference_level must lie in [l_min, l_max]");
    if (batch <= 0) v.push_back("batch must be positive");
    if (extra_levels != "stem" && extra_levels != "backbone")
      v.push_back("extra_levels must be \"stem\" or \"backbone\"");
    if (extra_levels == "stem" && l_max > 5 && (l_min > 5 || l_max > 7))
      v.push_back("stem extension needs C5 present and l_max <= 7");
    const int span = std::max(l_max - l_min, 0);
    if (span < 31) {
      const int f = 1 << span;
      if (base_resolution[0] <= 0 || base_resolution[1] <= 0 || base_resolution[0] % f != 0 ||
          base_resolution[1] % f != 0)
        v.push_back("base_resolution must be divisible by 2^(l_max - l_min)");
    }
    const int want = backbone_top() - l_min + 1;
    if (static_cast<int>(backbone_channels.size()) != want)
      v.push_back("backbone_channels needs " + std::to_string(want) + " entries");
    for (int c : backbone_channels)
      if (c <= 0) v.push_back("backbone_channels entries must be positive");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid NeckConfig:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
};

inline void to_json(nlohmann::json& j, const NeckConfig& c) {
  j = nlohmann::json{{"l_min", c.l_min},
                     {"l_max", c.l_max},
                     {"channels", c.channels},
                     {"backbone_channels", c.backbone_channels},
                     {"shift_ratio", c.shift_ratio},
                     {"reference_level", c.reference_level},
                     {"batch", c.batch},
                     {"base_resolution", c.base_resolution},
                     {"seed", c.seed},
                     {"extra_levels", c.extra_levels}};
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline void from_json(const nlohmann::json& j, NeckConfig& c) {
  static const std::array<const char*, 10> known{
      "l_min", "l_max", "channels", "backbone_channels", "shift_ratio", "reference_level",
      "batch", "base_resolution", "seed", "extra_levels"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config field '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("l_min", c.l_min);
  get("l_max", c.l_max);
  get("channels", c.channels);
  get("backbone_channels", c.backbone_channels);
  get("shift_ratio", c.shift_ratio);
  get("reference_level", c.reference_level);
  get("batch", c.batch);
  get("base_resolution", c.base_resolution);
  get("seed", c.seed);
  get("extra_levels", c.extra_levels);
}

inline NeckConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    return j.get<NeckConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

}  // namespace rcnet
