#pragma once

#include <map>
#include <string>

#include "rcnet/tensor.hpp"

namespace rcnet {

/// Ordered map level -> [N, C, H, W] feature map.
class FeaturePyramid {
 public:
  using Map = std::map<int, Tensor>;

  FeaturePyramid() = default;
  explicit FeaturePyramid(Map levels) : levels_(std::move(levels)) {}

  void set(int level, Tensor t) { levels_[level] = std::move(t); }

  const Tensor& at(int level) const {
    auto it = levels_.find(level);
    if (it == levels_.end()) throw ShapeError("pyramid has no level " + std::to_string(level));
    return it->second;
  }

  bool contains(int level) const { return levels_.contains(level); }
  bool empty() const { return levels_.empty(); }
  std::size_t size() const { return levels_.size(); }
  int min_level() const { return levels_.begin()->first; }
  int max_level() const { return levels_.rbegin()->first; }

  Map::const_iterator begin() const { return levels_.begin(); }
  Map::const_iterator end() const { return levels_.end(); }

  /// Throws unless levels are contiguous, rank-4, share the batch extent,
  /// and each level halves the spatial extents of the one below.
  void validate() const {
    if (levels_.empty()) throw ShapeError("empty pyramid");
    int prev_level = 0;
    const Tensor* prev = nullptr;
    for (const auto& [level, t] : levels_) {
      if (t.rank() != 4)
        throw ShapeError("level " + std::to_string(level) + " is not [N,C,H,W]");
      if (prev) {
        if (level != prev_level + 1)
          throw ShapeError("missing level " + std::to_string(prev_level + 1));
        if (t.dim(0) != prev->dim(0))
          throw ShapeError("level " + std::to_string(level) + " batch extent differs");
        if (prev->dim(2) != 2 * t.dim(2) || prev->dim(3) != 2 * t.dim(3))
          throw ShapeError("level " + std::to_string(level) + " resolution " +
                           to_string(t.shape()) + " is not half of level " +
                           std::to_string(prev_level) + " " + to_string(prev->shape()));
      }
      prev_level = level;
      prev = &t;
    }
  }

  void require_levels(int lo, int hi) const {
    for (int l = lo; l <= hi; ++l)
      if (!contains(l)) throw ShapeError("pyramid is missing level " + std::to_string(l));
  }

 private:
  Map levels_;
};

inline bool bitwise_equal(const FeaturePyramid& a, const FeaturePyramid& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [level, t] : a)
    if (!b.contains(level) || !bitwise_equal(t, b.at(level))) return false;
  return true;
}

}  // namespace rcnet
