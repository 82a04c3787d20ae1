#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cmt/affine.hpp"

namespace cmt::detail {

/// Uniform-bin index over axis-aligned item boxes; nearest queries walk
/// Chebyshev rings of bins outward until no unvisited bin can be closer.
class BinIndex {
 public:
  BinIndex(const std::vector<Vec3>& lo, const std::vector<Vec3>& hi, double cell) : cell_(cell) {
    if (lo.empty()) return;
    origin_ = lo[0];
    Vec3 top = hi[0];
    for (std::size_t i = 0; i < lo.size(); ++i) {
      origin_ = origin_.cwiseMin(lo[i]);
      top = top.cwiseMax(hi[i]);
    }
    for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::floor((top[a] - origin_[a]) / cell_)) + 1);
    bins_.resize(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]);
    for (std::size_t i = 0; i < lo.size(); ++i) {
      const auto a = cell_of(lo[i]);
      const auto b = cell_of(hi[i]);
      for (int z = a[2]; z <= b[2]; ++z)
        for (int y = a[1]; y <= b[1]; ++y)
          for (int x = a[0]; x <= b[0]; ++x) bins_[flat(x, y, z)].push_back(static_cast<int>(i));
    }
  }

  /// min over items of dist(q, item); +inf when the index is empty.
  template <class Dist>
  double nearest(const Vec3& q, Dist&& dist) const {
    double best = std::numeric_limits<double>::infinity();
    if (bins_.empty()) return best;
    const auto c = cell_of(q);
    const int max_r = std::max({dims_[0], dims_[1], dims_[2]});
    for (int r = 0; r <= max_r; ++r) {
      for (int z = c[2] - r; z <= c[2] + r; ++z) {
        if (z < 0 || z >= dims_[2]) continue;
        for (int y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= dims_[1]) continue;
          const bool shell_yz = std::abs(z - c[2]) == r || std::abs(y - c[1]) == r;
          for (int x = c[0] - r; x <= c[0] + r; x += (shell_yz || r == 0) ? 1 : 2 * r) {
            if (x < 0 || x >= dims_[0]) continue;
            for (int item : bins_[flat(x, y, z)]) best = std::min(best, dist(item));
          }
        }
      }
      if (best <= r * cell_) break;
    }
    return best;
  }

 private:
  std::array<int, 3> cell_of(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      const int v = static_cast<int>(std::floor((p[a] - origin_[a]) / cell_));
      c[static_cast<std::size_t>(a)] = std::clamp(v, 0, dims_[a] - 1);
    }
    return c;
  }
  std::size_t flat(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_[1]) * z);
  }

  double cell_;
  Vec3 origin_ = Vec3::Zero();
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<std::vector<int>> bins_;
};

}  // namespace cmt::detail
