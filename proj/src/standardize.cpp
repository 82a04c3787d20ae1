#include "cmt/standardize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cmt/warp.hpp"
#include "interp.hpp"

namespace cmt {
namespace {

struct AxisMap {
  Mat4 new_to_old = Mat4::Identity();
  Extents dims{};
};

AxisMap ras_axis_map(const Grid& g, double max_angle_deg) {
  const Mat3 l = g.affine.linear();
  if (std::abs(l.determinant()) < 1e-12) throw Error(ErrorCode::SingularAffine, "affine is singular");
  std::array<int, 3> world_axis{};
  std::array<double, 3> sign{};
  std::array<bool, 3> used{};
  const double cos_limit = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  for (int j = 0; j < 3; ++j) {
    const Vec3 col = l.col(j);
    int w = 0;
    col.cwiseAbs().maxCoeff(&w);
    if (std::abs(col[w]) / col.norm() < cos_limit) {
      throw Error(ErrorCode::ObliqueAffine, "voxel axis deviates more than 5 degrees from a world axis");
    }
    if (used[static_cast<std::size_t>(w)]) throw Error(ErrorCode::SingularAffine, "two voxel axes map to one world axis");
    used[static_cast<std::size_t>(w)] = true;
    world_axis[static_cast<std::size_t>(j)] = w;
    sign[static_cast<std::size_t>(j)] = col[w] > 0 ? 1.0 : -1.0;
  }
  AxisMap m;
  m.new_to_old = Mat4::Zero();
  m.new_to_old(3, 3) = 1.0;
  for (int j = 0; j < 3; ++j) {
    const int w = world_axis[static_cast<std::size_t>(j)];
    m.new_to_old(j, w) = sign[static_cast<std::size_t>(j)];
    m.new_to_old(j, 3) = sign[static_cast<std::size_t>(j)] < 0 ? g.dims[j] - 1 : 0;
    m.dims[static_cast<std::size_t>(w)] = g.dims[static_cast<std::size_t>(j)];
  }
  return m;
}

template <class V>
V reorient_impl(const V& v) {
  const AxisMap m = ras_axis_map(v.grid(), 5.0);
  if (m.new_to_old.isIdentity(0.0)) return v;
  Grid g;
  g.dims = m.dims;
  g.affine = v.grid().affine * Affine4(m.new_to_old);
  V out = v;
  std::vector<typename V::value_type> data(g.size());
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const Eigen::Vector4d o = m.new_to_old * Eigen::Vector4d(i, j, k, 1.0);
        data[g.index(i, j, k)] = v.at(static_cast<int>(std::lround(o[0])), static_cast<int>(std::lround(o[1])),
                                      static_cast<int>(std::lround(o[2])));
      }
    }
  }
  if constexpr (std::is_same_v<V, LabelMap>) {
    return LabelMap(g, std::move(data), v.schema());
  } else {
    return V(g, std::move(data));
  }
}

ImageVolume resample_image(const ImageVolume& v, const Grid& target, const Affine4& world_map, bool clamp) {
  const Affine4 to_src = v.grid().affine.inverse() * world_map * target.affine;
  std::vector<float> data(target.size());
  const float* src = v.data().data();
  const auto b = clamp ? detail::Boundary::Clamp : detail::Boundary::Zero;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Vec3 p = to_src.apply(detail::voxel_position(target, i));
    if (!clamp) {
      // within half a voxel of the domain, snap to the border sample
      bool outside = false;
      for (int a = 0; a < 3; ++a) {
        const double hi = v.dims()[static_cast<std::size_t>(a)] - 1;
        if (p[a] < -0.5 || p[a] > hi + 0.5) outside = true;
        p[a] = std::clamp(p[a], 0.0, hi);
      }
      if (outside) {
        data[i] = 0.0F;
        continue;
      }
    }
    const auto s = detail::make_stencil(v.dims(), p, b);
    data[i] = static_cast<float>(detail::sample(s, src));
  }
  return ImageVolume(target, std::move(data));
}

LabelMap resample_labels(const LabelMap& v, const Grid& target, const Affine4& world_map, bool clamp) {
  const Affine4 to_src = v.grid().affine.inverse() * world_map * target.affine;
  std::vector<std::uint8_t> data(target.size());
  const auto& d = v.dims();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec3 p = to_src.apply(detail::voxel_position(target, i));
    std::array<int, 3> q{};
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      int r = static_cast<int>(std::floor(p[a] + 0.5));
      if (r < 0 || r >= d[static_cast<std::size_t>(a)]) {
        inside = false;
        r = std::clamp(r, 0, d[static_cast<std::size_t>(a)] - 1);
      }
      q[static_cast<std::size_t>(a)] = r;
    }
    data[i] = (inside || clamp) ? v.at(q[0], q[1], q[2]) : 0;
  }
  return LabelMap(target, std::move(data), v.schema());
}

template <class V>
V flip_impl(const V& v) {
  if (!is_ras_oriented(v.grid().affine)) throw Error(ErrorCode::NotRasOriented, "flip_lr requires RAS+ data");
  V out = v;
  const auto& d = v.dims();
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) out.at(i, j, k) = v.at(d[0] - 1 - i, j, k);
    }
  }
  return out;
}

template <class V>
V crop_impl(const V& v, const Extents& extents) {
  Grid g;
  g.dims = extents;
  std::array<int, 3> off{};
  for (int a = 0; a < 3; ++a) {
    if (extents[static_cast<std::size_t>(a)] < 1) throw Error(ErrorCode::EmptyOutput, "target extent is zero");
    const int diff = v.dims()[static_cast<std::size_t>(a)] - extents[static_cast<std::size_t>(a)];
    off[static_cast<std::size_t>(a)] = diff >= 0 ? diff / 2 : -((-diff + 1) / 2);
  }
  g.affine = v.grid().affine * Affine4::from_linear(Mat3::Identity(), Vec3(off[0], off[1], off[2]));
  std::vector<typename V::value_type> data(g.size(), 0);
  for (int k = 0; k < extents[2]; ++k) {
    for (int j = 0; j < extents[1]; ++j) {
      for (int i = 0; i < extents[0]; ++i) {
        const int oi = i + off[0];
        const int oj = j + off[1];
        const int ok = k + off[2];
        if (v.grid().in_bounds(oi, oj, ok)) data[g.index(i, j, k)] = v.at(oi, oj, ok);
      }
    }
  }
  if constexpr (std::is_same_v<V, LabelMap>) {
    return LabelMap(g, std::move(data), v.schema());
  } else {
    return V(g, std::move(data));
  }
}

Vec3 spacing_ratio(const Grid& g, const Vec3& target_spacing) {
  const Vec3 sp = g.spacing();
  Vec3 r;
  for (int a = 0; a < 3; ++a) {
    if (!(target_spacing[a] > 0.0)) throw Error(ErrorCode::InvalidArgument, "target spacing must be positive");
    r[a] = target_spacing[a] / sp[a];
  }
  return r;
}

}  // namespace

bool is_ras_oriented(const Affine4& affine, double max_angle_deg) {
  const Mat3 l = affine.linear();
  const double cos_limit = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  for (int j = 0; j < 3; ++j) {
    const Vec3 col = l.col(j);
    const double n = col.norm();
    if (n == 0.0 || col[j] <= 0.0 || col[j] / n < cos_limit) return false;
  }
  return true;
}

ImageVolume reorient_to_ras(const ImageVolume& v) { return reorient_impl(v); }
LabelMap reorient_to_ras(const LabelMap& v) { return reorient_impl(v); }

ImageVolume resample(const ImageVolume& v, const Vec3& target_spacing) {
  const Grid target = rescaled_grid(v.grid(), spacing_ratio(v.grid(), target_spacing));
  return resample_image(v, target, Affine4(), true);
}

LabelMap resample(const LabelMap& v, const Vec3& target_spacing) {
  const Grid target = rescaled_grid(v.grid(), spacing_ratio(v.grid(), target_spacing));
  return resample_labels(v, target, Affine4(), true);
}

ImageVolume resample_to_grid(const ImageVolume& v, const Grid& target, const Affine4& world_map) {
  return resample_image(v, target, world_map, false);
}

LabelMap resample_to_grid(const LabelMap& v, const Grid& target, const Affine4& world_map) {
  return resample_labels(v, target, world_map, false);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ImageVolume normalize_intensity(const ImageVolume& v, PercentileWindow window) {
  if (!(window.low >= 0.0 && window.high <= 100.0 && window.low < window.high)) {
    throw Error(ErrorCode::InvalidArgument, "percentile window must satisfy 0 <= low < high <= 100");
  }
  std::vector<double> values(v.values().begin(), v.values().end());
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (values.empty() || *mn == *mx) throw Error(ErrorCode::ConstantImage, "cannot normalize a constant image");
  double lo = percentile(values, window.low);
  double hi = percentile(values, window.high);
  if (!(hi > lo)) {
    lo = *mn;
    hi = *mx;
  }
  std::vector<float> out(values.size());
  const double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double c = std::clamp(values[i], lo, hi);
    out[i] = static_cast<float>((c - lo) / range);
  }
  return ImageVolume(v.grid(), std::move(out));
}

ImageVolume mask_image(const ImageVolume& image, const LabelMap& labels, const std::set<std::string>& label_names) {
  require_same_grid(image.grid(), labels.grid(), "mask_image");
  std::array<bool, 256> keep{};
  for (const auto& name : label_names) keep[static_cast<std::size_t>(labels.schema().value(name))] = true;
  std::vector<float> out(image.size(), 0.0F);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (keep[labels[i]]) out[i] = image[i];
  }
  return ImageVolume(image.grid(), std::move(out));
}

ImageVolume flip_lr(const ImageVolume& v) { return flip_impl(v); }
LabelMap flip_lr(const LabelMap& v) { return flip_impl(v); }

ImageVolume crop_or_pad(const ImageVolume& v, const Extents& extents) { return crop_impl(v, extents); }
LabelMap crop_or_pad(const LabelMap& v, const Extents& extents) { return crop_impl(v, extents); }

ScalarField gaussian_smooth(const ScalarField& v, double sigma_voxels) {
  if (sigma_voxels <= 0.0) return v;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_voxels));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    const double w = std::exp(-0.5 * t * t / (sigma_voxels * sigma_voxels));
    kernel[static_cast<std::size_t>(t + radius)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  ScalarField cur = v;
  const auto& d = v.dims();
  for (int axis = 0; axis < 3; ++axis) {
    if (d[static_cast<std::size_t>(axis)] == 1) continue;
    ScalarField next(v.grid(), 0.0);
    for (int k = 0; k < d[2]; ++k) {
      for (int j = 0; j < d[1]; ++j) {
        for (int i = 0; i < d[0]; ++i) {
          std::array<int, 3> idx{i, j, k};
          const int c = idx[static_cast<std::size_t>(axis)];
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            const int q = c + t;
            if (q < 0 || q >= d[static_cast<std::size_t>(axis)]) continue;
            idx[static_cast<std::size_t>(axis)] = q;
            acc += kernel[static_cast<std::size_t>(t + radius)] * cur.at(idx[0], idx[1], idx[2]);
          }
          next.at(i, j, k) = acc;
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace cmt
