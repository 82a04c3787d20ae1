#include "cmt/warp.hpp"

#include <algorithm>
#include <cmath>

#include "interp.hpp"

namespace cmt {

using detail::Boundary;
using detail::make_stencil;
using detail::voxel_position;

double VectorField::max_norm() const {
  double m = 0.0;
  for (const auto& v : data) m = std::max(m, v.norm());
  return m;
}

bool VectorField::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](const Vec3& v) { return v.allFinite(); });
}

namespace {

Vec3 sample_vector(const detail::Stencil& s, const std::vector<Vec3>& data) {
  Vec3 acc = Vec3::Zero();
  for (std::size_t c = 0; c < 8; ++c) {
    if (s.inside[c] && s.weight[c] != 0.0) acc += s.weight[c] * data[s.index[c]];
  }
  return acc;
}

DeformationField compose_impl(const DeformationField& a, const DeformationField& b) {
  DeformationField out(b.grid);
  const std::size_t n = b.grid.size();
  detail::VoxelCursor cursor(b.grid.dims);
  for (std::size_t i = 0; i < n; ++i, cursor.next()) {
    const Vec3 p = cursor.position() + b.data[i];
    const auto s = detail::clamped_cell(a.grid.dims, p);
    Vec3 acc = Vec3::Zero();
    for (std::size_t c = 0; c < 8; ++c) {
      if (s.weight[c] != 0.0) acc += s.weight[c] * a.data[s.index[c]];
    }
    out.data[i] = b.data[i] + acc;
  }
  return out;
}

template <class T>
Volume<T> warp_scalar(const Volume<T>& image, const DeformationField& f) {
  require_same_grid(image.grid(), f.grid, "warp_image");
  std::vector<T> out(image.size());
  const T* src = image.data().data();
  detail::VoxelCursor cursor(f.grid.dims);
  for (std::size_t i = 0; i < out.size(); ++i, cursor.next()) {
    const Vec3 p = cursor.position() + f.data[i];
    const auto s = detail::make_stencil_t<Boundary::Zero, false>(image.dims(), p);
    out[i] = static_cast<T>(detail::sample(s, src));
  }
  return Volume<T>(image.grid(), std::move(out));
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  // splitmix64-style mixing, order dependent
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  return h;
}

}  // namespace

DeformationField compose(const DeformationField& a, const DeformationField& b) {
  require_same_grid(a.grid, b.grid, "compose");
  return compose_impl(a, b);
}

namespace detail {

ExpTape exponentiate_with_tape(const VelocityField& v, double sign) {
  if (v.squaring_steps < 1) throw Error(ErrorCode::InvalidArgument, "squaring_steps must be >= 1");
  if (!v.all_finite()) throw Error(ErrorCode::NonFinite, "velocity field has non-finite components");
  ExpTape tape;
  tape.sign = sign;
  tape.steps.reserve(static_cast<std::size_t>(v.squaring_steps) + 1);
  DeformationField u0(v.grid);
  const double scale = sign / std::ldexp(1.0, v.squaring_steps);
  for (std::size_t i = 0; i < v.size(); ++i) u0.data[i] = scale * v.data[i];
  tape.steps.push_back(std::move(u0));
  for (int k = 0; k < v.squaring_steps; ++k) {
    const DeformationField& prev = tape.steps.back();
    tape.steps.push_back(compose_impl(prev, prev));
  }
  if (!tape.result().all_finite()) throw Error(ErrorCode::NonFinite, "exponentiation overflowed");
  return tape;
}

void exponentiate_backward(const ExpTape& tape, const VectorField& grad_result, VectorField& grad_v) {
  const std::size_t n = grad_result.size();
  std::vector<Vec3> g = grad_result.data;
  std::vector<Vec3> gprev(n);
  for (std::size_t k = tape.steps.size() - 1; k-- > 0;) {
    const DeformationField& u = tape.steps[k];
    std::fill(gprev.begin(), gprev.end(), Vec3::Zero());
    detail::VoxelCursor cursor(u.grid.dims);
    for (std::size_t i = 0; i < n; ++i, cursor.next()) {
      const Vec3& gi = g[i];
      if (gi.isZero(0.0)) continue;
      const Vec3 p = cursor.position() + u.data[i];
      const auto s = detail::clamped_cell(u.grid.dims, p);
      // J^T g with J = d sample / d p, from the corner projections a_c = u_c . g
      std::array<double, 8> a{};
      for (std::size_t c = 0; c < 8; ++c) {
        a[c] = u.data[s.index[c]].dot(gi);
        gprev[s.index[c]] += s.weight[c] * gi;
      }
      const auto& wx = s.wx;
      const auto& wy = s.wy;
      const auto& wz = s.wz;
      const Vec3 jtg(s.df[0] * (wy[0] * wz[0] * (a[1] - a[0]) + wy[1] * wz[0] * (a[3] - a[2]) +
                                wy[0] * wz[1] * (a[5] - a[4]) + wy[1] * wz[1] * (a[7] - a[6])),
                     s.df[1] * (wx[0] * wz[0] * (a[2] - a[0]) + wx[1] * wz[0] * (a[3] - a[1]) +
                                wx[0] * wz[1] * (a[6] - a[4]) + wx[1] * wz[1] * (a[7] - a[5])),
                     s.df[2] * (wx[0] * wy[0] * (a[4] - a[0]) + wx[1] * wy[0] * (a[5] - a[1]) +
                                wx[0] * wy[1] * (a[6] - a[2]) + wx[1] * wy[1] * (a[7] - a[3])));
      gprev[i] += gi + jtg;
    }
    g.swap(gprev);
  }
  const double scale = tape.sign / std::ldexp(1.0, static_cast<int>(tape.steps.size()) - 1);
  for (std::size_t i = 0; i < n; ++i) grad_v.data[i] += scale * g[i];
}

void warp_image_backward(const ScalarField& image, const DeformationField& f, std::span<const double> grad_out,
                         std::span<double> grad_image, VectorField* grad_field) {
  const double* src = image.data().data();
  detail::VoxelCursor cursor(f.grid.dims);
  for (std::size_t i = 0; i < f.size(); ++i, cursor.next()) {
    const double go = grad_out[i];
    if (go == 0.0) continue;
    const Vec3 p = cursor.position() + f.data[i];
    const auto s = make_stencil(image.dims(), p, Boundary::Zero);
    Vec3 dp = Vec3::Zero();
    for (std::size_t c = 0; c < 8; ++c) {
      if (!s.inside[c]) continue;
      if (!grad_image.empty()) grad_image[s.index[c]] += s.weight[c] * go;
      dp += src[s.index[c]] * s.dweight[c];
    }
    if (grad_field != nullptr) grad_field->data[i] += go * dp;
  }
}

std::uint64_t cell_signature(const DeformationField& f, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Vec3 p = voxel_position(f.grid, i) + f.data[i];
    for (int a = 0; a < 3; ++a) h = mix(h, static_cast<std::uint64_t>(std::floor(p[a]) + 1e6));
  }
  return h;
}

std::uint64_t cell_signature(const ExpTape& tape) {
  std::uint64_t h = 0x12345;
  for (const auto& step : tape.steps) h = cell_signature(step, h);
  return h;
}

}  // namespace detail

FieldPair exponentiate(const VelocityField& v) {
  auto fwd = detail::exponentiate_with_tape(v, 1.0);
  auto inv = detail::exponentiate_with_tape(v, -1.0);
  return {std::move(fwd.steps.back()), std::move(inv.steps.back())};
}

ImageVolume warp_image(const ImageVolume& image, const DeformationField& f) { return warp_scalar(image, f); }
ScalarField warp_image(const ScalarField& image, const DeformationField& f) { return warp_scalar(image, f); }

ScalarField warp_indicator(const LabelMap& labels, std::uint8_t label, const DeformationField& f) {
  require_same_grid(labels.grid(), f.grid, "warp_indicator");
  ScalarField out(labels.grid(), 0.0);
  const std::uint8_t* src = labels.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Vec3 p = voxel_position(f.grid, i) + f.data[i];
    const auto s = make_stencil(labels.dims(), p, Boundary::Zero);
    double acc = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
      if (s.inside[c] && src[s.index[c]] == label) acc += s.weight[c];
    }
    out[i] = acc;
  }
  return out;
}

LabelMap warp_mask(const LabelMap& labels, const DeformationField& f) {
  require_same_grid(labels.grid(), f.grid, "warp_mask");
  const std::vector<std::uint8_t> present = labels.present_labels();
  LabelMap out(labels.grid(), labels.schema());
  const std::uint8_t* src = labels.data().data();
  std::array<double, 256> prob{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Vec3 p = voxel_position(f.grid, i) + f.data[i];
    const auto s = make_stencil(labels.dims(), p, Boundary::Zero);
    for (auto l : present) prob[l] = 0.0;
    double total = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
      if (!s.inside[c] || s.weight[c] == 0.0) continue;
      const std::uint8_t l = src[s.index[c]];
      if (l != 0) {
        prob[l] += s.weight[c];
        total += s.weight[c];
      }
    }
    std::uint8_t best = 0;
    double best_p = 1.0 - total;
    for (auto l : present) {
      if (prob[l] > best_p) {
        best_p = prob[l];
        best = l;
      }
    }
    out[i] = best;
  }
  return out;
}

Grid rescaled_grid(const Grid& g, const Vec3& ratio) {
  Grid out;
  for (int a = 0; a < 3; ++a) {
    if (!(ratio[a] > 0.0)) throw Error(ErrorCode::InvalidArgument, "resampling ratio must be positive");
    out.dims[a] = static_cast<int>(std::ceil(static_cast<double>(g.dims[a]) / ratio[a] - 1e-9));
    if (out.dims[a] < 1) throw Error(ErrorCode::EmptyOutput, "resampled extent is zero");
  }
  // old index = (new index + 0.5) * ratio - 0.5
  const Mat3 scale = ratio.asDiagonal();
  const Vec3 shift = 0.5 * ratio - Vec3::Constant(0.5);
  out.affine = g.affine * Affine4::from_linear(scale, shift);
  return out;
}

VectorField resample_field_to(const VectorField& f, const Grid& target) {
  const Affine4 to_source = f.grid.affine.inverse() * target.affine;
  // displacement in source voxels -> target voxels
  const Mat3 unit = target.affine.linear().inverse() * f.grid.affine.linear();
  VectorField out(target);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Vec3 p = to_source.apply(voxel_position(target, i));
    const auto s = make_stencil(f.grid.dims, p, Boundary::Clamp);
    out.data[i] = unit * sample_vector(s, f.data);
  }
  return out;
}

VectorField resample_field_to_adjoint(const VectorField& grad_target, const Grid& target, const Grid& source) {
  const Affine4 to_source = source.affine.inverse() * target.affine;
  const Mat3 unit = target.affine.linear().inverse() * source.affine.linear();
  const Mat3 unit_t = unit.transpose();
  VectorField out(source);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Vec3 g = unit_t * grad_target.data[i];
    if (g.isZero(0.0)) continue;
    const Vec3 p = to_source.apply(voxel_position(target, i));
    const auto s = make_stencil(source.dims, p, Boundary::Clamp);
    for (std::size_t c = 0; c < 8; ++c) {
      if (s.inside[c]) out.data[s.index[c]] += s.weight[c] * g;
    }
  }
  return out;
}

VelocityField resample_field(const VelocityField& f, double factor) {
  if (!(factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "factor must be positive");
  const Grid target = rescaled_grid(f.grid, Vec3::Constant(1.0 / factor));
  VelocityField out(target, f.squaring_steps);
  out.data = resample_field_to(f, target).data;
  return out;
}

DeformationField resample_field(const DeformationField& f, double factor) {
  if (!(factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "factor must be positive");
  const Grid target = rescaled_grid(f.grid, Vec3::Constant(1.0 / factor));
  DeformationField out(target);
  out.data = resample_field_to(f, target).data;
  return out;
}

ImageVolume jacobian_determinant(const DeformationField& f) {
  const auto& d = f.grid.dims;
  ImageVolume out(f.grid, 0.0F);
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const std::array<int, 3> idx{i, j, k};
        Mat3 jac = Mat3::Identity();
        for (int a = 0; a < 3; ++a) {
          std::array<int, 3> lo = idx;
          std::array<int, 3> hi = idx;
          double h = 2.0;
          if (d[a] < 2) continue;
          if (idx[a] == 0) {
            hi[a] += 1;
            h = 1.0;
          } else if (idx[a] == d[a] - 1) {
            lo[a] -= 1;
            h = 1.0;
          } else {
            lo[a] -= 1;
            hi[a] += 1;
          }
          const Vec3 diff = (f.at(hi[0], hi[1], hi[2]) - f.at(lo[0], lo[1], lo[2])) / h;
          jac.col(a) += diff;
        }
        out.at(i, j, k) = static_cast<float>(jac.determinant());
      }
    }
  }
  return out;
}

}  // namespace cmt
