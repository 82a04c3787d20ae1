#include <array>
#include <cmath>
#include <limits>

#include "cmt/pyramid.hpp"
#include "cmt/registration.hpp"
#include "cmt/standardize.hpp"
#include "interp.hpp"

namespace cmt {
namespace {

using Params = std::array<double, 6>;  // alpha, beta, gamma (rad), tx, ty, tz (mm)

struct Pose {
  Mat3 rotation;
  std::array<Mat3, 3> d_rotation;
  Vec3 translation;
};

Pose make_pose(const Params& p) {
  const Mat3 rx = Eigen::AngleAxisd(p[0], Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(p[1], Vec3::UnitY()).toRotationMatrix();
  const Mat3 rz = Eigen::AngleAxisd(p[2], Vec3::UnitZ()).toRotationMatrix();
  auto d = [](const Vec3& axis, double a) {
    // derivative of a rotation about a coordinate axis
    Mat3 k;
    k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
    return Mat3(k * Eigen::AngleAxisd(a, axis).toRotationMatrix());
  };
  Pose pose;
  pose.rotation = rz * ry * rx;
  pose.d_rotation = {rz * ry * d(Vec3::UnitX(), p[0]), rz * d(Vec3::UnitY(), p[1]) * rx,
                     d(Vec3::UnitZ(), p[2]) * ry * rx};
  pose.translation = Vec3(p[3], p[4], p[5]);
  return pose;
}

struct Level {
  ScalarField fixed;
  ScalarField moving;
  std::vector<Vec3> world;  // fixed voxel centres minus rotation centre
  Vec3 centre;
};

struct Score {
  double ncc = 0.0;
  Params grad{};
};

Score evaluate(const Level& lv, const Params& p, double min_overlap) {
  const Pose pose = make_pose(p);
  const Affine4 to_moving = lv.moving.grid().affine.inverse();
  const Mat3 lin = to_moving.linear();
  const Extents& md = lv.moving.dims();
  const std::size_t n = lv.fixed.size();

  std::vector<std::size_t> used;
  std::vector<double> b;
  std::vector<Vec3> grad_b;  // d sample / d voxel position
  used.reserve(n);
  b.reserve(n);
  grad_b.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 pos = to_moving.apply(pose.rotation * lv.world[i] + lv.centre + pose.translation);
    bool inside = true;
    for (int a = 0; a < 3; ++a) inside = inside && pos[a] >= 0.0 && pos[a] <= md[static_cast<std::size_t>(a)] - 1;
    if (!inside) continue;
    const auto s = detail::make_stencil(md, pos, detail::Boundary::Zero);
    double v = 0.0;
    Vec3 g = Vec3::Zero();
    for (std::size_t c = 0; c < 8; ++c) {
      if (!s.inside[c]) continue;
      const double m = lv.moving[s.index[c]];
      v += s.weight[c] * m;
      g += s.dweight[c] * m;
    }
    used.push_back(i);
    b.push_back(v);
    grad_b.push_back(g);
  }
  const double count = static_cast<double>(used.size());
  if (count < std::max(8.0, min_overlap * static_cast<double>(n))) {
    throw Error(ErrorCode::Diverged, "rigid registration lost image overlap");
  }
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t k = 0; k < used.size(); ++k) {
    ma += lv.fixed[used[k]];
    mb += b[k];
  }
  ma /= count;
  mb /= count;
  double saa = 0.0;
  double sbb = 0.0;
  double sab = 0.0;
  for (std::size_t k = 0; k < used.size(); ++k) {
    const double da = lv.fixed[used[k]] - ma;
    const double db = b[k] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error(ErrorCode::Diverged, "rigid registration: no intensity variance in overlap");
  const double norm = std::sqrt(saa * sbb);
  Score out;
  out.ncc = sab / norm;
  for (std::size_t k = 0; k < used.size(); ++k) {
    const double da = lv.fixed[used[k]] - ma;
    const double db = b[k] - mb;
    const double dr = da / norm - out.ncc * db / sbb;
    if (dr == 0.0) continue;
    const Vec3 gw = lin.transpose() * grad_b[k] * dr;  // d r / d world position
    const Vec3& y = lv.world[used[k]];
    for (int a = 0; a < 3; ++a) out.grad[static_cast<std::size_t>(a)] += gw.dot(pose.d_rotation[static_cast<std::size_t>(a)] * y);
    for (int a = 0; a < 3; ++a) out.grad[static_cast<std::size_t>(3 + a)] += gw[a];
  }
  return out;
}

Level make_level(const ScalarField& fixed, const ScalarField& moving, int level, const Vec3& centre) {
  Level lv;
  lv.fixed = fixed;
  lv.moving = moving;
  for (int l = 0; l < level; ++l) {
    lv.fixed = downsample2(lv.fixed);
    lv.moving = downsample2(lv.moving);
  }
  const double sigma = level > 0 ? 1.0 : 0.5;
  lv.fixed = gaussian_smooth(lv.fixed, sigma);
  lv.moving = gaussian_smooth(lv.moving, sigma);
  lv.centre = centre;
  lv.world.resize(lv.fixed.size());
  for (std::size_t i = 0; i < lv.fixed.size(); ++i) {
    lv.world[i] = lv.fixed.grid().to_world(detail::voxel_position(lv.fixed.grid(), i)) - centre;
  }
  return lv;
}

}  // namespace

Affine4 rigid_register(const ImageVolume& moving, const ImageVolume& fixed, const RigidConfig& cfg) {
  if (cfg.levels < 1 || cfg.iters_per_level < 1 || !(cfg.step_mm > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid rigid registration settings");
  }
  const ScalarField f = volume_cast<double>(fixed);
  const ScalarField m = volume_cast<double>(moving);
  const Grid& fg = fixed.grid();
  const Vec3 centre = fg.to_world(Vec3((fg.dims[0] - 1) / 2.0, (fg.dims[1] - 1) / 2.0, (fg.dims[2] - 1) / 2.0));
  const Vec3 extent_mm = fg.spacing().cwiseProduct(Vec3(fg.dims[0], fg.dims[1], fg.dims[2]));
  // lever arm converting angles to millimetres, so one step size serves all six parameters
  const double lever = 0.5 * extent_mm.maxCoeff();

  Params p{};
  for (int level = cfg.levels - 1; level >= 0; --level) {
    const Extents& d = fg.dims;
    if (level > 0 && std::min({d[0], d[1], d[2]}) >> level < 8) continue;
    const Level lv = make_level(f, m, level, centre);
    std::array<double, 6> mom{};
    std::array<double, 6> sq{};
    Params best_p = p;
    double best = -std::numeric_limits<double>::infinity();
    const double step0 = cfg.step_mm * std::pow(2.0, level);
    for (int it = 0; it < cfg.iters_per_level; ++it) {
      const Score s = evaluate(lv, p, cfg.min_overlap_fraction);
      if (!std::isfinite(s.ncc)) throw Error(ErrorCode::Diverged, "rigid registration produced a non-finite score");
      if (s.ncc > best) {
        best = s.ncc;
        best_p = p;
      }
      const double lr = step0 * (1.0 - 0.9 * it / static_cast<double>(cfg.iters_per_level));
      const double t = it + 1.0;
      for (std::size_t k = 0; k < 6; ++k) {
        const double scale = k < 3 ? lever : 1.0;
        const double g = s.grad[k] / scale;  // gradient w.r.t. scaled parameter
        mom[k] = 0.9 * mom[k] + 0.1 * g;
        sq[k] = 0.999 * sq[k] + 0.001 * g * g;
        const double mh = mom[k] / (1.0 - std::pow(0.9, t));
        const double vh = sq[k] / (1.0 - std::pow(0.999, t));
        p[k] += lr * mh / (std::sqrt(vh) + 1e-6) / scale;
      }
    }
    const Score last = evaluate(lv, p, cfg.min_overlap_fraction);
    if (last.ncc < best) p = best_p;
  }
  const Pose pose = make_pose(p);
  return Affine4::from_linear(pose.rotation, centre + pose.translation - pose.rotation * centre);
}

}  // namespace cmt
