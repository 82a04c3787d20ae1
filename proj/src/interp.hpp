#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "cmt/volume.hpp"

namespace cmt::detail {

enum class Boundary { Zero, Clamp };

/// Trilinear stencil at a continuous voxel position. Corners outside the
/// domain (zero boundary) carry `inside == false` and must be skipped.
struct Stencil {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
  std::array<Vec3, 8> dweight{};  // d weight / d position
  std::array<bool, 8> inside{};
  std::array<long, 3> cell{};     // floor of the unclamped position
};

template <Boundary B, bool Derivative>
inline Stencil make_stencil_t(const Extents& dims, const Vec3& p) {
  Stencil s;
  std::array<long, 3> i0{};
  std::array<long, 3> i1{};
  std::array<double, 3> f{};
  std::array<double, 3> df{};  // d f / d p
  for (int a = 0; a < 3; ++a) {
    const long n = dims[static_cast<std::size_t>(a)];
    const double fl = std::floor(p[a]);
    s.cell[static_cast<std::size_t>(a)] = static_cast<long>(fl);
    if constexpr (B == Boundary::Zero) {
      i0[a] = static_cast<long>(fl);
      i1[a] = i0[a] + 1;
      f[a] = p[a] - fl;
      df[a] = 1.0;
    } else {
      if (n == 1) {
        i0[a] = i1[a] = 0;
        f[a] = 0.0;
        df[a] = 0.0;
        continue;
      }
      const double hi = static_cast<double>(n - 1);
      const double pc = p[a] < 0.0 ? 0.0 : (p[a] > hi ? hi : p[a]);
      long base = static_cast<long>(std::floor(pc));
      if (base > n - 2) base = n - 2;
      i0[a] = base;
      i1[a] = base + 1;
      f[a] = pc - static_cast<double>(base);
      df[a] = (p[a] >= 0.0 && p[a] <= hi) ? 1.0 : 0.0;
    }
  }
  const std::size_t nx = static_cast<std::size_t>(dims[0]);
  const std::size_t nxy = nx * static_cast<std::size_t>(dims[1]);
  for (int c = 0; c < 8; ++c) {
    const int bx = c & 1;
    const int by = (c >> 1) & 1;
    const int bz = (c >> 2) & 1;
    const long x = bx ? i1[0] : i0[0];
    const long y = by ? i1[1] : i0[1];
    const long z = bz ? i1[2] : i0[2];
    const double wx = bx ? f[0] : 1.0 - f[0];
    const double wy = by ? f[1] : 1.0 - f[1];
    const double wz = bz ? f[2] : 1.0 - f[2];
    bool in = true;
    if constexpr (B == Boundary::Zero) in = x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
    s.inside[static_cast<std::size_t>(c)] = in;
    s.weight[static_cast<std::size_t>(c)] = wx * wy * wz;
    if constexpr (Derivative) {
      const double sx = (bx ? 1.0 : -1.0) * df[0];
      const double sy = (by ? 1.0 : -1.0) * df[1];
      const double sz = (bz ? 1.0 : -1.0) * df[2];
      s.dweight[static_cast<std::size_t>(c)] = Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
    }
    s.index[static_cast<std::size_t>(c)] =
        in ? static_cast<std::size_t>(x) + nx * static_cast<std::size_t>(y) + nxy * static_cast<std::size_t>(z) : 0;
  }
  return s;
}

inline Stencil make_stencil(const Extents& dims, const Vec3& p, Boundary boundary) {
  return boundary == Boundary::Zero ? make_stencil_t<Boundary::Zero, true>(dims, p)
                                    : make_stencil_t<Boundary::Clamp, true>(dims, p);
}

// Clamped linear interpolation coordinates along one axis (same rules as the
// Clamp stencil): lower/upper index, fraction, and d fraction / d position.
struct ClampedAxis {
  long i0 = 0;
  long i1 = 0;
  double f = 0.0;
  double df = 0.0;
};

inline ClampedAxis clamped_axis(double p, long n) {
  ClampedAxis a;
  if (n == 1) return a;
  const double hi = static_cast<double>(n - 1);
  const double pc = p < 0.0 ? 0.0 : (p > hi ? hi : p);
  long base = static_cast<long>(std::floor(pc));
  if (base > n - 2) base = n - 2;
  a.i0 = base;
  a.i1 = base + 1;
  a.f = pc - static_cast<double>(base);
  a.df = (p >= 0.0 && p <= hi) ? 1.0 : 0.0;
  return a;
}

// Corner indices and weights of a clamped trilinear lookup, corner c = bx + 2 by + 4 bz.
struct ClampedCell {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
  std::array<double, 2> wx{}, wy{}, wz{};
  Vec3 df = Vec3::Zero();
};

inline ClampedCell clamped_cell(const Extents& dims, const Vec3& p) {
  const ClampedAxis ax = clamped_axis(p[0], dims[0]);
  const ClampedAxis ay = clamped_axis(p[1], dims[1]);
  const ClampedAxis az = clamped_axis(p[2], dims[2]);
  const std::size_t nx = static_cast<std::size_t>(dims[0]);
  const std::size_t nxy = nx * static_cast<std::size_t>(dims[1]);
  const std::size_t xs[2] = {static_cast<std::size_t>(ax.i0), static_cast<std::size_t>(ax.i1)};
  const std::size_t ys[2] = {nx * static_cast<std::size_t>(ay.i0), nx * static_cast<std::size_t>(ay.i1)};
  const std::size_t zs[2] = {nxy * static_cast<std::size_t>(az.i0), nxy * static_cast<std::size_t>(az.i1)};
  ClampedCell c;
  c.wx = {1.0 - ax.f, ax.f};
  c.wy = {1.0 - ay.f, ay.f};
  c.wz = {1.0 - az.f, az.f};
  c.df = Vec3(ax.df, ay.df, az.df);
  for (int k = 0; k < 8; ++k) {
    const int bx = k & 1;
    const int by = (k >> 1) & 1;
    const int bz = (k >> 2) & 1;
    c.index[static_cast<std::size_t>(k)] = xs[bx] + ys[by] + zs[bz];
    c.weight[static_cast<std::size_t>(k)] = c.wx[static_cast<std::size_t>(bx)] * c.wy[static_cast<std::size_t>(by)] *
                                            c.wz[static_cast<std::size_t>(bz)];
  }
  return c;
}

template <class T>
double sample(const Stencil& s, const T* data) {
  double acc = 0.0;
  for (std::size_t c = 0; c < 8; ++c) {
    if (s.inside[c] && s.weight[c] != 0.0) acc += s.weight[c] * static_cast<double>(data[s.index[c]]);
  }
  return acc;
}

inline Vec3 voxel_position(const Grid& g, std::size_t idx) {
  const std::size_t nx = static_cast<std::size_t>(g.dims[0]);
  const std::size_t ny = static_cast<std::size_t>(g.dims[1]);
  return Vec3(static_cast<double>(idx % nx), static_cast<double>((idx / nx) % ny),
              static_cast<double>(idx / (nx * ny)));
}

// Voxel coordinates in storage order without per-voxel division.
class VoxelCursor {
 public:
  explicit VoxelCursor(const Extents& dims) : nx_(dims[0]), ny_(dims[1]) {}
  Vec3 position() const { return Vec3(i_, j_, k_); }
  void next() {
    if (++i_ < nx_) return;
    i_ = 0;
    if (++j_ < ny_) return;
    j_ = 0;
    ++k_;
  }

 private:
  int nx_;
  int ny_;
  int i_ = 0;
  int j_ = 0;
  int k_ = 0;
};

}  // namespace cmt::detail
