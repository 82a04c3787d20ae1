#include "cmt/pyramid.hpp"

#include <algorithm>

#include "cmt/warp.hpp"

namespace cmt {
namespace {

// visits the 8 (possibly repeated) fine voxels of coarse voxel (i,j,k)
template <class F>
void for_block(const Extents& fine, int i, int j, int k, F&& fn) {
  for (int dz = 0; dz < 2; ++dz) {
    const int z = std::min(2 * k + dz, fine[2] - 1);
    for (int dy = 0; dy < 2; ++dy) {
      const int y = std::min(2 * j + dy, fine[1] - 1);
      for (int dx = 0; dx < 2; ++dx) {
        const int x = std::min(2 * i + dx, fine[0] - 1);
        fn(x, y, z);
      }
    }
  }
}

}  // namespace

Grid coarser_grid(const Grid& fine) { return rescaled_grid(fine, Vec3::Constant(2.0)); }

ScalarField downsample2(const ScalarField& fine) {
  const Grid g = coarser_grid(fine.grid());
  ScalarField out(g, 0.0);
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        double acc = 0.0;
        for_block(fine.dims(), i, j, k, [&](int x, int y, int z) { acc += fine.at(x, y, z); });
        out.at(i, j, k) = acc / 8.0;
      }
    }
  }
  return out;
}

ScalarField downsample2_adjoint(const ScalarField& grad_coarse, const Grid& fine) {
  ScalarField out(fine, 0.0);
  const Grid& g = grad_coarse.grid();
  for (int k = 0; k < g.dims[2]; ++k) {
    for (int j = 0; j < g.dims[1]; ++j) {
      for (int i = 0; i < g.dims[0]; ++i) {
        const double v = grad_coarse.at(i, j, k) / 8.0;
        for_block(fine.dims, i, j, k, [&](int x, int y, int z) { out.at(x, y, z) += v; });
      }
    }
  }
  return out;
}

}  // namespace cmt
