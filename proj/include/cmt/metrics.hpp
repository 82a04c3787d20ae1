#pragma once

#include <cstdint>
#include <vector>

#include "cmt/mesh.hpp"
#include "cmt/volume.hpp"

namespace cmt {

/// 2|A n B| / (|A| + |B|) over nonzero voxels; 1 when both are empty.
double dsc(const LabelMap& a, const LabelMap& b);
/// Same, restricted to voxels carrying `label` in each map.
double dsc(const LabelMap& a, const LabelMap& b, std::uint8_t label);

/// World positions of foreground voxels with a 6-neighbour outside the
/// foreground (the grid exterior counts as background).
std::vector<Vec3> boundary_points(const LabelMap& m, std::uint8_t label);

/// 95th percentile (linear interpolation) of the pooled nearest
/// boundary-to-boundary distances, both directions, in mm.
double hd95(const LabelMap& a, const LabelMap& b, std::uint8_t label);
/// Nonzero voxels as foreground.
double hd95(const LabelMap& a, const LabelMap& b);

/// (A - A_pseudo) / A_pseudo.
double relative_area_difference(double measured, double pseudo);
double relative_area_difference(const SurfacePatch& measured, const SurfacePatch& pseudo);

}  // namespace cmt
