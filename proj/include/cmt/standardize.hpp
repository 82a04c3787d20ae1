#pragma once

#include <set>
#include <string>

#include "cmt/volume.hpp"

namespace cmt {

/// True when every voxel axis points (within `max_angle_deg`) along the
/// same-index world axis in the positive direction.
bool is_ras_oriented(const Affine4& affine, double max_angle_deg = 5.0);

/// Nearest-axis permutation/flip so that voxel axes run R, A, S.
/// Affines more than 5 degrees off-axis raise ObliqueAffine.
ImageVolume reorient_to_ras(const ImageVolume& v);
LabelMap reorient_to_ras(const LabelMap& v);

/// Trilinear (images) / nearest-neighbour (labels) resampling to a new
/// voxel spacing. Extents are ceil(n * spacing / target).
ImageVolume resample(const ImageVolume& v, const Vec3& target_spacing);
LabelMap resample(const LabelMap& v, const Vec3& target_spacing);

/// Trilinear resampling of `v` at the world positions of `target`
/// (optionally through `world_map`, target world -> source world).
ImageVolume resample_to_grid(const ImageVolume& v, const Grid& target, const Affine4& world_map = Affine4());
LabelMap resample_to_grid(const LabelMap& v, const Grid& target, const Affine4& world_map = Affine4());

struct PercentileWindow {
  double low = 0.5;
  double high = 99.5;
};

/// Linear-interpolated percentile of `values` (p in [0,100]).
double percentile(std::vector<double> values, double p);

/// Clip to the percentile window, then map affinely onto [0,1].
ImageVolume normalize_intensity(const ImageVolume& v, PercentileWindow window = {});

/// Keeps image values where the label is one of `labels`; zero elsewhere.
ImageVolume mask_image(const ImageVolume& image, const LabelMap& labels, const std::set<std::string>& label_names);

/// Mirror along the first (left-right) axis. The affine is kept, so the
/// result is the mirror image about the grid's central sagittal plane.
ImageVolume flip_lr(const ImageVolume& v);
LabelMap flip_lr(const LabelMap& v);

/// Centered crop / zero-pad to `extents`, keeping world positions of the
/// retained voxels.
ImageVolume crop_or_pad(const ImageVolume& v, const Extents& extents);
LabelMap crop_or_pad(const LabelMap& v, const Extents& extents);

/// Separable Gaussian smoothing, sigma in voxels, zero boundary.
ScalarField gaussian_smooth(const ScalarField& v, double sigma_voxels);

}  // namespace cmt
