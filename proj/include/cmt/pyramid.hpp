#pragma once

#include "cmt/volume.hpp"

namespace cmt {

/// Grid of half the resolution (extents ceil(n/2)), boundary aligned.
Grid coarser_grid(const Grid& fine);

/// 2x2x2 block average; the last block repeats the border voxel on odd extents.
ScalarField downsample2(const ScalarField& fine);

/// Adjoint of downsample2.
ScalarField downsample2_adjoint(const ScalarField& grad_coarse, const Grid& fine);

}  // namespace cmt
