#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cmt/volume.hpp"

namespace cmt {

/// Dense 3-vector grid. Components are in voxel units of `grid`.
struct VectorField {
  Grid grid;
  std::vector<Vec3> data;

  VectorField() = default;
  explicit VectorField(Grid g) : grid(std::move(g)), data(grid.size(), Vec3::Zero()) {}

  std::size_t size() const noexcept { return data.size(); }
  Vec3& operator[](std::size_t i) { return data[i]; }
  const Vec3& operator[](std::size_t i) const { return data[i]; }
  Vec3& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
  const Vec3& at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }
  double max_norm() const;
  bool all_finite() const;
};

/// Stationary velocity v; its flow at t=1 is exp(v).
struct VelocityField : VectorField {
  int squaring_steps = 7;

  VelocityField() = default;
  explicit VelocityField(Grid g, int steps = 7) : VectorField(std::move(g)), squaring_steps(steps) {}
};

/// Displacement u: maps voxel x to x + u(x).
struct DeformationField : VectorField {
  DeformationField() = default;
  explicit DeformationField(Grid g) : VectorField(std::move(g)) {}
};

struct FieldPair {
  DeformationField forward;  // exp(v)
  DeformationField inverse;  // exp(-v)
};

FieldPair exponentiate(const VelocityField& v);

/// result(x) = a(b(x)); a's displacement sampled trilinearly with border replication.
DeformationField compose(const DeformationField& a, const DeformationField& b);

/// output(x) = image(x + u(x)), trilinear, zero outside the domain.
ImageVolume warp_image(const ImageVolume& image, const DeformationField& f);
ScalarField warp_image(const ScalarField& image, const DeformationField& f);

/// Per-label trilinear indicator warp followed by argmax (background
/// probability 1 - sum); ties resolve to the lowest label value.
LabelMap warp_mask(const LabelMap& labels, const DeformationField& f);

/// Trilinearly warped indicator of a single label.
ScalarField warp_indicator(const LabelMap& labels, std::uint8_t label, const DeformationField& f);

/// Resample onto a grid scaled by `factor` (0.5 halves the extents); vectors
/// are rescaled so the physical displacement is unchanged.
VelocityField resample_field(const VelocityField& f, double factor);
DeformationField resample_field(const DeformationField& f, double factor);

/// Resample onto an explicit target grid (world-aligned), with unit rescale.
VectorField resample_field_to(const VectorField& f, const Grid& target);
/// Adjoint of resample_field_to: maps a gradient on `target` back to `source`.
VectorField resample_field_to_adjoint(const VectorField& grad_target, const Grid& target, const Grid& source);

/// det(I + grad u); central differences inside, one-sided at borders.
ImageVolume jacobian_determinant(const DeformationField& f);

/// Grid with extents ceil(n / ratio) and spacing multiplied by `ratio`,
/// aligned so that the outer voxel boundaries coincide.
Grid rescaled_grid(const Grid& g, const Vec3& ratio);

namespace detail {

/// Scaling-and-squaring intermediates u_0 .. u_K of exp(sign * v).
struct ExpTape {
  std::vector<DeformationField> steps;
  double sign = 1.0;
  const DeformationField& result() const { return steps.back(); }
};

ExpTape exponentiate_with_tape(const VelocityField& v, double sign);

/// Accumulates dL/dv into grad_v given dL/d(exp(sign * v)).
void exponentiate_backward(const ExpTape& tape, const VectorField& grad_result, VectorField& grad_v);

/// Backward pass of warp_image for double images. Either output may be null.
void warp_image_backward(const ScalarField& image, const DeformationField& f, std::span<const double> grad_out,
                         std::span<double> grad_image, VectorField* grad_field);

/// Hash of the trilinear cells visited by a warp/compose chain; used by
/// finite-difference checks to detect stencils that straddle cell faces.
std::uint64_t cell_signature(const ExpTape& tape);
std::uint64_t cell_signature(const DeformationField& f, std::uint64_t seed);

}  // namespace detail

}  // namespace cmt
