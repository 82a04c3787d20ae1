#pragma once

#include <span>
#include <vector>

#include "cmt/volume.hpp"
#include "cmt/warp.hpp"

namespace cmt {

enum class SimilarityKind { MSE, NCC, LNCC };

const char* to_string(SimilarityKind k);
SimilarityKind similarity_from_string(const std::string& s);

inline constexpr double kLnccEpsilon = 1e-5;
inline constexpr double kLnccMinVariance = 1e-10;

double loss_mse(const ScalarField& a, const ScalarField& b);
double loss_mse(const ImageVolume& a, const ImageVolume& b);

/// 1 - mean over window centres of cov^2 / (var_a var_b + eps). Windows are
/// cubes of edge `window_edge` clipped to the domain; cov/var are sums of
/// centred products over the window. Windows with var_a var_b below
/// kLnccMinVariance contribute 0.
double loss_lncc(const ScalarField& a, const ScalarField& b, int window_edge);
double loss_lncc(const ImageVolume& a, const ImageVolume& b, int window_edge);

/// 1 - r^2 with r the global Pearson correlation.
double loss_ncc(const ScalarField& a, const ScalarField& b);
double loss_ncc(const ImageVolume& a, const ImageVolume& b);

/// Loss value and weighted gradients. Gradients are accumulated (+=) into
/// grad_a / grad_b; pass an empty span to skip one side.
struct SimilarityTerm {
  SimilarityKind kind = SimilarityKind::MSE;
  int window_edge = 9;
};
double similarity_with_gradient(const SimilarityTerm& term, const ScalarField& a, const ScalarField& b,
                                double weight, std::span<double> grad_a, std::span<double> grad_b);
double similarity(const SimilarityTerm& term, const ScalarField& a, const ScalarField& b);

/// Sum over axes of the mean squared forward difference (all components).
double reg_smoothness(const VectorField& u);
double reg_smoothness_with_gradient(const VectorField& u, double weight, VectorField& grad);

/// Mean over voxels of |average velocity across subjects|^2.
double reg_centering(std::span<const VelocityField> fields);
double reg_centering_with_gradient(std::span<const VelocityField> fields, double weight,
                                   std::span<VectorField> grads);

namespace detail {
/// Clipped box sum with edge 2r+1 along every axis.
std::vector<double> box_sum(std::span<const double> f, const Extents& dims, int radius);
std::vector<double> box_count(const Extents& dims, int radius);
}  // namespace detail

}  // namespace cmt
