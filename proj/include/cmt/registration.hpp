#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmt/objective.hpp"
#include "cmt/volume.hpp"
#include "cmt/warp.hpp"

namespace cmt {

struct RegistrationConfig {
  SimilarityKind similarity_stage1 = SimilarityKind::MSE;
  SimilarityKind similarity_stage2 = SimilarityKind::LNCC;
  int lncc_window_edge = 27;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;         // stage 1
  double lambda4_stage2 = 0.0;  // template frozen
  int pyramid_levels = 3;
  int iters_per_level = 200;
  int stage2_iters = -1;  // < 0: same as iters_per_level
  double step_size = 0.05;
  double template_step_size = 0.01;
  double convergence_rel_tol = 1e-5;
  int squaring_steps = 7;
  double field_resolution_factor = 1.0;  // 1 or 0.5
  double threshold = 0.5;
  unsigned seed = 0;
  int threads = 1;

  /// Throws InvalidArgument on out-of-range fields.
  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  /// Applies recognised keys; unknown keys raise ParseError.
  void apply_key_value(const std::string& key, const std::string& value);
};

/// Cartilage labels used to mask images before registration.
inline const std::set<std::string>& cartilage_label_names() {
  static const std::set<std::string> names{LabelSchema::kFemoralCartilage, LabelSchema::kTibialCartilage,
                                           LabelSchema::kMedialTibialCartilage,
                                           LabelSchema::kLateralTibialCartilage};
  return names;
}

struct SubjectEntry {
  std::string id;
  ImageVolume image;
  LabelMap labels;
  ImageVolume masked_image;
  VelocityField velocity;
};

/// Builds an entry with masked_image = image restricted to cartilage labels.
SubjectEntry make_subject(std::string id, ImageVolume image, LabelMap labels);

struct TemplateModel {
  ImageVolume image;
  std::map<std::uint8_t, ScalarField> probability;
  LabelMap mask;
  double threshold = 0.5;
  int n_train = 0;
  RegistrationConfig config;

  void save(const std::filesystem::path& dir) const;
  static TemplateModel load(const std::filesystem::path& dir);
};

struct LossRecord {
  int stage = 1;
  int level = 0;
  int iteration = 0;
  std::string kernel;
  double loss = 0.0;
};

struct LearnResult {
  TemplateModel model;
  ScalarField template_field;    // double-precision template I^t
  ScalarField stage1_template;   // template after stage 1 (stage 2 must not change it)
  std::vector<VelocityField> velocities;
  std::vector<FieldPair> fields;  // per subject: exp(v), exp(-v)
  std::vector<LossRecord> history;
};

struct ProbabilisticMask {
  std::map<std::uint8_t, ScalarField> probability;
  LabelMap mask;
};

/// Mean of labels warped by their image-to-template fields, then thresholded
/// (a voxel takes the argmax label when its probability is >= tau).
ProbabilisticMask build_template_mask(std::span<const LabelMap> labels, std::span<const DeformationField> inverse_fields,
                                      double tau);

/// Joint template + registration optimisation. Stage 1 learns the template
/// and all velocities under stage-1 similarity, stage 2 freezes the template
/// and refines velocities under stage-2 similarity.
LearnResult learn_template(std::vector<SubjectEntry> subjects, const RegistrationConfig& cfg);

struct RegistrationResult {
  VelocityField velocity;
  FieldPair fields;
  std::vector<LossRecord> history;
};

/// Template-to-image registration with the template frozen (stage-2 objective).
RegistrationResult register_to_template(const TemplateModel& model, const ImageVolume& masked_target,
                                        const RegistrationConfig& cfg);

/// Stage-2 registration of an arbitrary fixed template image.
RegistrationResult register_images(const ScalarField& tmpl, const ScalarField& target, const RegistrationConfig& cfg);

/// Rigid (6-DOF) alignment maximising global NCC; returns the world-space
/// transform mapping fixed-image world points to moving-image world points.
struct RigidConfig {
  int levels = 3;
  int iters_per_level = 150;
  double step_mm = 0.5;
  double min_overlap_fraction = 0.05;
};
Affine4 rigid_register(const ImageVolume& moving, const ImageVolume& fixed, const RigidConfig& cfg = {});

}  // namespace cmt
