#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cmt/mesh.hpp"
#include "cmt/registration.hpp"
#include "cmt/standardize.hpp"

namespace cmt {

/// Project settings. File grammar (YAML, all keys optional):
///
///   data_root: <dir>            # relative manifest paths resolve here
///   work_root: <dir>            # outputs; env CMT_WORK_ROOT is the fallback
///   threads: <int>
///   seed: <int>
///   labels: {femur: 1, femoral_cartilage: 2, ...}
///   laterality_source: column   # only the manifest column is supported
///   standardize:
///     target_spacing: [x, y, z] # mm; omitted keeps the input spacing
///     target_extents: [x, y, z] # centred crop/pad after resampling
///     percentiles: [low, high]
///   registration: {<RegistrationConfig key>: value, ...}
///   rigid: {levels: 3, iters_per_level: 150, step_mm: 0.5}
///   mesh: {smoothing_sigma: 0.5, iso: 0.5}
struct ProjectConfig {
  std::filesystem::path data_root = ".";
  std::filesystem::path work_root;
  int threads = 1;
  unsigned seed = 0;
  LabelSchema schema = LabelSchema::knee_default();
  std::string laterality_source = "column";
  std::optional<Vec3> target_spacing;
  std::optional<Extents> target_extents;
  PercentileWindow percentiles;
  RegistrationConfig registration;
  RigidConfig rigid;
  MarchingCubesOptions mesh;

  /// Pushes threads/seed into the nested configs and validates ranges.
  void finalize();
};

ProjectConfig load_project_config(const std::filesystem::path& path);
ProjectConfig parse_project_config(const std::string& text);

}  // namespace cmt
