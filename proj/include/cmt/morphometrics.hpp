#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmt/mesh.hpp"
#include "cmt/registration.hpp"
#include "cmt/volume.hpp"

namespace cmt {

enum class Region { FC, MTC, LTC };
const char* to_string(Region r);
Region region_from_string(const std::string& s);
inline constexpr std::array<Region, 3> kAllRegions{Region::FC, Region::MTC, Region::LTC};

/// Label value of the region and of the bone it rests on.
std::uint8_t region_label(const LabelSchema& s, Region r);
std::uint8_t region_bone(const LabelSchema& s, Region r);

enum class Side { Left, Right };
const char* to_string(Side s);
Side side_from_string(const std::string& s);

struct RegionMetrics {
  Region region = Region::FC;
  double volume_mm3 = 0.0;
  double mean_thickness_mm = 0.0;
  double interface_area_mm2 = 0.0;
  double fcl_fraction = 0.0;
};

struct LateralityResult {
  ImageVolume image;
  LabelMap labels;
  bool flipped = false;
};

/// Left knees are mirrored so that later steps can assume a right knee.
LateralityResult standardize_laterality(const ImageVolume& image, const LabelMap& labels, Side side);

struct PoseResult {
  ImageVolume image;
  LabelMap labels;
  Affine4 rigid;  // template world -> subject world
};

/// Rigidly aligns the subject's cartilage-masked image to the template image
/// and resamples image (trilinear) and labels (nearest) onto the template grid.
PoseResult pose_normalize(const ImageVolume& image, const LabelMap& labels, const TemplateModel& tmpl,
                          const RigidConfig& cfg = {});

/// Splits tibial cartilage into medial/lateral plates. With
/// `medial_is_lower_x` (right knee, RAS) the lower-x plate is medial.
LabelMap parcellate_tc(const LabelMap& labels, bool medial_is_lower_x = true);

struct FclOptions {
  MarchingCubesOptions mesh;
};

/// Fraction of the pseudo-healthy interface area (warped template region
/// against bone) with no observed cartilage of the region within one voxel.
double estimate_fcl(const LabelMap& warped_template, const LabelMap& observed, const LabelMap& bone, Region region,
                    const FclOptions& opt = {});

/// Per-region surfaces used by the report.
struct RegionSurface {
  TriMesh thickness;  // interface mesh with per-vertex thickness
  double interface_area = 0.0;
};

/// Interface/outer split of one region's surface and its thickness map.
RegionSurface region_surface(const LabelMap& labels, Region region, const MarchingCubesOptions& opt = {});

RegionMetrics regional_metrics(const LabelMap& labels, Region region, const RegionSurface& surface, double fcl);

std::vector<RegionMetrics> regional_report(const LabelMap& labels, const std::map<Region, RegionSurface>& surfaces,
                                           const std::map<Region, double>& fcl);

/// CSV columns: subject_id, region, volume_mm3, mean_thickness_mm,
/// interface_area_mm2, fcl_fraction.
std::string metrics_csv_header();
std::string metrics_csv_rows(const std::string& subject_id, const std::vector<RegionMetrics>& rows);
std::string metrics_json(const std::string& subject_id, const std::vector<RegionMetrics>& rows);

}  // namespace cmt
