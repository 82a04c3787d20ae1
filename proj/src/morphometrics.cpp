#include "cmt/morphometrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cmt/standardize.hpp"
#include "json.hpp"

namespace cmt {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct Component {
  std::vector<std::size_t> voxels;
  double mean_x = 0.0;
};

// 26-connected components of voxels equal to `label`, largest first.
std::vector<Component> components(const LabelMap& m, std::uint8_t label) {
  const Grid& g = m.grid();
  std::vector<int> seen(m.size(), 0);
  std::vector<Component> out;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.size(); ++s) {
    if (m[s] != label || seen[s]) continue;
    Component c;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      c.voxels.push_back(v);
      const int i = static_cast<int>(v % static_cast<std::size_t>(g.dims[0]));
      const int j = static_cast<int>((v / static_cast<std::size_t>(g.dims[0])) % static_cast<std::size_t>(g.dims[1]));
      const int k = static_cast<int>(v / (static_cast<std::size_t>(g.dims[0]) * static_cast<std::size_t>(g.dims[1])));
      c.mean_x += i;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!g.in_bounds(i + dx, j + dy, k + dz)) continue;
            const std::size_t n = g.index(i + dx, j + dy, k + dz);
            if (m[n] == label && !seen[n]) {
              seen[n] = 1;
              stack.push_back(n);
            }
          }
    }
    c.mean_x /= static_cast<double>(c.voxels.size());
    std::sort(c.voxels.begin(), c.voxels.end());
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) { return a.voxels.size() > b.voxels.size(); });
  return out;
}

bool observed_matches(const LabelSchema& s, Region r, std::uint8_t v) {
  if (v == 0) return false;
  if (r == Region::FC) return v == s.value(LabelSchema::kFemoralCartilage);
  return v == s.value(LabelSchema::kTibialCartilage) || v == s.value(LabelSchema::kMedialTibialCartilage) ||
         v == s.value(LabelSchema::kLateralTibialCartilage);
}

}  // namespace

const char* to_string(Region r) {
  switch (r) {
    case Region::FC: return "FC";
    case Region::MTC: return "mTC";
    case Region::LTC: return "lTC";
  }
  return "?";
}

Region region_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "fc") return Region::FC;
  if (l == "mtc") return Region::MTC;
  if (l == "ltc") return Region::LTC;
  throw Error(ErrorCode::ParseError, "unknown region: " + s);
}

std::uint8_t region_label(const LabelSchema& s, Region r) {
  switch (r) {
    case Region::FC: return static_cast<std::uint8_t>(s.value(LabelSchema::kFemoralCartilage));
    case Region::MTC: return static_cast<std::uint8_t>(s.value(LabelSchema::kMedialTibialCartilage));
    case Region::LTC: return static_cast<std::uint8_t>(s.value(LabelSchema::kLateralTibialCartilage));
  }
  return 0;
}

std::uint8_t region_bone(const LabelSchema& s, Region r) {
  return static_cast<std::uint8_t>(s.value(r == Region::FC ? LabelSchema::kFemur : LabelSchema::kTibia));
}

const char* to_string(Side s) { return s == Side::Left ? "left" : "right"; }

Side side_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "left" || l == "l") return Side::Left;
  if (l == "right" || l == "r") return Side::Right;
  throw Error(ErrorCode::ParseError, "unknown side: " + s);
}

LateralityResult standardize_laterality(const ImageVolume& image, const LabelMap& labels, Side side) {
  if (!is_ras_oriented(image.grid().affine) || !is_ras_oriented(labels.grid().affine)) {
    throw Error(ErrorCode::NotRasOriented, "laterality standardization needs RAS+ volumes");
  }
  if (side == Side::Right) return {image, labels, false};
  return {flip_lr(image), flip_lr(labels), true};
}

PoseResult pose_normalize(const ImageVolume& image, const LabelMap& labels, const TemplateModel& tmpl,
                          const RigidConfig& cfg) {
  const ImageVolume masked = mask_image(image, labels, cartilage_label_names());
  PoseResult r;
  r.rigid = rigid_register(masked, tmpl.image, cfg);
  r.image = resample_to_grid(image, tmpl.image.grid(), r.rigid);
  r.labels = resample_to_grid(labels, tmpl.image.grid(), r.rigid);
  return r;
}

LabelMap parcellate_tc(const LabelMap& labels, bool medial_is_lower_x) {
  const LabelSchema& s = labels.schema();
  const auto tc = static_cast<std::uint8_t>(s.value(LabelSchema::kTibialCartilage));
  const auto mtc = static_cast<std::uint8_t>(s.value(LabelSchema::kMedialTibialCartilage));
  const auto ltc = static_cast<std::uint8_t>(s.value(LabelSchema::kLateralTibialCartilage));
  LabelMap out = labels;
  // plates already split upstream are merged back so the rule sees the whole TC
  for (auto& v : out.data()) {
    if (v == mtc || v == ltc) v = tc;
  }
  const auto comps = components(out, tc);
  if (comps.empty()) throw Error(ErrorCode::NoTibialCartilage, "no tibial cartilage voxels");
  const int nx = labels.dims()[0];
  auto assign = [&](const std::vector<std::size_t>& voxels, bool lower_x) {
    const std::uint8_t v = lower_x == medial_is_lower_x ? mtc : ltc;
    for (auto i : voxels) out[i] = v;
  };

  if (comps.size() >= 2) {
    const double split = 0.5 * (comps[0].mean_x + comps[1].mean_x);
    const bool first_lower = comps[0].mean_x < comps[1].mean_x;
    assign(comps[0].voxels, first_lower);
    assign(comps[1].voxels, !first_lower);
    for (std::size_t c = 2; c < comps.size(); ++c) assign(comps[c].voxels, comps[c].mean_x < split);
    return out;
  }

  // one component: cut at the density minimum between the plates when there is a valley
  const auto& voxels = comps[0].voxels;
  std::vector<std::size_t> count(static_cast<std::size_t>(nx), 0);
  int x0 = nx;
  int x1 = -1;
  for (auto i : voxels) {
    const int x = static_cast<int>(i % static_cast<std::size_t>(nx));
    ++count[static_cast<std::size_t>(x)];
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
  }
  const int span = x1 - x0 + 1;
  const double mean_count = static_cast<double>(voxels.size()) / span;
  int cut = -1;
  std::size_t lowest = voxels.size();
  for (int x = x0 + span / 4; x <= x1 - span / 4; ++x) {
    if (count[static_cast<std::size_t>(x)] < lowest) {
      lowest = count[static_cast<std::size_t>(x)];
      cut = x;
    }
  }
  if (cut >= 0 && static_cast<double>(lowest) < 0.5 * mean_count) {
    for (auto i : voxels) {
      const int x = static_cast<int>(i % static_cast<std::size_t>(nx));
      out[i] = (x <= cut) == medial_is_lower_x ? mtc : ltc;
    }
  } else {
    assign(voxels, comps[0].mean_x < (nx - 1) / 2.0);
  }
  return out;
}

double estimate_fcl(const LabelMap& warped_template, const LabelMap& observed, const LabelMap& bone, Region region,
                    const FclOptions& opt) {
  require_same_grid(warped_template.grid(), observed.grid(), "fcl observed");
  require_same_grid(warped_template.grid(), bone.grid(), "fcl bone");
  const LabelSchema& s = warped_template.schema();
  const std::uint8_t label = region_label(s, region);
  if (warped_template.count(label) == 0) {
    throw Error(ErrorCode::EmptyRegion, std::string("region ") + to_string(region) + " absent from warped template");
  }
  auto mesh = std::make_shared<const TriMesh>(marching_cubes(warped_template, label, opt.mesh));
  const auto split = extract_interface(bone, region_bone(s, region), mesh);
  const Grid& g = observed.grid();
  const Affine4 to_voxel = g.affine.inverse();
  double uncovered = 0.0;
  for (auto f : split.interface.faces) {
    const Vec3 p = to_voxel.apply(mesh->face_centroid(f));
    const int ci = static_cast<int>(std::lround(p[0]));
    const int cj = static_cast<int>(std::lround(p[1]));
    const int ck = static_cast<int>(std::lround(p[2]));
    bool covered = false;
    for (int dz = -1; dz <= 1 && !covered; ++dz)
      for (int dy = -1; dy <= 1 && !covered; ++dy)
        for (int dx = -1; dx <= 1 && !covered; ++dx) {
          const int i = ci + dx;
          const int j = cj + dy;
          const int k = ck + dz;
          covered = g.in_bounds(i, j, k) && observed_matches(observed.schema(), region, observed.at(i, j, k));
        }
    if (!covered) uncovered += mesh->face_area(f);
  }
  return std::clamp(uncovered / split.interface.area, 0.0, 1.0);
}

RegionSurface region_surface(const LabelMap& labels, Region region, const MarchingCubesOptions& opt) {
  const LabelSchema& s = labels.schema();
  const std::uint8_t label = region_label(s, region);
  if (labels.count(label) == 0) throw Error(ErrorCode::EmptyRegion, std::string("region ") + to_string(region) + " is empty");
  auto mesh = std::make_shared<const TriMesh>(marching_cubes(labels, label, opt));
  const auto split = extract_interface(labels, region_bone(s, region), mesh);
  RegionSurface out;
  out.interface_area = split.interface.area;
  out.thickness = thickness_map(split.interface, split.outer);
  return out;
}

RegionMetrics regional_metrics(const LabelMap& labels, Region region, const RegionSurface& surface, double fcl) {
  RegionMetrics m;
  m.region = region;
  m.volume_mm3 = static_cast<double>(labels.count(region_label(labels.schema(), region))) * labels.grid().voxel_volume();
  const auto& t = surface.thickness.vertex_scalar;
  m.mean_thickness_mm = t.empty() ? 0.0 : std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
  m.interface_area_mm2 = surface.interface_area;
  m.fcl_fraction = fcl;
  return m;
}

std::vector<RegionMetrics> regional_report(const LabelMap& labels, const std::map<Region, RegionSurface>& surfaces,
                                           const std::map<Region, double>& fcl) {
  std::vector<RegionMetrics> rows;
  for (Region r : kAllRegions) {
    const auto it = surfaces.find(r);
    if (it == surfaces.end()) continue;
    const auto f = fcl.find(r);
    rows.push_back(regional_metrics(labels, r, it->second, f == fcl.end() ? 0.0 : f->second));
  }
  return rows;
}

std::string metrics_csv_header() {
  return "subject_id,region,volume_mm3,mean_thickness_mm,interface_area_mm2,fcl_fraction\n";
}

std::string metrics_csv_rows(const std::string& subject_id, const std::vector<RegionMetrics>& rows) {
  std::string out;
  for (const auto& m : rows) {
    out += subject_id + "," + to_string(m.region) + "," + fmt(m.volume_mm3) + "," + fmt(m.mean_thickness_mm) + "," +
           fmt(m.interface_area_mm2) + "," + fmt(m.fcl_fraction) + "\n";
  }
  return out;
}

std::string metrics_json(const std::string& subject_id, const std::vector<RegionMetrics>& rows) {
  nlohmann::ordered_json j;
  j["subject_id"] = subject_id;
  j["regions"] = nlohmann::ordered_json::array();
  for (const auto& m : rows) {
    j["regions"].push_back({{"region", to_string(m.region)},
                            {"volume_mm3", m.volume_mm3},
                            {"mean_thickness_mm", m.mean_thickness_mm},
                            {"interface_area_mm2", m.interface_area_mm2},
                            {"fcl_fraction", m.fcl_fraction}});
  }
  return j.dump(2) + "\n";
}

}  // namespace cmt
