#include "cmt/config.hpp"

#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace cmt {
namespace {

template <class T>
T scalar(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, key + ": " + e.what());
  }
}

Vec3 vec3(const YAML::Node& n, const std::string& key) {
  if (!n.IsSequence() || n.size() != 3) throw Error(ErrorCode::ParseError, key + " must be a list of 3 numbers");
  return Vec3(scalar<double>(n[0], key), scalar<double>(n[1], key), scalar<double>(n[2], key));
}

void check_keys(const YAML::Node& n, const std::string& section, std::initializer_list<const char*> allowed) {
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::ParseError, "unknown key '" + key + "' in " + section);
  }
}

}  // namespace

void ProjectConfig::finalize() {
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  if (laterality_source != "column") throw Error(ErrorCode::InvalidArgument, "laterality_source must be 'column'");
  if (target_spacing && !(target_spacing->minCoeff() > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "target_spacing must be positive");
  }
  if (target_extents && std::min({(*target_extents)[0], (*target_extents)[1], (*target_extents)[2]}) < 1) {
    throw Error(ErrorCode::InvalidArgument, "target_extents must be positive");
  }
  if (!(percentiles.low >= 0.0 && percentiles.high <= 100.0 && percentiles.low < percentiles.high)) {
    throw Error(ErrorCode::InvalidArgument, "percentiles must satisfy 0 <= low < high <= 100");
  }
  if (!(mesh.smoothing_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "mesh smoothing_sigma must be >= 0");
  registration.threads = threads;
  registration.seed = seed;
  registration.validate();
}

ProjectConfig parse_project_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  ProjectConfig c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw Error(ErrorCode::ParseError, "configuration must be a mapping");
  check_keys(root, "top level",
             {"data_root", "work_root", "threads", "seed", "labels", "laterality_source", "standardize", "registration",
              "rigid", "mesh"});
  if (root["data_root"]) c.data_root = scalar<std::string>(root["data_root"], "data_root");
  if (root["work_root"]) c.work_root = scalar<std::string>(root["work_root"], "work_root");
  if (root["threads"]) c.threads = scalar<int>(root["threads"], "threads");
  if (root["seed"]) c.seed = scalar<unsigned>(root["seed"], "seed");
  if (root["laterality_source"]) c.laterality_source = scalar<std::string>(root["laterality_source"], "laterality_source");
  if (const auto l = root["labels"]) {
    auto mapping = c.schema.mapping();
    for (const auto& kv : l) mapping[kv.first.as<std::string>()] = scalar<int>(kv.second, "labels");
    c.schema = LabelSchema(mapping);
  }
  if (const auto s = root["standardize"]) {
    check_keys(s, "standardize", {"target_spacing", "target_extents", "percentiles"});
    if (s["target_spacing"]) c.target_spacing = vec3(s["target_spacing"], "target_spacing");
    if (s["target_extents"]) {
      const Vec3 e = vec3(s["target_extents"], "target_extents");
      c.target_extents = Extents{static_cast<int>(e[0]), static_cast<int>(e[1]), static_cast<int>(e[2])};
    }
    if (const auto p = s["percentiles"]) {
      if (!p.IsSequence() || p.size() != 2) throw Error(ErrorCode::ParseError, "percentiles must be [low, high]");
      c.percentiles = {scalar<double>(p[0], "percentiles"), scalar<double>(p[1], "percentiles")};
    }
  }
  if (const auto r = root["registration"]) {
    for (const auto& kv : r) c.registration.apply_key_value(kv.first.as<std::string>(), scalar<std::string>(kv.second, "registration"));
  }
  if (const auto r = root["rigid"]) {
    check_keys(r, "rigid", {"levels", "iters_per_level", "step_mm", "min_overlap_fraction"});
    if (r["levels"]) c.rigid.levels = scalar<int>(r["levels"], "rigid.levels");
    if (r["iters_per_level"]) c.rigid.iters_per_level = scalar<int>(r["iters_per_level"], "rigid.iters_per_level");
    if (r["step_mm"]) c.rigid.step_mm = scalar<double>(r["step_mm"], "rigid.step_mm");
    if (r["min_overlap_fraction"]) c.rigid.min_overlap_fraction = scalar<double>(r["min_overlap_fraction"], "rigid");
  }
  if (const auto m = root["mesh"]) {
    check_keys(m, "mesh", {"smoothing_sigma", "iso"});
    if (m["smoothing_sigma"]) c.mesh.smoothing_sigma = scalar<double>(m["smoothing_sigma"], "mesh.smoothing_sigma");
    if (m["iso"]) c.mesh.iso = scalar<double>(m["iso"], "mesh.iso");
  }
  // a seed or thread count given only inside registration still counts
  if (!root["seed"]) c.seed = c.registration.seed;
  if (!root["threads"]) c.threads = c.registration.threads;
  return c;
}

ProjectConfig load_project_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_project_config(ss.str());
}

}  // namespace cmt
