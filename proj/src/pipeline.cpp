#include "cmt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "cmt/metrics.hpp"
#include "cmt/nifti.hpp"
#include "json.hpp"

namespace cmt {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

// Runs one job per entry on the worker pool; messages are replayed in
// manifest order so logs do not depend on scheduling.
template <class F>
CommandResult for_each_subject(const std::vector<ManifestEntry>& entries, int threads, std::ostream& log, F&& job) {
  std::vector<std::string> failures(entries.size());
  std::vector<std::string> messages(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    std::string step = "start";
    try {
      messages[i] = job(entries[i], step);
    } catch (const std::exception& e) {
      failures[i] = entries[i].subject_id + ": " + step + ": " + e.what();
    }
  });
  CommandResult r;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (failures[i].empty()) {
      ++r.processed;
      if (!messages[i].empty()) log << messages[i] << "\n";
    } else {
      log << "FAILED " << failures[i] << "\n";
      r.failures.push_back(failures[i]);
    }
  }
  return r;
}

struct Standardized {
  ImageVolume image;
  LabelMap labels;
  bool flipped = false;
};

Standardized load_standardized(const WorkLayout& w, const std::string& id, const LabelSchema& schema) {
  const fs::path dir = w.standardized(id);
  if (!fs::exists(dir / "image.nii.gz")) throw Error(ErrorCode::MissingInputs, "subject not standardized: " + id);
  Standardized s;
  s.image = read_volume(dir / "image.nii.gz").volume;
  s.labels = read_labels(dir / "labels.nii.gz", schema).labels;
  const auto prov = ordered_json::parse(read_text(dir / "provenance.json"));
  s.flipped = prov.value("flipped", false);
  return s;
}

WorkLayout layout_of(const ProjectConfig& cfg) {
  if (cfg.work_root.empty()) throw Error(ErrorCode::InvalidArgument, "work_root is not set");
  return WorkLayout{cfg.work_root};
}

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v[0], v[1], v[2]}); }

bool has_label(const LabelMap& m, const char* name) {
  return m.count(static_cast<std::uint8_t>(m.schema().value(name))) > 0;
}

LabelMap parcellated(const LabelMap& m) {
  const bool tc = has_label(m, LabelSchema::kTibialCartilage) || has_label(m, LabelSchema::kMedialTibialCartilage) ||
                  has_label(m, LabelSchema::kLateralTibialCartilage);
  return tc ? parcellate_tc(m) : m;
}

double interface_area(const LabelMap& region_source, const LabelMap& bone_source, Region r, const MarchingCubesOptions& opt) {
  const auto label = region_label(region_source.schema(), r);
  auto mesh = std::make_shared<const TriMesh>(marching_cubes(region_source, label, opt));
  return extract_interface(bone_source, region_bone(bone_source.schema(), r), mesh).interface.area;
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Analysis: return "analysis";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "analysis") return Split::Analysis;
  throw Error(ErrorCode::ParseError, "unknown split: " + s);
}

Manifest Manifest::parse(const std::string& csv, const fs::path& data_root) {
  std::stringstream ss(csv);
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(ss, line)) {
    if (!trim(line).empty()) header = split_csv(line);
  }
  const std::vector<std::string> expected{"subject_id", "image", "labels", "side", "split"};
  if (header != expected) throw Error(ErrorCode::ParseError, "manifest header must be subject_id,image,labels,side,split");
  Manifest m;
  std::set<std::string> ids;
  int row = 1;
  while (std::getline(ss, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != expected.size()) {
      throw Error(ErrorCode::ParseError, "manifest row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " fields");
    }
    ManifestEntry e;
    e.subject_id = cells[0];
    if (e.subject_id.empty() || e.subject_id.find_first_of("/\\") != std::string::npos) {
      throw Error(ErrorCode::ParseError, "manifest row " + std::to_string(row) + ": bad subject_id");
    }
    if (!ids.insert(e.subject_id).second) throw Error(ErrorCode::ParseError, "duplicate subject_id " + e.subject_id);
    e.image = fs::path(cells[1]).is_absolute() ? fs::path(cells[1]) : data_root / cells[1];
    e.labels = fs::path(cells[2]).is_absolute() ? fs::path(cells[2]) : data_root / cells[2];
    e.side = side_from_string(cells[3]);
    e.split = split_from_string(cells[4]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest Manifest::load(const fs::path& path, const fs::path& data_root) { return parse(read_text(path), data_root); }

std::vector<ManifestEntry> Manifest::of_split(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

std::size_t Manifest::count(Split s) const { return of_split(s).size(); }

CommandResult cmd_standardize(const ProjectConfig& cfg, const Manifest& manifest, std::ostream& log) {
  const WorkLayout w = layout_of(cfg);
  return for_each_subject(manifest.entries, cfg.threads, log, [&](const ManifestEntry& e, std::string& step) {
    ordered_json steps = ordered_json::array();
    step = "read";
    ImageVolume image = read_volume(e.image).volume;
    LabelMap labels = read_labels(e.labels, cfg.schema).labels;
    step = "reorient";
    image = reorient_to_ras(image);
    labels = reorient_to_ras(labels);
    steps.push_back({{"step", "reorient_to_ras"}});
    if (cfg.target_spacing) {
      step = "resample";
      image = resample(image, *cfg.target_spacing);
      labels = resample(labels, *cfg.target_spacing);
      steps.push_back({{"step", "resample"}, {"target_spacing", vec_json(*cfg.target_spacing)}});
    }
    if (cfg.target_extents) {
      step = "crop_or_pad";
      image = crop_or_pad(image, *cfg.target_extents);
      labels = crop_or_pad(labels, *cfg.target_extents);
      const auto& x = *cfg.target_extents;
      steps.push_back({{"step", "crop_or_pad"}, {"extents", {x[0], x[1], x[2]}}});
    }
    require_same_grid(image.grid(), labels.grid(), "image/labels");
    step = "normalize";
    image = normalize_intensity(image, cfg.percentiles);
    steps.push_back({{"step", "normalize_intensity"}, {"percentiles", {cfg.percentiles.low, cfg.percentiles.high}}});
    step = "laterality";
    auto lat = standardize_laterality(image, labels, e.side);
    steps.push_back({{"step", "standardize_laterality"}, {"side", to_string(e.side)}});
    step = "write";
    const fs::path dir = w.standardized(e.subject_id);
    write_volume(lat.image, dir / "image.nii.gz");
    write_labels(lat.labels, dir / "labels.nii.gz");
    ordered_json prov;
    prov["subject_id"] = e.subject_id;
    prov["source_image"] = e.image.string();
    prov["source_labels"] = e.labels.string();
    prov["side"] = to_string(e.side);
    prov["flipped"] = lat.flipped;
    prov["steps"] = steps;
    write_text(dir / "provenance.json", prov.dump(2) + "\n");
    return e.subject_id + ": standardized";
  });
}

CommandResult cmd_learn_template(const ProjectConfig& cfg, const Manifest& manifest, const fs::path& template_dir,
                                 std::ostream& log) {
  const WorkLayout w = layout_of(cfg);
  const auto train = manifest.of_split(Split::Train);
  std::vector<SubjectEntry> subjects(train.size());
  std::vector<bool> loaded(train.size(), false);
  CommandResult r = for_each_subject(train, cfg.threads, log, [&](const ManifestEntry& e, std::string& step) {
    step = "load";
    auto s = load_standardized(w, e.subject_id, cfg.schema);
    const std::size_t i = static_cast<std::size_t>(&e - train.data());
    subjects[i] = make_subject(e.subject_id, std::move(s.image), std::move(s.labels));
    loaded[i] = true;
    return std::string();
  });
  std::vector<SubjectEntry> cohort;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (loaded[i]) cohort.push_back(std::move(subjects[i]));
  }
  try {
    if (cohort.size() < 2) throw Error(ErrorCode::CohortTooSmall, "need at least two loaded train subjects");
    const LearnResult res = learn_template(std::move(cohort), cfg.registration);
    res.model.save(template_dir);
    std::string csv = "stage,level,iteration,kernel,loss\n";
    char buf[128];
    for (const auto& h : res.history) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%s,%.17g\n", h.stage, h.level, h.iteration, h.kernel.c_str(), h.loss);
      csv += buf;
    }
    write_text(template_dir / "loss_history.csv", csv);
    log << "template learned from " << res.model.n_train << " subjects -> " << template_dir.string() << "\n";
  } catch (const std::exception& e) {
    log << "FAILED learn-template: " << e.what() << "\n";
    r.failures.push_back(std::string("learn-template: ") + e.what());
  }
  return r;
}

CommandResult cmd_register(const ProjectConfig& cfg, const Manifest& manifest, const fs::path& template_dir,
                           std::ostream& log) {
  const WorkLayout w = layout_of(cfg);
  const TemplateModel model = TemplateModel::load(template_dir);
  RegistrationConfig rc = cfg.registration;
  rc.threads = 1;  // parallelism is across subjects here
  return for_each_subject(manifest.of_split(Split::Test), cfg.threads, log, [&](const ManifestEntry& e, std::string& step) {
    step = "load";
    const auto s = load_standardized(w, e.subject_id, cfg.schema);
    ImageVolume masked = mask_image(s.image, s.labels, cartilage_label_names());
    if (!masked.grid().same_as(model.image.grid())) masked = resample_to_grid(masked, model.image.grid());
    step = "register";
    const auto reg = register_to_template(model, masked, rc);
    step = "write";
    const fs::path dir = w.registration(e.subject_id);
    write_field(reg.fields.forward, dir / "forward.nii.gz");
    write_field(reg.fields.inverse, dir / "inverse.nii.gz");
    write_labels(warp_mask(model.mask, reg.fields.forward), dir / "warped_mask.nii.gz");
    return e.subject_id + ": registered";
  });
}

const std::vector<std::string>& evaluation_columns() {
  static const std::vector<std::string> cols{"subject_id", "DSC_FC",  "DSC_mTC",      "DSC_lTC",      "HD95_FC",
                                             "HD95_mTC",   "HD95_lTC", "AreaDiff_FC", "AreaDiff_mTC", "AreaDiff_lTC"};
  return cols;
}

CommandResult cmd_evaluate(const ProjectConfig& cfg, const Manifest& manifest, std::ostream& log) {
  const WorkLayout w = layout_of(cfg);
  const auto test = manifest.of_split(Split::Test);
  // rows[i][metric * 3 + region]
  std::vector<std::array<double, 9>> rows(test.size());
  std::vector<bool> done(test.size(), false);
  CommandResult r = for_each_subject(test, cfg.threads, log, [&](const ManifestEntry& e, std::string& step) {
    const std::size_t i = static_cast<std::size_t>(&e - test.data());
    step = "load";
    const auto ref_raw = load_standardized(w, e.subject_id, cfg.schema).labels;
    const auto pred_raw = read_labels(w.registration(e.subject_id) / "warped_mask.nii.gz", cfg.schema).labels;
    require_same_grid(pred_raw.grid(), ref_raw.grid(), "prediction/reference");
    step = "parcellate";
    const LabelMap ref = parcellated(ref_raw);
    const LabelMap pred = parcellated(pred_raw);
    step = "metrics";
    auto& row = rows[i];
    row.fill(std::nan(""));
    for (std::size_t k = 0; k < kAllRegions.size(); ++k) {
      const Region reg = kAllRegions[k];
      const auto label = region_label(cfg.schema, reg);
      if (pred.count(label) == 0 && ref.count(label) == 0) continue;
      row[k] = dsc(pred, ref, label);
      if (pred.count(label) > 0 && ref.count(label) > 0) {
        row[3 + k] = hd95(pred, ref, label);
        try {
          row[6 + k] = relative_area_difference(interface_area(pred, ref, reg, cfg.mesh), interface_area(ref, ref, reg, cfg.mesh));
        } catch (const Error&) {
          // no interface in one of the masks: area difference undefined
        }
      }
    }
    done[i] = true;
    return e.subject_id + ": evaluated";
  });

  std::string csv;
  for (std::size_t c = 0; c < evaluation_columns().size(); ++c) csv += (c ? "," : "") + evaluation_columns()[c];
  csv += "\n";
  ordered_json j;
  j["subjects"] = ordered_json::array();
  std::array<double, 9> sum{};
  std::array<int, 9> n{};
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!done[i]) continue;
    csv += test[i].subject_id;
    ordered_json sj;
    sj["subject_id"] = test[i].subject_id;
    for (std::size_t c = 0; c < 9; ++c) {
      csv += "," + fmt(rows[i][c]);
      sj[evaluation_columns()[c + 1]] = std::isnan(rows[i][c]) ? ordered_json() : ordered_json(rows[i][c]);
      if (!std::isnan(rows[i][c])) {
        sum[c] += rows[i][c];
        ++n[c];
      }
    }
    csv += "\n";
    j["subjects"].push_back(sj);
  }
  csv += "mean";
  ordered_json mean;
  for (std::size_t c = 0; c < 9; ++c) {
    const double m = n[c] > 0 ? sum[c] / n[c] : std::nan("");
    csv += "," + fmt(m);
    mean[evaluation_columns()[c + 1]] = std::isnan(m) ? ordered_json() : ordered_json(m);
  }
  csv += "\n";
  j["mean"] = mean;
  try {
    write_text(w.evaluation() / "evaluation.csv", csv);
    write_text(w.evaluation() / "evaluation.json", j.dump(2) + "\n");
  } catch (const std::exception& e) {
    r.failures.push_back(std::string("evaluate: write: ") + e.what());
  }
  return r;
}

CommandResult cmd_quantify(const ProjectConfig& cfg, const Manifest& manifest, const std::optional<fs::path>& template_dir,
                           std::ostream& log) {
  const WorkLayout w = layout_of(cfg);
  std::optional<TemplateModel> model;
  if (template_dir) model = TemplateModel::load(*template_dir);
  RegistrationConfig rc = cfg.registration;
  rc.threads = 1;
  return for_each_subject(manifest.of_split(Split::Analysis), cfg.threads, log, [&](const ManifestEntry& e, std::string& step) {
    step = "load";
    auto s = load_standardized(w, e.subject_id, cfg.schema);
    ImageVolume image = std::move(s.image);
    LabelMap labels = std::move(s.labels);
    if (model) {
      step = "pose_normalize";
      auto pose = pose_normalize(image, labels, *model, cfg.rigid);
      image = std::move(pose.image);
      labels = std::move(pose.labels);
    }
    step = "parcellate";
    labels = parcellated(labels);
    std::optional<LabelMap> warped;
    if (model) {
      step = "register";
      const auto reg = register_to_template(*model, mask_image(image, labels, cartilage_label_names()), rc);
      warped = parcellated(warp_mask(model->mask, reg.fields.forward));
    }
    std::map<Region, RegionSurface> surfaces;
    std::map<Region, double> fcl;
    const fs::path dir = w.quantify(e.subject_id);
    for (Region reg : kAllRegions) {
      if (labels.count(region_label(labels.schema(), reg)) == 0) continue;
      step = std::string("thickness ") + to_string(reg);
      surfaces[reg] = region_surface(labels, reg, cfg.mesh);
      fcl[reg] = std::nan("");
      if (warped && warped->count(region_label(warped->schema(), reg)) > 0) {
        step = std::string("fcl ") + to_string(reg);
        fcl[reg] = estimate_fcl(*warped, labels, labels, reg, {cfg.mesh});
      }
      step = "write mesh";
      const TriMesh& t = surfaces[reg].thickness;
      write_ply(s.flipped ? mirror_lr(t, labels.grid()) : t, dir / (std::string(to_string(reg)) + "_thickness.ply"));
    }
    step = "write metrics";
    const auto rows = regional_report(labels, surfaces, fcl);
    write_text(dir / "metrics.csv", metrics_csv_header() + metrics_csv_rows(e.subject_id, rows));
    write_text(dir / "metrics.json", metrics_json(e.subject_id, rows));
    return e.subject_id + ": quantified " + std::to_string(rows.size()) + " regions";
  });
}

CommandResult cmd_report(const ProjectConfig& cfg, std::ostream& out) {
  const WorkLayout w = layout_of(cfg);
  const fs::path qdir = w.root / "quantify";
  std::vector<fs::path> files;
  if (fs::is_directory(qdir)) {
    for (const auto& d : fs::directory_iterator(qdir)) {
      if (fs::exists(d.path() / "metrics.csv")) files.push_back(d.path() / "metrics.csv");
    }
  }
  if (files.empty()) throw Error(ErrorCode::MissingInputs, "no per-subject metrics under " + qdir.string());
  std::sort(files.begin(), files.end());
  std::string csv = metrics_csv_header();
  std::map<std::string, std::array<double, 4>> sum;
  std::map<std::string, std::array<int, 4>> n;
  CommandResult r;
  for (const auto& f : files) {
    std::stringstream ss(read_text(f));
    std::string line;
    std::getline(ss, line);
    while (std::getline(ss, line)) {
      if (trim(line).empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 6) throw Error(ErrorCode::ParseError, "bad metrics row in " + f.string());
      csv += line + "\n";
      for (std::size_t c = 0; c < 4; ++c) {
        const double v = std::strtod(cells[2 + c].c_str(), nullptr);
        if (std::isnan(v)) continue;
        sum[cells[1]][c] += v;
        ++n[cells[1]][c];
      }
    }
    ++r.processed;
  }
  write_text(w.report() / "summary.csv", csv);
  out << "region,volume_mm3,mean_thickness_mm,interface_area_mm2,fcl_fraction\n";
  for (Region reg : kAllRegions) {
    const std::string name = to_string(reg);
    if (!sum.count(name)) continue;
    out << name;
    for (std::size_t c = 0; c < 4; ++c) out << "," << fmt(n[name][c] ? sum[name][c] / n[name][c] : std::nan(""));
    out << "\n";
  }
  return r;
}

}  // namespace cmt
