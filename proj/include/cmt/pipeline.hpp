#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cmt/config.hpp"
#include "cmt/morphometrics.hpp"

namespace cmt {

enum class Split { Train, Test, Analysis };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string subject_id;
  std::filesystem::path image;
  std::filesystem::path labels;
  Side side = Side::Right;
  Split split = Split::Train;
};

/// CSV with header: subject_id,image,labels,side,split. Relative paths are
/// resolved against `data_root`.
struct Manifest {
  std::vector<ManifestEntry> entries;

  static Manifest parse(const std::string& csv, const std::filesystem::path& data_root);
  static Manifest load(const std::filesystem::path& path, const std::filesystem::path& data_root);
  std::vector<ManifestEntry> of_split(Split s) const;
  std::size_t count(Split s) const;
};

/// Work-root layout shared by the commands.
struct WorkLayout {
  std::filesystem::path root;

  std::filesystem::path standardized(const std::string& id) const { return root / "standardized" / id; }
  std::filesystem::path template_dir() const { return root / "template"; }
  std::filesystem::path registration(const std::string& id) const { return root / "registration" / id; }
  std::filesystem::path evaluation() const { return root / "evaluation"; }
  std::filesystem::path quantify(const std::string& id) const { return root / "quantify" / id; }
  std::filesystem::path report() const { return root / "report"; }
};

struct CommandResult {
  int processed = 0;
  std::vector<std::string> failures;  // "subject: step: message"
  bool ok() const { return failures.empty(); }
};

/// Reorient, resample, crop/pad, normalise and laterality-standardise every
/// manifest entry; writes image, labels and a provenance sidecar.
CommandResult cmd_standardize(const ProjectConfig& cfg, const Manifest& manifest, std::ostream& log);

/// Learns the template from the standardised train split and persists it.
CommandResult cmd_learn_template(const ProjectConfig& cfg, const Manifest& manifest,
                                 const std::filesystem::path& template_dir, std::ostream& log);

/// Registers the template to each test subject; writes both fields and the
/// warped template mask.
CommandResult cmd_register(const ProjectConfig& cfg, const Manifest& manifest,
                           const std::filesystem::path& template_dir, std::ostream& log);

/// DSC / HD95 / relative interface-area difference of warped template masks
/// against the reference labels (the reference acts as pseudo-healthy mask).
CommandResult cmd_evaluate(const ProjectConfig& cfg, const Manifest& manifest, std::ostream& log);

/// Regional morphometrics (volume, thickness, interface area, FCL) and meshes
/// for the analysis split. Without a template, FCL is not estimated.
CommandResult cmd_quantify(const ProjectConfig& cfg, const Manifest& manifest,
                           const std::optional<std::filesystem::path>& template_dir, std::ostream& log);

/// Merges per-subject metrics into report/summary.csv and prints means.
CommandResult cmd_report(const ProjectConfig& cfg, std::ostream& out);

/// Evaluation CSV column order.
const std::vector<std::string>& evaluation_columns();

}  // namespace cmt
