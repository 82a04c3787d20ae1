// cmt: knee cartilage template learning and morphometrics pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cmt/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string manifest;
  std::string template_dir;
  std::string out;
  std::optional<int> threads;
  std::optional<unsigned> seed;
};

void add_common(CLI::App* cmd, Flags& f, bool manifest, bool template_dir) {
  cmd->add_option("--config", f.config, "project configuration file (YAML)");
  if (manifest) cmd->add_option("--manifest", f.manifest, "manifest CSV")->required();
  if (template_dir) cmd->add_option("--template-dir", f.template_dir, "template directory (default <work_root>/template)");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "work root (overrides config and CMT_WORK_ROOT)");
}

cmt::ProjectConfig resolve_config(const Flags& f) {
  cmt::ProjectConfig cfg = f.config.empty() ? cmt::ProjectConfig{} : cmt::load_project_config(f.config);
  if (!f.out.empty()) {
    cfg.work_root = f.out;
  } else if (cfg.work_root.empty()) {
    if (const char* env = std::getenv("CMT_WORK_ROOT")) cfg.work_root = env;
  }
  if (cfg.work_root.empty()) throw cmt::Error(cmt::ErrorCode::InvalidArgument, "no work root: use --out, work_root, or CMT_WORK_ROOT");
  if (f.threads) cfg.threads = *f.threads;
  if (f.seed) cfg.seed = *f.seed;
  cfg.finalize();
  return cfg;
}

std::filesystem::path template_dir_of(const Flags& f, const cmt::ProjectConfig& cfg) {
  return f.template_dir.empty() ? cmt::WorkLayout{cfg.work_root}.template_dir() : std::filesystem::path(f.template_dir);
}

int finish(const cmt::CommandResult& r) {
  std::cerr << r.processed << " processed, " << r.failures.size() << " failed\n";
  return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cartilage template learning, registration and morphometrics"};
  app.require_subcommand(1);
  Flags f;
  auto* standardize = app.add_subcommand("standardize", "reorient, resample, normalise and laterality-standardise");
  add_common(standardize, f, true, false);
  auto* learn = app.add_subcommand("learn-template", "learn the cartilage template from the train split");
  add_common(learn, f, true, true);
  auto* reg = app.add_subcommand("register", "register the template to each test subject");
  add_common(reg, f, true, true);
  auto* evaluate = app.add_subcommand("evaluate", "DSC / HD95 / area difference of warped template masks");
  add_common(evaluate, f, true, false);
  auto* quantify = app.add_subcommand("quantify", "regional thickness, area and FCL for the analysis split");
  add_common(quantify, f, true, true);
  bool no_template = false;
  quantify->add_flag("--no-template", no_template, "skip pose normalisation and FCL");
  auto* report = app.add_subcommand("report", "merge per-subject metrics into a summary");
  add_common(report, f, false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    const cmt::ProjectConfig cfg = resolve_config(f);
    auto manifest = [&] { return cmt::Manifest::load(f.manifest, cfg.data_root); };
    if (standardize->parsed()) return finish(cmt::cmd_standardize(cfg, manifest(), std::cerr));
    if (learn->parsed()) return finish(cmt::cmd_learn_template(cfg, manifest(), template_dir_of(f, cfg), std::cerr));
    if (reg->parsed()) return finish(cmt::cmd_register(cfg, manifest(), template_dir_of(f, cfg), std::cerr));
    if (evaluate->parsed()) return finish(cmt::cmd_evaluate(cfg, manifest(), std::cerr));
    if (quantify->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (!no_template) dir = template_dir_of(f, cfg);
      return finish(cmt::cmd_quantify(cfg, manifest(), dir, std::cerr));
    }
    if (report->parsed()) return finish(cmt::cmd_report(cfg, std::cout));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
