#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cmt/nifti.hpp"
#include "cmt/pyramid.hpp"
#include "cmt/registration.hpp"
#include "cmt/standardize.hpp"

namespace cmt {
namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, key + ": not a number: " + s);
  }
  return v;
}

long parse_int(const std::string& key, const std::string& s) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, key + ": not an integer: " + s);
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Flat view of a vector field's components.
std::span<double> flat(VectorField& f) { return {f.data.data()->data(), f.data.size() * 3}; }

class Adam {
 public:
  explicit Adam(std::size_t n) : m_(n, 0.0), s_(n, 0.0) {}

  void step(std::span<double> x, std::span<const double> g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g[i];
      s_[i] = kBeta2 * s_[i] + (1.0 - kBeta2) * g[i] * g[i];
      x[i] -= lr * (m_[i] / c1) / (std::sqrt(s_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<double> m_;
  std::vector<double> s_;
  int t_ = 0;
};

// One optimisation problem on one pyramid level.
struct LevelProblem {
  std::vector<Grid> grids;  // grids[0] = full resolution ... grids[level]
  Grid param_grid;          // where velocities live at this level
  std::vector<ScalarField> targets;
  ObjectiveWeights weights;
  int squaring_steps = 7;
  int threads = 1;
};

const Grid& work_grid(const LevelProblem& p) { return p.grids.back(); }

ScalarField template_at_level(const ScalarField& full, const LevelProblem& p) {
  ScalarField t = full;
  for (std::size_t l = 1; l < p.grids.size(); ++l) t = downsample2(t);
  return t;
}

std::vector<VelocityField> to_work(const std::vector<VelocityField>& params, const LevelProblem& p) {
  if (p.param_grid.same_as(work_grid(p), 0.0)) return params;
  std::vector<VelocityField> out;
  out.reserve(params.size());
  for (const auto& v : params) {
    VelocityField w(work_grid(p), p.squaring_steps);
    w.data = resample_field_to(v, work_grid(p)).data;
    out.push_back(std::move(w));
  }
  return out;
}

struct Evaluation {
  double loss = 0.0;
  ScalarField template_grad;
  std::vector<VectorField> velocity_grads;
};

Evaluation evaluate(const LevelProblem& p, const ScalarField& full_template, const std::vector<VelocityField>& params,
                    bool learn_template) {
  const ScalarField t = template_at_level(full_template, p);
  const auto work = to_work(params, p);
  auto g = objective_gradient(t, p.targets, work, p.weights, learn_template, p.threads);
  Evaluation e;
  e.loss = g.value.total;
  if (learn_template) {
    ScalarField gt = std::move(g.template_grad);
    for (std::size_t l = p.grids.size() - 1; l >= 1; --l) gt = downsample2_adjoint(gt, p.grids[l - 1]);
    e.template_grad = std::move(gt);
  }
  if (p.param_grid.same_as(work_grid(p), 0.0)) {
    e.velocity_grads = std::move(g.velocity_grads);
  } else {
    for (const auto& gv : g.velocity_grads) {
      e.velocity_grads.push_back(resample_field_to_adjoint(gv, work_grid(p), p.param_grid));
    }
  }
  return e;
}

struct StageSettings {
  int stage = 1;
  int iterations = 200;
  double step = 0.05;
  double template_step = 0.01;
  double tol = 1e-5;
  bool learn_template = false;
};

constexpr int kDivergenceRun = 50;
constexpr int kStallWindow = 10;

// Adam with linear step decay; best parameters are restored on exit.
void optimize_level(const LevelProblem& p, const StageSettings& s, int level, ScalarField& tmpl,
                    std::vector<VelocityField>& params, std::vector<LossRecord>& history) {
  std::vector<Adam> adam;
  adam.reserve(params.size());
  for (const auto& v : params) adam.emplace_back(v.size() * 3);
  Adam adam_t(s.learn_template ? tmpl.size() : 0);

  double best = std::numeric_limits<double>::infinity();
  ScalarField best_t = tmpl;
  std::vector<VelocityField> best_v = params;
  std::vector<double> best_trace;
  double previous = std::numeric_limits<double>::infinity();
  int increases = 0;
  const char* kernel = to_string(p.weights.similarity.kind);

  for (int it = 0; it < s.iterations; ++it) {
    Evaluation e;
    try {
      e = evaluate(p, tmpl, params, s.learn_template);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::NonFinite) throw Error(ErrorCode::Diverged, "loss became non-finite");
      throw;
    }
    history.push_back({s.stage, level, it, kernel, e.loss});
    if (e.loss < best) {
      best = e.loss;
      best_t = tmpl;
      best_v = params;
    }
    best_trace.push_back(best);
    increases = e.loss > previous ? increases + 1 : 0;
    previous = e.loss;
    if (increases >= kDivergenceRun) throw Error(ErrorCode::Diverged, "loss increased for 50 consecutive steps");
    if (it >= kStallWindow) {
      const double before = best_trace[static_cast<std::size_t>(it - kStallWindow)];
      if (before - best <= s.tol * std::abs(before)) break;
    }
    const double decay = 1.0 - 0.9 * static_cast<double>(it) / static_cast<double>(s.iterations);
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam[i].step(flat(params[i]), flat(e.velocity_grads[i]), s.step * decay);
    }
    if (s.learn_template) adam_t.step(tmpl.data(), e.template_grad.data(), s.template_step * decay);
  }
  tmpl = std::move(best_t);
  params = std::move(best_v);
}

std::vector<Grid> pyramid_grids(const Grid& full, int level) {
  std::vector<Grid> g{full};
  for (int l = 0; l < level; ++l) g.push_back(coarser_grid(g.back()));
  return g;
}

Grid param_grid_for(const Grid& work, double factor) {
  if (factor == 1.0) return work;
  return rescaled_grid(work, Vec3::Constant(1.0 / factor));
}

std::vector<ScalarField> targets_at_level(const std::vector<ScalarField>& full, int level) {
  std::vector<ScalarField> out;
  out.reserve(full.size());
  for (const auto& t : full) {
    ScalarField d = t;
    for (int l = 0; l < level; ++l) d = downsample2(d);
    out.push_back(std::move(d));
  }
  return out;
}

void move_params_to(std::vector<VelocityField>& params, const Grid& g, int steps) {
  for (auto& v : params) {
    if (v.grid.same_as(g, 0.0)) continue;
    VelocityField r(g, steps);
    if (!v.data.empty()) r.data = resample_field_to(v, g).data;
    v = std::move(r);
  }
}

ObjectiveWeights stage_weights(const RegistrationConfig& cfg, int stage) {
  ObjectiveWeights w;
  w.lambda1 = cfg.lambda1;
  w.lambda2 = cfg.lambda2;
  w.lambda3 = cfg.lambda3;
  w.lambda4 = stage == 1 ? cfg.lambda4 : cfg.lambda4_stage2;
  w.similarity.kind = stage == 1 ? cfg.similarity_stage1 : cfg.similarity_stage2;
  w.similarity.window_edge = cfg.lncc_window_edge;
  return w;
}

StageSettings stage_settings(const RegistrationConfig& cfg, int stage, bool learn) {
  StageSettings s;
  s.stage = stage;
  s.iterations = stage == 2 && cfg.stage2_iters >= 0 ? cfg.stage2_iters : cfg.iters_per_level;
  s.step = cfg.step_size;
  s.template_step = cfg.template_step_size;
  s.tol = cfg.convergence_rel_tol;
  s.learn_template = learn;
  return s;
}

// Runs a stage over levels [first_level .. 0].
void run_levels(const RegistrationConfig& cfg, int stage, int first_level, bool learn,
                const std::vector<ScalarField>& full_targets, ScalarField& tmpl, std::vector<VelocityField>& params,
                std::vector<LossRecord>& history) {
  const auto settings = stage_settings(cfg, stage, learn);
  for (int level = first_level; level >= 0; --level) {
    LevelProblem p;
    p.grids = pyramid_grids(tmpl.grid(), level);
    p.param_grid = param_grid_for(p.grids.back(), cfg.field_resolution_factor);
    p.targets = targets_at_level(full_targets, level);
    p.weights = stage_weights(cfg, stage);
    p.squaring_steps = cfg.squaring_steps;
    p.threads = cfg.threads;
    move_params_to(params, p.param_grid, cfg.squaring_steps);
    if (settings.iterations > 0) optimize_level(p, settings, level, tmpl, params, history);
  }
}

int max_level(const Grid& g, int requested) {
  int level = 0;
  Extents d = g.dims;
  while (level + 1 < requested && std::min({d[0], d[1], d[2]}) >= 16) {
    for (auto& x : d) x = (x + 1) / 2;
    ++level;
  }
  return level;
}

VelocityField to_full(const VelocityField& v, const Grid& full, int steps) {
  VelocityField out(full, steps);
  out.data = v.grid.same_as(full, 0.0) ? v.data : resample_field_to(v, full).data;
  return out;
}

}  // namespace

void RegistrationConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (lncc_window_edge < 3 || lncc_window_edge % 2 == 0) fail("lncc_window_edge must be odd and >= 3");
  for (double l : {lambda1, lambda2, lambda3, lambda4, lambda4_stage2}) {
    if (!(l >= 0.0) || !std::isfinite(l)) fail("loss weights must be finite and >= 0");
  }
  if (!(lambda1 > 0.0 || lambda2 > 0.0)) fail("at least one of lambda1, lambda2 must be > 0");
  if (pyramid_levels < 1) fail("pyramid_levels must be >= 1");
  if (iters_per_level < 0) fail("iters_per_level must be >= 0");
  if (!(step_size > 0.0)) fail("step_size must be > 0");
  if (!(template_step_size >= 0.0)) fail("template_step_size must be >= 0");
  if (!(convergence_rel_tol >= 0.0)) fail("convergence_rel_tol must be >= 0");
  if (squaring_steps < 1) fail("squaring_steps must be >= 1");
  if (field_resolution_factor != 1.0 && field_resolution_factor != 0.5) fail("field_resolution_factor must be 1 or 0.5");
  if (!(threshold > 0.0 && threshold <= 1.0)) fail("threshold must be in (0, 1]");
  if (threads < 1) fail("threads must be >= 1");
}

std::vector<std::pair<std::string, std::string>> RegistrationConfig::to_key_values() const {
  // thread count is deliberately absent: it must not change any output byte
  return {
      {"similarity_stage1", to_string(similarity_stage1)},
      {"similarity_stage2", to_string(similarity_stage2)},
      {"lncc_window_edge", std::to_string(lncc_window_edge)},
      {"lambda1", format_double(lambda1)},
      {"lambda2", format_double(lambda2)},
      {"lambda3", format_double(lambda3)},
      {"lambda4", format_double(lambda4)},
      {"lambda4_stage2", format_double(lambda4_stage2)},
      {"pyramid_levels", std::to_string(pyramid_levels)},
      {"iters_per_level", std::to_string(iters_per_level)},
      {"stage2_iters", std::to_string(stage2_iters)},
      {"step_size", format_double(step_size)},
      {"template_step_size", format_double(template_step_size)},
      {"convergence_rel_tol", format_double(convergence_rel_tol)},
      {"squaring_steps", std::to_string(squaring_steps)},
      {"field_resolution_factor", format_double(field_resolution_factor)},
      {"threshold", format_double(threshold)},
      {"seed", std::to_string(seed)},
  };
}

void RegistrationConfig::apply_key_value(const std::string& key, const std::string& value) {
  auto as_int = [&] { return static_cast<int>(parse_int(key, value)); };
  auto as_double = [&] { return parse_double(key, value); };
  if (key == "similarity_stage1") similarity_stage1 = similarity_from_string(value);
  else if (key == "similarity_stage2") similarity_stage2 = similarity_from_string(value);
  else if (key == "lncc_window_edge") lncc_window_edge = as_int();
  else if (key == "lambda1") lambda1 = as_double();
  else if (key == "lambda2") lambda2 = as_double();
  else if (key == "lambda3") lambda3 = as_double();
  else if (key == "lambda4") lambda4 = as_double();
  else if (key == "lambda4_stage2") lambda4_stage2 = as_double();
  else if (key == "pyramid_levels") pyramid_levels = as_int();
  else if (key == "iters_per_level") iters_per_level = as_int();
  else if (key == "stage2_iters") stage2_iters = as_int();
  else if (key == "step_size") step_size = as_double();
  else if (key == "template_step_size") template_step_size = as_double();
  else if (key == "convergence_rel_tol") convergence_rel_tol = as_double();
  else if (key == "squaring_steps") squaring_steps = as_int();
  else if (key == "field_resolution_factor") field_resolution_factor = as_double();
  else if (key == "threshold") threshold = as_double();
  else if (key == "seed") seed = static_cast<unsigned>(parse_int(key, value));
  else if (key == "threads") threads = as_int();
  else throw Error(ErrorCode::ParseError, "unknown registration key: " + key);
}

SubjectEntry make_subject(std::string id, ImageVolume image, LabelMap labels) {
  SubjectEntry s;
  s.id = std::move(id);
  s.masked_image = mask_image(image, labels, cartilage_label_names());
  s.image = std::move(image);
  s.labels = std::move(labels);
  return s;
}

ProbabilisticMask build_template_mask(std::span<const LabelMap> labels, std::span<const DeformationField> inverse_fields,
                                      double tau) {
  if (labels.empty() || labels.size() != inverse_fields.size()) {
    throw Error(ErrorCode::InvalidArgument, "one inverse field per label map is required");
  }
  const Grid& g = labels[0].grid();
  std::set<std::uint8_t> present;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require_same_grid(g, labels[i].grid(), "template mask labels");
    require_same_grid(g, inverse_fields[i].grid, "template mask field");
    for (auto l : labels[i].present_labels()) present.insert(l);
  }
  ProbabilisticMask out;
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (auto l : present) {
    ScalarField p(g, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const ScalarField w = warp_indicator(labels[i], l, inverse_fields[i]);
      for (std::size_t x = 0; x < p.size(); ++x) p[x] += w[x];
    }
    for (std::size_t x = 0; x < p.size(); ++x) p[x] *= inv_n;
    out.probability.emplace(l, std::move(p));
  }
  out.mask = LabelMap(g, labels[0].schema());
  for (std::size_t x = 0; x < g.size(); ++x) {
    double best = -1.0;
    std::uint8_t label = 0;
    for (const auto& [l, p] : out.probability) {
      if (p[x] > best) {
        best = p[x];
        label = l;
      }
    }
    if (best >= tau) out.mask[x] = label;
  }
  return out;
}

LearnResult learn_template(std::vector<SubjectEntry> subjects, const RegistrationConfig& cfg) {
  cfg.validate();
  if (subjects.size() < 2) throw Error(ErrorCode::CohortTooSmall, "template learning needs at least two subjects");
  const Grid full = subjects[0].masked_image.grid();
  std::vector<ScalarField> targets;
  for (const auto& s : subjects) {
    require_same_grid(full, s.masked_image.grid(), "cohort image");
    require_same_grid(full, s.labels.grid(), "cohort labels");
    targets.push_back(volume_cast<double>(s.masked_image));
  }

  ScalarField tmpl(full, 0.0);
  for (const auto& t : targets) {
    for (std::size_t x = 0; x < tmpl.size(); ++x) tmpl[x] += t[x];
  }
  for (auto& x : tmpl.data()) x /= static_cast<double>(targets.size());

  LearnResult r;
  std::vector<VelocityField> params(subjects.size());
  const int top = max_level(full, cfg.pyramid_levels);
  run_levels(cfg, 1, top, cfg.template_step_size > 0.0, targets, tmpl, params, r.history);
  r.stage1_template = tmpl;
  run_levels(cfg, 2, 0, false, targets, tmpl, params, r.history);

  std::vector<LabelMap> labels;
  std::vector<DeformationField> inverses;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    VelocityField v = to_full(params[i], full, cfg.squaring_steps);
    FieldPair f = exponentiate(v);
    inverses.push_back(f.inverse);
    labels.push_back(subjects[i].labels);
    r.velocities.push_back(std::move(v));
    r.fields.push_back(std::move(f));
  }
  auto mask = build_template_mask(labels, inverses, cfg.threshold);
  r.model.image = volume_cast<float>(tmpl);
  r.model.probability = std::move(mask.probability);
  r.model.mask = std::move(mask.mask);
  r.model.threshold = cfg.threshold;
  r.model.n_train = static_cast<int>(subjects.size());
  r.model.config = cfg;
  r.template_field = std::move(tmpl);
  return r;
}

RegistrationResult register_images(const ScalarField& tmpl, const ScalarField& target, const RegistrationConfig& cfg) {
  cfg.validate();
  require_same_grid(tmpl.grid(), target.grid(), "registration target");
  RegistrationResult r;
  ScalarField frozen = tmpl;
  std::vector<VelocityField> params(1);
  const std::vector<ScalarField> targets{target};
  run_levels(cfg, 2, max_level(tmpl.grid(), cfg.pyramid_levels), false, targets, frozen, params, r.history);
  r.velocity = to_full(params[0], tmpl.grid(), cfg.squaring_steps);
  r.fields = exponentiate(r.velocity);
  return r;
}

RegistrationResult register_to_template(const TemplateModel& model, const ImageVolume& masked_target,
                                        const RegistrationConfig& cfg) {
  return register_images(volume_cast<double>(model.image), volume_cast<double>(masked_target), cfg);
}

void TemplateModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_volume(image, dir / "template.nii.gz");
  write_labels(mask, dir / "mask.nii.gz");
  std::string labels;
  for (const auto& [l, p] : probability) {
    write_volume(p, dir / ("prob_" + std::to_string(l) + ".nii.gz"));
    labels += (labels.empty() ? "" : ",") + std::to_string(l);
  }
  std::ofstream os(dir / "metadata.txt");
  if (!os) throw Error(ErrorCode::Io, "cannot write " + (dir / "metadata.txt").string());
  os << "threshold = " << format_double(threshold) << "\n";
  os << "n_train = " << n_train << "\n";
  os << "labels = " << labels << "\n";
  for (const auto& [name, value] : mask.schema().mapping()) os << "schema." << name << " = " << value << "\n";
  for (const auto& [k, v] : config.to_key_values()) os << "config." << k << " = " << v << "\n";
  if (!os) throw Error(ErrorCode::Io, "failed writing template metadata");
}

TemplateModel TemplateModel::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "metadata.txt");
  if (!is) throw Error(ErrorCode::Io, "missing template metadata in " + dir.string());
  TemplateModel m;
  std::map<std::string, int> schema;
  std::vector<int> labels;
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "bad metadata line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "threshold") {
      m.threshold = parse_double(key, value);
    } else if (key == "n_train") {
      m.n_train = static_cast<int>(parse_int(key, value));
    } else if (key == "labels") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!trim(item).empty()) labels.push_back(static_cast<int>(parse_int(key, trim(item))));
      }
    } else if (key.rfind("schema.", 0) == 0) {
      schema[key.substr(7)] = static_cast<int>(parse_int(key, value));
    } else if (key.rfind("config.", 0) == 0) {
      m.config.apply_key_value(key.substr(7), value);
    } else {
      throw Error(ErrorCode::ParseError, "unknown metadata key: " + key);
    }
  }
  const LabelSchema s = schema.empty() ? LabelSchema::knee_default() : LabelSchema(schema);
  m.image = read_volume(dir / "template.nii.gz").volume;
  m.mask = read_labels(dir / "mask.nii.gz", s).labels;
  for (int l : labels) {
    const auto p = read_volume(dir / ("prob_" + std::to_string(l) + ".nii.gz")).volume;
    m.probability.emplace(static_cast<std::uint8_t>(l), volume_cast<double>(p));
  }
  return m;
}

}  // namespace cmt
