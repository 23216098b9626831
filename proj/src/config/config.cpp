#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>

#include "pedcc/config.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(x)) throw ArgumentError(key + ": '" + v + "' is not a finite number");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ArgumentError(key + ": '" + v + "' is not a non-negative integer");
  try {
    return std::stoull(v);
  } catch (const std::out_of_range&) {
    throw ArgumentError(key + ": '" + v + "' is out of range");
  }
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_uint(key, v)); }

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError(key + ": '" + v + "' is not true/false");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

// Loss weights only; datasets and budgets stay as configured.
void apply_preset(RunConfig& cfg, const std::string& name) {
  HyperParams& hp = cfg.experiment.training.hp;
  HyperParams p;
  if (name == "paper-cifar10") {
    p = HyperParams::paper_cifar10();
  } else if (name == "paper-svhn") {
    p = HyperParams::paper_svhn();
  } else {
    throw ArgumentError("preset: unknown preset '" + name + "' (expected paper-cifar10 or paper-svhn)");
  }
  hp.s = p.s;
  hp.m = p.m;
  hp.n_root = p.n_root;
  hp.lambda1 = p.lambda1;
  hp.lambda2 = p.lambda2;
  hp.lambda3 = p.lambda3;
  hp.lambda4 = p.lambda4;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define REAL(field)                                                                          \
  [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_real(k, v); }, \
      [](const RunConfig& c) { return format_real(c.field); }
#define SIZE(field)                                                                          \
  [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }
#define U64(field)                                                                           \
  [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_uint(k, v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }
#define BOOL(field)                                                                          \
  [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
      [](const RunConfig& c) { return bool_str(c.field); }
#define TEXT(field)                                                                \
  [](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
      [](const RunConfig& c) { return c.field; }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"output.dir", TEXT(output_dir)},
      {"data.kind",
       [](RunConfig& c, const std::string&, const std::string& v) { c.experiment.data.kind = parse_data_kind(v); },
       [](const RunConfig& c) { return data_kind_name(c.experiment.data.kind); }},
      {"data.classes", SIZE(experiment.data.classes)},
      {"data.input_dim", SIZE(experiment.data.input_dim)},
      {"data.per_class_train", SIZE(experiment.data.per_class_train)},
      {"data.per_class_test", SIZE(experiment.data.per_class_test)},
      {"data.separation", REAL(experiment.data.separation)},
      {"data.labeled_per_class", SIZE(experiment.data.labeled_per_class)},
      {"data.labeled_only", BOOL(experiment.data.labeled_only)},
      {"data.seed", U64(experiment.data.seed)},
      {"data.path", TEXT(experiment.data.path)},
      {"data.test_path", TEXT(experiment.data.test_path)},
      {"model.architecture",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.experiment.model.architecture = Architecture::parse(v);
       },
       [](const RunConfig& c) { return c.experiment.model.architecture.to_string(); }},
      {"model.feature_dim", SIZE(experiment.model.feature_dim)},
      {"model.seed", U64(experiment.model.seed)},
      {"centroids.method",
       [](RunConfig& c, const std::string&, const std::string& v) { c.experiment.centroid_method = parse_method(v); },
       [](const RunConfig& c) { return std::string(method_name(c.experiment.centroid_method)); }},
      {"centroids.seed", U64(experiment.centroid_seed)},
      {"centroids.max_iters", SIZE(experiment.solver.max_iters)},
      {"centroids.step_size", REAL(experiment.solver.step_size)},
      {"centroids.tolerance", REAL(experiment.solver.convergence_tol)},
      {"centroids.force_exponent", REAL(experiment.solver.force_exponent)},
      {"train.steps", SIZE(experiment.training.total_steps)},
      {"train.lr", REAL(experiment.training.base_lr)},
      {"train.momentum", REAL(experiment.training.momentum)},
      {"train.labeled_batch", SIZE(experiment.training.composition.labeled)},
      {"train.unlabeled_batch", SIZE(experiment.training.composition.unlabeled)},
      {"train.ablation",
       [](RunConfig& c, const std::string&, const std::string& v) { c.experiment.training.ablation = parse_ablation(v); },
       [](const RunConfig& c) { return ablation_name(c.experiment.training.ablation); }},
      {"train.seed", U64(experiment.training.seed)},
      {"train.eval_every", SIZE(experiment.training.eval_every)},
      {"train.augment",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.experiment.training.policy = AugmentPolicy::parse(v);
       },
       [](const RunConfig& c) { return c.experiment.training.policy.to_string(); }},
      {"loss.s", REAL(experiment.training.hp.s)},
      {"loss.m", REAL(experiment.training.hp.m)},
      {"loss.n_root", REAL(experiment.training.hp.n_root)},
      {"loss.lambda1", REAL(experiment.training.hp.lambda1)},
      {"loss.lambda2", REAL(experiment.training.hp.lambda2)},
      {"loss.lambda3", REAL(experiment.training.hp.lambda3)},
      {"loss.lambda4", REAL(experiment.training.hp.lambda4)},
      {"loss.sigma",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "median") c.experiment.training.hp.sigma.reset();
         else c.experiment.training.hp.sigma = to_real(k, v);
       },
       [](const RunConfig& c) {
         const auto& s = c.experiment.training.hp.sigma;
         return s ? format_real(*s) : std::string("median");
       }},
      {"loss.normalized_features", BOOL(experiment.training.hp.normalized_features)},
  };
  return table;
}

#undef REAL
#undef SIZE
#undef U64
#undef BOOL
#undef TEXT

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  ExperimentSpec& e = c.experiment;
  e.model.architecture = Architecture::mlp({64, 64});
  e.model.feature_dim = 8;
  e.training.total_steps = 4000;
  e.training.base_lr = 0.03;
  e.training.momentum = 0.9;
  e.training.composition = {16, 64};
  e.training.eval_every = 500;
  e.training.policy = AugmentPolicy::default_vector();
  return c;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") return apply_preset(cfg, value);
  if (key == "seed") {
    cfg.experiment = cfg.experiment.with_seed(to_uint(key, value));
    return;
  }
  for (const auto& k : keys())
    if (key == k.name) return k.set(cfg, key, value);
  throw ArgumentError("unknown key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ArgumentError("override '" + assignment + "' must be key=value");
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_run_config(std::istream& is) {
  RunConfig cfg = default_run_config();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected 'key = value', got '" + line + "'", lineno);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw FormatError("missing key before '='", lineno);
    try {
      set_config_value(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  return parse_run_config(is);
}

void validate_run_config(const RunConfig& cfg) {
  const ExperimentSpec& e = cfg.experiment;
  e.data.validate();
  e.training.validate();
  e.solver.validate();
  if (e.data.kind == DataSpec::Kind::blobs && e.data.classes > e.data.input_dim + 1)
    throw ArgumentError("blobs with " + std::to_string(e.data.classes) + " classes need data.input_dim ≥ " +
                        std::to_string(e.data.classes - 1));
  if (e.model.feature_dim < 2) throw ArgumentError("model.feature_dim must be at least 2");
  if (e.centroid_method == CentroidMethod::simplex && e.data.classes > e.model.feature_dim + 1)
    throw ArgumentError("simplex centroids need model.feature_dim ≥ classes − 1");
  if (cfg.output_dir.empty()) throw ArgumentError("output.dir must not be empty");
  namespace fs = std::filesystem;
  if (e.data.kind == DataSpec::Kind::cifar10 && !fs::is_directory(e.data.path))
    throw ArgumentError("data.path '" + e.data.path + "' is not a directory");
  if (e.data.kind == DataSpec::Kind::csv)
    for (const auto& p : {e.data.path, e.data.test_path})
      if (!fs::is_regular_file(p)) throw ArgumentError("data file '" + p + "' does not exist");
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out{"preset", "seed"};
  for (const auto& k : keys()) out.emplace_back(k.name);
  return out;
}

}  // namespace pedcc
