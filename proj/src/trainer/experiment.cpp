#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "pedcc/errors.hpp"
#include "pedcc/trainer.hpp"

namespace pedcc {

std::string data_kind_name(DataSpec::Kind k) {
  switch (k) {
    case DataSpec::Kind::blobs: return "blobs";
    case DataSpec::Kind::cifar10: return "cifar10";
    case DataSpec::Kind::csv: return "csv";
  }
  return "?";
}

DataSpec::Kind parse_data_kind(const std::string& name) {
  for (auto k : {DataSpec::Kind::blobs, DataSpec::Kind::cifar10, DataSpec::Kind::csv})
    if (name == data_kind_name(k)) return k;
  throw ArgumentError("unknown dataset kind '" + name + "' (expected blobs, cifar10 or csv)");
}

void DataSpec::validate() const {
  if (classes < 2) throw ArgumentError("data.classes must be at least 2");
  switch (kind) {
    case Kind::blobs:
      if (!(separation > 0.0)) throw ArgumentError("data.separation must be positive");
      if (labeled_per_class == 0 || labeled_per_class > per_class_train)
        throw ArgumentError("data.labeled_per_class must lie in [1, data.per_class_train]");
      if (per_class_test == 0) throw ArgumentError("data.per_class_test must be positive");
      break;
    case Kind::cifar10:
      if (path.empty()) throw ArgumentError("data.path must name the CIFAR-10 directory");
      if (classes != 10) throw ArgumentError("CIFAR-10 has 10 classes");
      if (labeled_per_class == 0) throw ArgumentError("data.labeled_per_class must be positive");
      break;
    case Kind::csv:
      if (path.empty() || test_path.empty()) throw ArgumentError("csv data needs data.path and data.test_path");
      break;
  }
}

Datasets load_datasets(const DataSpec& spec) {
  spec.validate();
  Datasets d;
  switch (spec.kind) {
    case DataSpec::Kind::blobs: {
      auto [tr, te] = gen_blobs(spec.classes, spec.input_dim, spec.per_class_train, spec.per_class_test,
                                spec.separation, spec.seed);
      d.train = split_labels(tr, spec.labeled_per_class, mix_seed(spec.seed, 0x53504c54));
      d.test = std::move(te);
      break;
    }
    case DataSpec::Kind::cifar10: {
      auto [tr, te] = load_cifar10(spec.path);
      d.train = split_labels(tr, spec.labeled_per_class, mix_seed(spec.seed, 0x53504c54));
      d.test = std::move(te);
      break;
    }
    case DataSpec::Kind::csv:
      d.train = read_dataset_csv(spec.path, spec.classes);
      d.test = read_dataset_csv(spec.test_path, spec.classes);
      d.test.split = Split::test;
      break;
  }
  if (spec.labeled_only) d.train = labeled_subset(d.train);
  return d;
}

ExperimentSpec ExperimentSpec::with_seed(std::uint64_t seed) const {
  ExperimentSpec s = *this;
  s.data.seed = seed;
  s.model.seed = seed;
  s.centroid_seed = seed;
  s.training.seed = seed;
  return s;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.training.validate();
  Datasets d = load_datasets(spec.data);
  ModelConfig mc = spec.model;
  mc.input_shape = d.train.sample_shape;
  mc.num_classes = d.train.num_classes;
  mc.validate();

  bool converged = true;
  std::optional<CentroidSet> cs;
  if (spec.centroid_method == CentroidMethod::simplex) {
    cs = simplex_centroids(mc.num_classes, mc.feature_dim);
  } else {
    PedccResult r = generate_pedcc(mc.num_classes, mc.feature_dim, spec.centroid_seed, spec.solver);
    converged = r.converged;
    cs = std::move(r.centroids);
  }
  Model model(mc, std::move(*cs));
  TrainReport report = train(model, d.train, d.test, spec.training);
  return {std::move(report), std::move(model), converged};
}

AblationGrid AblationGrid::defaults(const HyperParams& base) {
  AblationGrid g;
  const double l3 = base.lambda3, l4 = base.lambda4;
  g.sweep = {{l3, l4 / 2}, {l3, l4}, {l3, 2 * l4}, {l3 / 2, l4}, {1.5 * l3, l4}};
  return g;
}

std::vector<SweepPoint> AblationGrid::parse_sweep(const std::string& text, const HyperParams& base) {
  if (text == "default") return defaults(base).sweep;
  std::vector<SweepPoint> out;
  if (text.empty() || text == "none") return out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ArgumentError("sweep point '" + item + "' must be lambda3:lambda4");
    char* end = nullptr;
    const std::string a = item.substr(0, colon), b = item.substr(colon + 1);
    const double l3 = std::strtod(a.c_str(), &end);
    if (a.empty() || *end != '\0') throw ArgumentError("sweep point '" + item + "' has a malformed lambda3");
    const double l4 = std::strtod(b.c_str(), &end);
    if (b.empty() || *end != '\0') throw ArgumentError("sweep point '" + item + "' has a malformed lambda4");
    if (!(l3 >= 0.0) || !(l4 >= 0.0)) throw ArgumentError("sweep weights must be non-negative");
    out.push_back({l3, l4});
  }
  return out;
}

namespace {

std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PEDCC_SSL_THREADS"); env && *env) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (*end != '\0' || cap < 1) throw ArgumentError("PEDCC_SSL_THREADS must be a positive integer");
    n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

}  // namespace

std::vector<AblationRow> run_ablation_suite(const ExperimentSpec& base, const AblationGrid& grid, std::size_t threads) {
  if (grid.seeds.empty()) throw ArgumentError("ablation grid needs at least one seed");
  std::vector<AblationRow> rows;
  if (grid.include_ablations)
    for (Ablation a : {Ablation::ce_kl, Ablation::pedcc_kl, Ablation::pedcc_kl_mmd})
      rows.push_back({"ablation", a, effective_hyperparams(base.training.hp, a), {}, 0.0, 0.0});
  for (const auto& p : grid.sweep) {
    HyperParams hp = base.training.hp;
    hp.lambda3 = p.lambda3;
    hp.lambda4 = p.lambda4;
    rows.push_back({"sweep", Ablation::pedcc_kl_mmd, hp, {}, 0.0, 0.0});
  }
  for (auto& r : rows) r.effective.validate();
  base.training.validate();

  const std::size_t S = grid.seeds.size(), jobs = rows.size() * S;
  std::vector<double> errors(jobs, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        const AblationRow& row = rows[j / S];
        ExperimentSpec spec = base.with_seed(grid.seeds[j % S]);
        // Weights are already effective; the ablation tag keeps reporting honest.
        spec.training.hp = row.effective;
        spec.training.ablation = row.ablation;
        errors[j] = 1.0 - run_experiment(spec).report.final_test_accuracy;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs;
      }
    }
  };
  const std::size_t n = worker_count(threads, jobs);
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& row = rows[r];
    row.errors.assign(errors.begin() + static_cast<std::ptrdiff_t>(r * S),
                      errors.begin() + static_cast<std::ptrdiff_t>((r + 1) * S));
    double sum = 0.0;
    for (double e : row.errors) sum += e;
    row.mean_error = sum / static_cast<double>(S);
    double ss = 0.0;
    for (double e : row.errors) ss += (e - row.mean_error) * (e - row.mean_error);
    row.std_error = S > 1 ? std::sqrt(ss / static_cast<double>(S - 1)) : 0.0;
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "group,ablation,lambda1,lambda2,lambda3,lambda4,m,seeds,mean_error,std_error,errors\n";
  for (const auto& r : rows) {
    os << r.group << ',' << ablation_name(r.ablation) << ',' << format_real(r.effective.lambda1) << ','
       << format_real(r.effective.lambda2) << ',' << format_real(r.effective.lambda3) << ','
       << format_real(r.effective.lambda4) << ',' << format_real(r.effective.m) << ',' << r.errors.size() << ','
       << format_real(r.mean_error) << ',' << format_real(r.std_error) << ',';
    for (std::size_t i = 0; i < r.errors.size(); ++i) os << (i ? ";" : "") << format_real(r.errors[i]);
    os << '\n';
  }
  return os.str();
}

}  // namespace pedcc
