#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pedcc/config.hpp"
#include "pedcc/errors.hpp"
#include "pedcc/kernels.hpp"
#include "pedcc/trainer.hpp"

namespace fs = std::filesystem;
using namespace pedcc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kWarning = 2, kFailure = 3 };

// Validation-type failures map to exit 1, anything else at runtime to 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

// ---- generate-centroids -----------------------------------------------------------

struct CentroidArgs {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string method = "repulsion";
  SolverConfig solver;
};

int cmd_generate_centroids(const CentroidArgs& a) {
  if (a.classes < 2) throw UsageError("--classes must be at least 2");
  if (a.dim < 2) throw UsageError("--dim must be at least 2");
  a.solver.validate();
  const CentroidMethod method = parse_method(a.method);

  bool converged = true;
  double residual = 0.0;
  std::size_t iterations = 0;
  CentroidSet cs = [&] {
    if (method == CentroidMethod::simplex) return simplex_centroids(a.classes, a.dim);
    PedccResult r = generate_pedcc(a.classes, a.dim, a.seed, a.solver);
    converged = r.converged;
    residual = r.residual;
    iterations = r.iterations;
    if (!r.monotone_residual) std::cout << "note: residual was not monotone (crowded set)\n";
    return r.centroids;
  }();
  if (cs.crowded()) std::cout << "note: " << a.classes << " classes in " << a.dim << " dimensions is crowded\n";
  {
    std::ofstream probe(a.out, std::ios::binary);
    if (!probe) throw UsageError("cannot open '" + a.out + "' for writing");
  }
  save_centroids(cs, a.out);
  std::cout << "wrote " << a.out << '\n'
            << "min_pairwise_distance " << format_real(min_pairwise_distance(cs)) << '\n'
            << "residual " << format_real(residual) << '\n'
            << "iterations " << iterations << '\n';
  if (!converged) {
    std::cerr << "warning: solver did not converge within " << a.solver.max_iters
              << " iterations; file written anyway\n";
    return kWarning;
  }
  return kOk;
}

// ---- config handling ----------------------------------------------------------------

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  try {
    if (path.empty()) {
      cfg = default_run_config();
    } else {
      if (!fs::is_regular_file(path)) throw UsageError("config file '" + path + "' does not exist");
      cfg = load_run_config(path);
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    validate_run_config(cfg);
  } catch (const FormatError& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

nlohmann::ordered_json hyperparams_json(const HyperParams& hp) {
  nlohmann::ordered_json j;
  j["s"] = hp.s;
  j["m"] = hp.m;
  j["n_root"] = hp.n_root;
  j["lambda1"] = hp.lambda1;
  j["lambda2"] = hp.lambda2;
  j["lambda3"] = hp.lambda3;
  j["lambda4"] = hp.lambda4;
  j["sigma"] = hp.sigma ? nlohmann::ordered_json(*hp.sigma) : nlohmann::ordered_json("median");
  j["normalized_features"] = hp.normalized_features;
  return j;
}

// ---- train ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  const RunConfig cfg = resolve_config(config_path, overrides);
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + dir.string() + "'");

  ExperimentResult res = run_experiment(cfg.experiment);
  const TrainReport& rep = res.report;

  save_checkpoint(res.model, (dir / "checkpoint.txt").string());
  save_centroids(res.model.centroids(), (dir / "centroids.txt").string());
  write_text(dir / "report.csv", report_csv(rep));
  if (cfg.experiment.data.kind == DataSpec::Kind::blobs) {
    const Datasets d = load_datasets(cfg.experiment.data);
    write_dataset_csv(d.train, (dir / "train.csv").string());
    write_dataset_csv(d.test, (dir / "test.csv").string());
  }

  nlohmann::ordered_json j;
  nlohmann::ordered_json echo = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_entries(cfg)) echo[k] = v;
  j["config"] = echo;
  j["effective_hyperparams"] = hyperparams_json(rep.effective);
  j["steps"] = cfg.experiment.training.total_steps;
  j["final_test_accuracy"] = rep.final_test_accuracy;
  j["final_test_error"] = 1.0 - rep.final_test_accuracy;
  j["final_train_accuracy"] = rep.records.back().train_accuracy;
  j["final_loss"] = rep.records.back().loss.total;
  j["centroids_converged"] = res.centroids_converged;
  j["parameter_count"] = res.model.parameter_count();
  j["kernel_isa"] = std::string(kernels::isa_name(kernels::active_isa()));
  j["wall_seconds"] = rep.wall_seconds;
  write_text(dir / "summary.json", j.dump(2) + "\n");

  std::cout << "final test accuracy " << format_real(rep.final_test_accuracy) << '\n'
            << "final test error " << format_real(1.0 - rep.final_test_accuracy) << '\n'
            << "outputs in " << dir.string() << '\n';
  if (!res.centroids_converged) {
    std::cerr << "warning: centroid solver did not converge\n";
    return kWarning;
  }
  return kOk;
}

// ---- eval / export ---------------------------------------------------------------------

Model open_checkpoint(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("checkpoint '" + path + "' does not exist");
  try {
    return load_checkpoint(path);
  } catch (const FormatError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

// A directory is read as the CIFAR-10 test split, a file as label,f0,... CSV.
Dataset open_data(const std::string& path, const Model& model) {
  if (fs::is_directory(path)) return load_cifar10(path).second;
  if (!fs::is_regular_file(path)) throw UsageError("data '" + path + "' does not exist");
  Dataset ds;
  try {
    ds = read_dataset_csv(path, model.config().num_classes);
  } catch (const FormatError& e) {
    throw UsageError(path + ": " + e.what());
  }
  if (ds.sample_shape != model.config().input_shape)
    throw UsageError("data has feature dim " + shape_str(ds.sample_shape) + " but the checkpoint expects " +
                     shape_str(model.config().input_shape));
  return ds;
}

int cmd_eval(const std::string& checkpoint, const std::string& data) {
  Model model = open_checkpoint(checkpoint);
  const Dataset ds = open_data(data, model);
  EvalResult r;
  try {
    r = evaluate(model, ds);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::cout << "samples " << r.count << '\n'
            << "accuracy " << format_real(r.accuracy) << '\n'
            << "test_error " << format_real(1.0 - r.accuracy) << '\n'
            << "mean_l1 " << format_real(r.mean_l1) << '\n';
  for (std::size_t k = 0; k < r.per_class.size(); ++k)
    std::cout << "class " << k << " accuracy " << (std::isnan(r.per_class[k]) ? "n/a" : format_real(r.per_class[k]))
              << '\n';
  return kOk;
}

std::string scatter_svg(const Tensor& z, const std::vector<int>& labels, const CentroidSet& cs) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double size = 480.0, mid = size / 2, radius = 200.0;
  auto px = [&](double v) { return mid + radius * v; };
  auto py = [&](double v) { return mid - radius * v; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\" viewBox=\"0 0 "
     << size << ' ' << size << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<circle cx=\"" << mid << "\" cy=\"" << mid << "\" r=\"" << radius
     << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const char* color = labels[i] < 0 ? "#000000" : palette[labels[i] % 10];
    os << "<circle cx=\"" << px(z.at(i, 0)) << "\" cy=\"" << py(z.at(i, 1)) << "\" r=\"2\" fill=\"" << color
       << "\" fill-opacity=\"0.5\"/>\n";
  }
  for (std::size_t k = 0; k < cs.num_classes(); ++k) {
    const auto c = cs.row(k);
    os << "<circle cx=\"" << px(c[0]) << "\" cy=\"" << py(c[1]) << "\" r=\"6\" fill=\"none\" stroke=\""
       << palette[k % 10] << "\" stroke-width=\"2\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

int cmd_export_features(const std::string& checkpoint, const std::string& data, const std::string& out,
                        std::string centroid_out, const std::string& svg) {
  Model model = open_checkpoint(checkpoint);
  const std::size_t D = model.config().feature_dim;
  if (!svg.empty() && D != 2)
    throw UsageError("--svg needs a 2-D feature space, the checkpoint has feature dim " + std::to_string(D));
  const Dataset ds = open_data(data, model);

  Dataset feats;
  feats.sample_shape = {D};
  feats.num_classes = ds.num_classes;
  feats.labels = ds.labels;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < ds.size(); begin += 512) {
    rows.clear();
    for (std::size_t i = begin; i < std::min(ds.size(), begin + 512); ++i) rows.push_back(i);
    const Tensor z = l2_normalize_rows(model.features(ds.gather(rows), false).detach());
    feats.samples.insert(feats.samples.end(), z.data().begin(), z.data().end());
  }
  write_dataset_csv(feats, out);

  if (centroid_out.empty()) {
    fs::path p(out);
    centroid_out = (p.parent_path() / (p.stem().string() + "_centroids.csv")).string();
  }
  std::ostringstream cs;
  cs << "class";
  for (std::size_t j = 0; j < D; ++j) cs << ",f" << j;
  cs << '\n';
  for (std::size_t k = 0; k < model.centroids().num_classes(); ++k) {
    cs << k;
    for (double v : model.centroids().row(k)) cs << ',' << format_real(v);
    cs << '\n';
  }
  write_text(centroid_out, cs.str());

  if (!svg.empty()) {
    const Tensor z = Tensor::from({feats.size(), D}, feats.samples);
    write_text(svg, scatter_svg(z, feats.labels, model.centroids()));
  }
  std::cout << "wrote " << feats.size() << " feature rows to " << out << '\n'
            << "wrote centroids to " << centroid_out << '\n';
  if (!svg.empty()) std::cout << "wrote scatter plot to " << svg << '\n';
  return kOk;
}

// ---- ablation ------------------------------------------------------------------------

struct AblationArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string grid = "default";
  std::size_t seeds = 3;
  std::size_t threads = 0;
  bool sweep_only = false;
  std::string out;
};

int cmd_ablation(const AblationArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.overrides);
  if (a.seeds == 0) throw UsageError("--seeds must be positive");
  AblationGrid grid;
  try {
    grid.sweep = AblationGrid::parse_sweep(a.grid, cfg.experiment.training.hp);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  grid.include_ablations = !a.sweep_only;
  grid.seeds.clear();
  for (std::size_t s = 0; s < a.seeds; ++s) grid.seeds.push_back(cfg.experiment.training.seed + s);

  const auto rows = run_ablation_suite(cfg.experiment, grid, a.threads);
  const std::string csv = ablation_csv(rows);
  std::string out = a.out;
  if (out.empty()) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    out = (fs::path(cfg.output_dir) / "ablation.csv").string();
  }
  write_text(out, csv);
  std::cout << csv << "wrote " << out << '\n';
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Semi-supervised classification with predefined evenly-distributed class centroids"};
  app.require_subcommand(1);
  std::string isa = "auto";
  app.add_option("--isa", isa, "Kernel variant: auto, scalar or avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}))
      ->capture_default_str();

  CentroidArgs ca;
  auto* gen = app.add_subcommand("generate-centroids", "Generate class centroids on the unit hypersphere");
  gen->add_option("--classes", ca.classes, "Number of classes C (≥ 2)")->required();
  gen->add_option("--dim", ca.dim, "Feature dimension D (≥ 2)")->required();
  gen->add_option("--seed", ca.seed, "Initialization seed")->capture_default_str();
  gen->add_option("--out", ca.out, "Output centroid file")->required();
  gen->add_option("--method", ca.method, "repulsion or simplex")
      ->check(CLI::IsMember({"repulsion", "simplex"}))
      ->capture_default_str();
  gen->add_option("--max-iters", ca.solver.max_iters, "Solver iteration cap")->capture_default_str();
  gen->add_option("--step-size", ca.solver.step_size, "Initial solver step")->capture_default_str();
  gen->add_option("--tolerance", ca.solver.convergence_tol, "Max tangential force at equilibrium")
      ->capture_default_str();
  gen->add_option("--force-exponent", ca.solver.force_exponent, "Repulsion falls off as 1/d^p")
      ->capture_default_str();

  std::string train_config;
  std::vector<std::string> train_sets;
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint, report CSV and JSON summary");
  tr->add_option("--config", train_config, "key = value config file (defaults: blobs benchmark)");
  tr->add_option("--set", train_sets, "Override one config key, e.g. --set loss.lambda3=400")
      ->type_name("KEY=VALUE")
      ->allow_extra_args(false);

  std::string ev_ckpt, ev_data;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on labeled data");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "CSV (label,f0,...) or CIFAR-10 directory")->required();

  std::string ex_ckpt, ex_data, ex_out, ex_cent, ex_svg;
  auto* ex = app.add_subcommand("export-features", "Write normalized features and centroids as CSV");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  ex->add_option("--data", ex_data, "CSV (label,f0,...) or CIFAR-10 directory")->required();
  ex->add_option("--out", ex_out, "Feature CSV path")->required();
  ex->add_option("--centroids-out", ex_cent, "Centroid CSV path (default <out>_centroids.csv)");
  ex->add_option("--svg", ex_svg, "Also draw a 2-D scatter plot (feature dim 2 only)");

  AblationArgs aa;
  auto* ab = app.add_subcommand("ablation", "Loss ablations and a (lambda3, lambda4) sweep over seeds");
  ab->add_option("--config", aa.config, "key = value config file");
  ab->add_option("--set", aa.overrides, "Override one config key")->type_name("KEY=VALUE")->allow_extra_args(false);
  ab->add_option("--grid", aa.grid, "'default' or lambda3:lambda4 pairs, comma separated")->capture_default_str();
  ab->add_option("--seeds", aa.seeds, "Seeds per cell, counting up from train.seed")->capture_default_str();
  ab->add_option("--threads", aa.threads, "Worker threads (0: all cores, capped by PEDCC_SSL_THREADS)")
      ->capture_default_str();
  ab->add_flag("--sweep-only", aa.sweep_only, "Skip the three loss ablations");
  ab->add_option("--out", aa.out, "Result CSV (default <output.dir>/ablation.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (isa == "scalar") kernels::select(kernels::Isa::scalar);
    if (isa == "avx2") kernels::select(kernels::Isa::avx2);
    if (*gen) return cmd_generate_centroids(ca);
    if (*tr) return cmd_train(train_config, train_sets);
    if (*ev) return cmd_eval(ev_ckpt, ev_data);
    if (*ex) return cmd_export_features(ex_ckpt, ex_data, ex_out, ex_cent, ex_svg);
    if (*ab) return cmd_ablation(aa);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
