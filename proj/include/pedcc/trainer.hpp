#pragma once

// Semi-supervised training loop: batch composition, the weighted loss,
// momentum SGD under a cosine schedule, periodic evaluation and the
// ablation/sweep driver.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pedcc/centroids.hpp"
#include "pedcc/data.hpp"
#include "pedcc/losses.hpp"
#include "pedcc/model.hpp"

namespace pedcc {

enum class Ablation { ce_kl, pedcc_kl, pedcc_kl_mmd };

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

// ce_kl: λ1 = 0, m = 0, λ4 = 0.  pedcc_kl: λ4 = 0.  pedcc_kl_mmd: unchanged.
HyperParams effective_hyperparams(const HyperParams& hp, Ablation ablation);

struct TrainingConfig {
  std::size_t total_steps = 4000;  // 0 runs only the initial evaluation
  double base_lr = 0.03;
  double momentum = 0.9;
  Composition composition;
  HyperParams hp;
  Ablation ablation = Ablation::pedcc_kl_mmd;
  std::uint64_t seed = 0;
  std::size_t eval_every = 500;
  AugmentPolicy policy = AugmentPolicy::default_vector();
  // Probe hooks: factors applied to the adjoint entering the teacher
  // (clean unlabeled) and student (augmented) predictions of the KL term.
  double teacher_grad_scale = 1.0;
  double student_grad_scale = 1.0;

  void validate() const;
};

// base_lr · ½(1 + cos(π·step/total_steps)); step must lie in [0, total_steps].
double lr_at(std::size_t step, const TrainingConfig& cfg);

// v ← momentum·v + g;  p ← p − lr·v. Throws ContractError on size mismatch.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum);

class SgdMomentum {
 public:
  explicit SgdMomentum(const std::vector<NamedTensor>& params);
  // Parameters without an accumulated gradient are treated as g = 0.
  void step(std::vector<NamedTensor>& params, double lr, double momentum);
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  std::vector<std::vector<double>> velocity_;
};

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;  // on batch `step`, evaluated without batch statistics
  double train_accuracy = 0.0;  // labeled training rows
  double test_accuracy = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  HyperParams effective;
  double final_test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

// step,lr,l1,l2,l3,l4,total,train_acc,test_acc
std::string report_csv(const TrainReport& report);

// Throws NumericError naming the step and loss components when a training
// loss is not finite.
TrainReport train(Model& model, const Dataset& train_set, const Dataset& test_set, const TrainingConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;  // NaN for classes absent from the data
  double mean_l1 = 0.0;           // centroid MSE of normalized features
  std::size_t count = 0;
};

// Every row must be labeled.
EvalResult evaluate(Model& model, const Dataset& data);

// Rows with a label, in order.
Dataset labeled_subset(const Dataset& ds);

// ---- experiments ----------------------------------------------------------------

struct DataSpec {
  enum class Kind { blobs, cifar10, csv };
  Kind kind = Kind::blobs;
  std::size_t classes = 4;
  std::size_t input_dim = 8;
  std::size_t per_class_train = 504;
  std::size_t per_class_test = 500;
  double separation = 4.0;
  std::size_t labeled_per_class = 4;
  std::uint64_t seed = 0;
  std::string path;       // cifar10 directory or csv training file
  std::string test_path;  // csv test file
  bool labeled_only = false;  // drop unlabeled rows after the split

  void validate() const;
};

std::string data_kind_name(DataSpec::Kind k);
DataSpec::Kind parse_data_kind(const std::string& name);

struct Datasets {
  Dataset train;
  Dataset test;
};
Datasets load_datasets(const DataSpec& spec);

struct ExperimentSpec {
  DataSpec data;
  ModelConfig model;
  CentroidMethod centroid_method = CentroidMethod::repulsion;
  std::uint64_t centroid_seed = 0;
  SolverConfig solver;
  TrainingConfig training;

  // Copy with data, model, centroid and training seeds all set to seed.
  ExperimentSpec with_seed(std::uint64_t seed) const;
};

struct ExperimentResult {
  TrainReport report;
  Model model;
  bool centroids_converged = true;
};

// Builds datasets, centroids and model, then trains.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct SweepPoint {
  double lambda3;
  double lambda4;
};

struct AblationGrid {
  bool include_ablations = true;
  std::vector<SweepPoint> sweep;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  // (λ3, λ4/2), (λ3, λ4), (λ3, 2λ4), (λ3/2, λ4), (1.5λ3, λ4) around base.
  static AblationGrid defaults(const HyperParams& base);
  // "default" or "λ3:λ4,λ3:λ4,..."
  static std::vector<SweepPoint> parse_sweep(const std::string& text, const HyperParams& base);
};

struct AblationRow {
  std::string group;  // "ablation" or "sweep"
  Ablation ablation;
  HyperParams effective;
  std::vector<double> errors;  // test error per seed, grid seed order
  double mean_error = 0.0;
  double std_error = 0.0;  // sample standard deviation
};

// Cells run on up to `threads` workers (0: PEDCC_SSL_THREADS or the hardware
// count). Results do not depend on the worker count.
std::vector<AblationRow> run_ablation_suite(const ExperimentSpec& base, const AblationGrid& grid,
                                            std::size_t threads = 0);

// group,ablation,lambda1,lambda2,lambda3,lambda4,m,seeds,mean_error,std_error,errors
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace pedcc
