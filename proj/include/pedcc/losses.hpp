#pragma once

// Loss terms for training against predefined class centroids.
//
//   L1  centroid MSE on labeled features
//   L2  additive-margin softmax on labeled cosines
//   L3  KL consistency between unlabeled and augmented predictions
//   L4  unbiased Gaussian-kernel MMD between unlabeled features and centroids
//
// total = λ1·L1^(1/n) + λ2·L2 + λ3·L3 + λ4·L4

#include <optional>
#include <span>
#include <vector>

#include "pedcc/centroids.hpp"
#include "pedcc/tensor.hpp"

namespace pedcc {

struct HyperParams {
  double s = 7.5;
  double m = 0.35;
  double n_root = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 400.0;
  double lambda4 = 0.2;
  // Gaussian kernel bandwidth; unset means the per-batch median heuristic.
  std::optional<double> sigma;
  // MSE on l2-normalized features (default) or raw backbone output.
  bool normalized_features = true;

  void validate() const;

  static HyperParams paper_cifar10();
  static HyperParams paper_svhn();
};

struct LossBreakdown {
  double l1_mse = 0.0;
  double l2_am = 0.0;
  double l3_kl = 0.0;
  double l4_mmd = 0.0;
  double total = 0.0;
};

// Mean over rows of −log(e^{s(cos_y−m)} / (e^{s(cos_y−m)} + Σ_{j≠y} e^{s·cos_j})).
Tensor am_softmax_loss(const Tensor& cosines, std::span<const int> labels, double s, double m);

// (1/M) Σ ‖feature_i − centroid_{y_i}‖². Centroids are constants.
Tensor pedcc_mse_loss(const Tensor& features, std::span<const int> labels, const CentroidSet& centroids);

// λ2·l2 + λ1·l1^(1/n_root); zero-weight terms are omitted from the graph.
Tensor labeled_loss(const Tensor& l1, const Tensor& l2, const HyperParams& hp);

// (1/S) Σ_i Σ_c t_ic·log(t_ic / p_ic), probabilities clamped at 1e-12.
// The teacher must carry no graph history (pass it through stop_gradient).
Tensor kl_consistency_loss(const Tensor& p_teacher, const Tensor& p_student);

double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma);

// Bandwidth with 2σ² equal to the median squared distance over all distinct
// pairs of the pooled rows of a and b. Falls back to 1 when the median is 0.
double median_heuristic_sigma(const Tensor& a, const Tensor& b);

// Unbiased squared MMD between the rows of x and the rows of y. Gradients
// flow to whichever inputs require them; never clamped at zero.
Tensor mmd_loss(const Tensor& x, const Tensor& y, double sigma);
// Unlabeled features against the centroid rows (centroids constant).
Tensor mmd_loss(const Tensor& z_u, const CentroidSet& centroids, double sigma);

Tensor unlabeled_loss(const Tensor& l3, const Tensor& l4, const HyperParams& hp);

// Network outputs for one semi-supervised step. features_* are the raw
// backbone outputs; the unlabeled parts may be undefined when a step has no
// unlabeled samples.
struct BatchOutputs {
  Tensor features_x;
  Tensor cosines_x;
  std::vector<int> labels;
  Tensor features_u;
  Tensor probs_u;      // teacher side, stop_gradient is applied here
  Tensor probs_u_aug;  // student side
};

struct LossResult {
  Tensor total;
  LossBreakdown values;
  double sigma = 0.0;  // bandwidth used for L4 (0 when L4 was not evaluated)
};

// Computes every available component for reporting; only terms with a
// non-zero weight enter the differentiable total.
LossResult total_loss(const BatchOutputs& out, const CentroidSet& centroids, const HyperParams& hp);

}  // namespace pedcc
