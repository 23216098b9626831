#include <algorithm>
#include <cmath>

#include "pedcc/errors.hpp"
#include "pedcc/losses.hpp"

namespace pedcc {

namespace {

constexpr double kProbFloor = 1e-12;

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes, const char* op) {
  if (labels.size() != rows)
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ArgumentError(std::string(op) + ": label " + std::to_string(labels[i]) + " at row " +
                          std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
}

void check_probability_rows(const Tensor& p, const char* which) {
  if (p.rank() != 2) throw DimensionError(std::string("kl_consistency_loss: ") + which + " must be a matrix");
  const std::size_t r = p.dim(0), c = p.dim(1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = p.at(i, j);
      if (v < 0.0)
        throw ArgumentError(std::string("kl_consistency_loss: negative probability in ") + which + " row " +
                            std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw ArgumentError(std::string("kl_consistency_loss: ") + which + " row " + std::to_string(i) +
                          " sums to " + format_real(s));
  }
}

// Off-diagonal mask ones − I for an n×n kernel matrix.
Tensor off_diagonal_mask(std::size_t n) {
  std::vector<double> m(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 0.0;
  return Tensor::from({n, n}, std::move(m));
}

}  // namespace

void HyperParams::validate() const {
  if (!(s > 0.0)) throw ArgumentError("hyperparameter s must be positive");
  if (!(m >= 0.0 && m < 1.0)) throw ArgumentError("hyperparameter m must lie in [0, 1)");
  if (!(n_root >= 1.0)) throw ArgumentError("hyperparameter n_root must be at least 1");
  for (double l : {lambda1, lambda2, lambda3, lambda4})
    if (!(l >= 0.0)) throw ArgumentError("loss weights must be non-negative");
  if (sigma && !(*sigma > 0.0)) throw ArgumentError("kernel sigma must be positive");
}

HyperParams HyperParams::paper_cifar10() { return HyperParams{}; }

HyperParams HyperParams::paper_svhn() {
  HyperParams hp;
  hp.lambda3 = 1600.0;
  hp.lambda4 = 0.04;
  return hp;
}

Tensor am_softmax_loss(const Tensor& cosines, std::span<const int> labels, double s, double m) {
  if (cosines.rank() != 2) throw DimensionError("am_softmax_loss: cosines must be M×C, got " + shape_str(cosines.shape()));
  const std::size_t rows = cosines.dim(0), classes = cosines.dim(1);
  check_labels(labels, rows, classes, "am_softmax_loss");
  for (std::size_t i = 0; i < cosines.numel(); ++i) {
    const double c = cosines.at(i);
    if (c < -1.0 - 1e-6 || c > 1.0 + 1e-6)
      throw ArgumentError("am_softmax_loss: cosine " + format_real(c) + " outside [-1, 1]");
  }
  std::vector<double> margin(rows * classes, 0.0);
  for (std::size_t i = 0; i < rows; ++i) margin[i * classes + labels[i]] = s * m;
  const Tensor logits = sub(scale(cosines, s), Tensor::from({rows, classes}, std::move(margin)));
  return neg(mean(pick(log_softmax_rows(logits), labels)));
}

Tensor pedcc_mse_loss(const Tensor& features, std::span<const int> labels, const CentroidSet& centroids) {
  if (features.rank() != 2 || features.dim(1) != centroids.dim())
    throw DimensionError("pedcc_mse_loss: features " + shape_str(features.shape()) + " vs centroid dim " +
                         std::to_string(centroids.dim()));
  const std::size_t rows = features.dim(0), d = centroids.dim();
  check_labels(labels, rows, centroids.num_classes(), "pedcc_mse_loss");
  std::vector<double> target(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto c = centroids.row(labels[i]);
    std::copy(c.begin(), c.end(), target.begin() + i * d);
  }
  const Tensor diff = sub(features, Tensor::from({rows, d}, std::move(target)));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(rows));
}

Tensor labeled_loss(const Tensor& l1, const Tensor& l2, const HyperParams& hp) {
  if (l1.item() < 0.0) throw ContractError("labeled_loss: l1 must be non-negative, got " + format_real(l1.item()));
  Tensor out;
  if (hp.lambda2 != 0.0) out = hp.lambda2 == 1.0 ? l2 : scale(l2, hp.lambda2);
  if (hp.lambda1 != 0.0) {
    const Tensor root = hp.n_root == 1.0 ? l1 : power(l1, 1.0 / hp.n_root);
    const Tensor term = hp.lambda1 == 1.0 ? root : scale(root, hp.lambda1);
    out = out.defined() ? add(out, term) : term;
  }
  return out.defined() ? out : Tensor::scalar(0.0);
}

Tensor kl_consistency_loss(const Tensor& p_teacher, const Tensor& p_student) {
  if (p_teacher.shape() != p_student.shape())
    throw DimensionError("kl_consistency_loss: teacher " + shape_str(p_teacher.shape()) + " vs student " +
                         shape_str(p_student.shape()));
  if (p_teacher.requires_grad() || !p_teacher.is_leaf())
    throw ContractError("kl_consistency_loss: teacher distribution must be detached (stop_gradient)");
  check_probability_rows(p_teacher, "teacher");
  check_probability_rows(p_student, "student");
  const std::size_t rows = p_teacher.dim(0);
  std::vector<double> log_t(p_teacher.numel());
  for (std::size_t i = 0; i < log_t.size(); ++i) log_t[i] = std::log(std::max(p_teacher.at(i), kProbFloor));
  const Tensor log_ratio = sub(Tensor::from(p_teacher.shape(), std::move(log_t)), log(clamp_min(p_student, kProbFloor)));
  return scale(sum(mul(p_teacher, log_ratio)), 1.0 / static_cast<double>(rows));
}

double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma) {
  if (x.size() != y.size()) throw DimensionError("gaussian_kernel: dimension mismatch");
  if (!(sigma > 0.0)) throw ArgumentError("gaussian_kernel: sigma must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::exp(-s / (2.0 * sigma * sigma));
}

double median_heuristic_sigma(const Tensor& a, const Tensor& b) {
  const Tensor pooled = concat_rows({a.detach(), b.detach()});
  const Tensor d = pairwise_sqdist(pooled, pooled);
  const std::size_t n = pooled.dim(0);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(d.at(i, j));
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), dists.begin() + mid);
    median = 0.5 * (median + lower);
  }
  return median > 0.0 ? std::sqrt(median / 2.0) : 1.0;
}

Tensor mmd_loss(const Tensor& x, const Tensor& y, double sigma) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1))
    throw DimensionError("mmd_loss: sample sets " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                         " need equal row dimension");
  const std::size_t s = x.dim(0), c = y.dim(0);
  if (s < 2 || c < 2)
    throw ArgumentError("mmd_loss: the unbiased estimator needs at least 2 rows per sample set, got " +
                        std::to_string(s) + " and " + std::to_string(c));
  if (!(sigma > 0.0)) throw ArgumentError("mmd_loss: sigma must be positive");
  const double gamma = -1.0 / (2.0 * sigma * sigma);
  const auto kernel = [gamma](const Tensor& a, const Tensor& b) { return exp(scale(pairwise_sqdist(a, b), gamma)); };
  const auto ds = static_cast<double>(s), dc = static_cast<double>(c);
  const Tensor kxx = scale(sum(mul(kernel(x, x), off_diagonal_mask(s))), 1.0 / (ds * (ds - 1.0)));
  const Tensor kyy = scale(sum(mul(kernel(y, y), off_diagonal_mask(c))), 1.0 / (dc * (dc - 1.0)));
  const Tensor kxy = scale(sum(kernel(x, y)), 2.0 / (ds * dc));
  return sub(add(kxx, kyy), kxy);
}

Tensor mmd_loss(const Tensor& z_u, const CentroidSet& centroids, double sigma) {
  if (z_u.rank() != 2 || z_u.dim(1) != centroids.dim())
    throw DimensionError("mmd_loss: features " + shape_str(z_u.shape()) + " vs centroid dim " +
                         std::to_string(centroids.dim()));
  return mmd_loss(z_u, centroids.as_tensor(), sigma);
}

Tensor unlabeled_loss(const Tensor& l3, const Tensor& l4, const HyperParams& hp) {
  Tensor out;
  if (hp.lambda3 != 0.0) out = scale(l3, hp.lambda3);
  if (hp.lambda4 != 0.0) {
    const Tensor term = scale(l4, hp.lambda4);
    out = out.defined() ? add(out, term) : term;
  }
  return out.defined() ? out : Tensor::scalar(0.0);
}

LossResult total_loss(const BatchOutputs& out, const CentroidSet& centroids, const HyperParams& hp) {
  hp.validate();
  LossResult r;

  const Tensor fx = hp.normalized_features ? l2_normalize_rows(out.features_x) : out.features_x;
  const Tensor l1 = pedcc_mse_loss(fx, out.labels, centroids);
  const Tensor l2 = am_softmax_loss(out.cosines_x, out.labels, hp.s, hp.m);
  r.values.l1_mse = l1.item();
  r.values.l2_am = l2.item();
  Tensor total = labeled_loss(l1, l2, hp);

  Tensor l3 = Tensor::scalar(0.0), l4 = Tensor::scalar(0.0);
  const bool have_unlabeled = out.probs_u.defined() && out.probs_u_aug.defined();
  if (have_unlabeled) {
    l3 = kl_consistency_loss(stop_gradient(out.probs_u), out.probs_u_aug);
    r.values.l3_kl = l3.item();
  }
  if (out.features_u.defined()) {
    const Tensor zu = l2_normalize_rows(out.features_u);
    r.sigma = hp.sigma ? *hp.sigma : median_heuristic_sigma(zu, centroids.as_tensor());
    l4 = mmd_loss(zu, centroids, r.sigma);
    r.values.l4_mmd = l4.item();
  }
  if (hp.lambda3 != 0.0 || hp.lambda4 != 0.0) {
    if (hp.lambda3 != 0.0 && !have_unlabeled)
      throw ArgumentError("total_loss: lambda3 > 0 needs unlabeled predictions");
    if (hp.lambda4 != 0.0 && !out.features_u.defined())
      throw ArgumentError("total_loss: lambda4 > 0 needs unlabeled features");
    total = add(total, unlabeled_loss(l3, l4, hp));
  }
  r.total = total;
  r.values.total = total.item();
  return r;
}

}  // namespace pedcc
