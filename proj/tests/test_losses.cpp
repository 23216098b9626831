#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pedcc/centroids.hpp"
#include "pedcc/errors.hpp"
#include "pedcc/losses.hpp"
#include "pedcc/model.hpp"
#include "test_util.hpp"

using namespace pedcc;
using pedcc::test::random_labels;
using pedcc::test::random_probs;
using pedcc::test::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kInstances = 20;

// Direct evaluation of the two-sample estimator with explicit loops.
double brute_mmd(const Tensor& x, const Tensor& y, double sigma) {
  const std::size_t s = x.dim(0), c = y.dim(0), d = x.dim(1);
  const auto row = [d](const Tensor& t, std::size_t i) { return t.data().subspan(i * d, d); };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      if (i != j) kxx += gaussian_kernel(row(x, i), row(x, j), sigma);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (i != j) kyy += gaussian_kernel(row(y, i), row(y, j), sigma);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < c; ++j) kxy += gaussian_kernel(row(x, i), row(y, j), sigma);
  const double ds = static_cast<double>(s), dc = static_cast<double>(c);
  return kxx / (ds * (ds - 1)) + kyy / (dc * (dc - 1)) - 2.0 * kxy / (ds * dc);
}

Tensor unit_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  return l2_normalize_rows(random_tensor({rows, dim}, rng));
}

Tensor normal_rows(std::size_t rows, std::size_t dim, double shift, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(rows * dim);
  for (double& x : v) x = n(rng) + shift;
  return Tensor::from({rows, dim}, std::move(v));
}

}  // namespace

// ---- AM-softmax ------------------------------------------------------------------

TEST(AmSoftmax, UniformCosinesGiveLogC) {
  const Tensor cos = Tensor::full({1, 10}, 0.3);
  const std::vector<int> y{4};
  for (double s : {0.5, 1.0, 7.5, 30.0}) EXPECT_NEAR(am_softmax_loss(cos, y, s, 0.0).item(), std::log(10.0), 1e-12);
}

TEST(AmSoftmax, TwoClassAnalytic) {
  const Tensor cos = Tensor::from({1, 2}, {1.0, -1.0});
  const std::vector<int> y{0};
  EXPECT_NEAR(am_softmax_loss(cos, y, 1.0, 0.0).item(), std::log1p(std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(am_softmax_loss(cos, y, 1.0, 0.0).item(), 0.126928, 1e-6);
}

TEST(AmSoftmax, TableHyperparamsMatchScalarOracle) {
  // tests/oracles/am_softmax_value.py
  std::vector<double> v(10, -1.0 / 9.0);
  v[0] = 1.0;
  const Tensor cos = Tensor::from({1, 10}, v);
  const std::vector<int> y{0};
  EXPECT_NEAR(am_softmax_loss(cos, y, 7.5, 0.35).item(), 0.029426545363652777, 1e-14);
}

TEST(AmSoftmax, LargeScaleStaysFinite) {
  const Tensor cos = Tensor::from({2, 3}, {1.0, -1.0, -1.0, -1.0, 1.0, -1.0});
  const std::vector<int> y{1, 0};
  const double v = am_softmax_loss(cos, y, 500.0, 0.35).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 500.0 * (2.0 + 0.35), 1e-9);
}

TEST(AmSoftmax, Errors) {
  const Tensor cos = Tensor::full({2, 3}, 0.1);
  EXPECT_THROW(am_softmax_loss(cos, std::vector<int>{0, 3}, 7.5, 0.35), ArgumentError);
  EXPECT_THROW(am_softmax_loss(cos, std::vector<int>{0, -1}, 7.5, 0.35), ArgumentError);
  EXPECT_THROW(am_softmax_loss(cos, std::vector<int>{0}, 7.5, 0.35), DimensionError);
  const Tensor bad = Tensor::from({1, 2}, {1.01, 0.0});
  EXPECT_THROW(am_softmax_loss(bad, std::vector<int>{0}, 7.5, 0.35), ArgumentError);
  const Tensor edge = Tensor::from({1, 2}, {1.0 + 5e-7, -1.0 - 5e-7});
  EXPECT_NO_THROW(am_softmax_loss(edge, std::vector<int>{0}, 7.5, 0.35));
}

TEST(AmSoftmax, StrictlyDecreasingInTargetCosine) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& c : v) c = u(rng);
    double prev = INFINITY;
    for (int k = 0; k <= 20; ++k) {
      v[2] = -1.0 + 0.1 * k;
      const double l = am_softmax_loss(Tensor::from({1, 6}, v), std::vector<int>{2}, 7.5, 0.35).item();
      EXPECT_GT(l, 0.0);
      EXPECT_LT(l, prev) << "cos_y " << v[2];
      prev = l;
    }
  }
}

TEST(AmSoftmax, ZeroMarginIsCrossEntropyOnScaledLogits) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor cos = random_tensor({4, 7}, rng);
    const auto y = random_labels(4, 7, rng);
    const double s = 0.5 + trial;
    double ce = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < 7; ++j) z += std::exp(s * cos.at(i, j));
      ce += std::log(z) - s * cos.at(i, y[i]);
    }
    EXPECT_NEAR(am_softmax_loss(cos, y, s, 0.0).item(), ce / 4.0, 1e-12);
  }
}

TEST(AmSoftmax, MarginNeverDecreasesLoss) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor cos = random_tensor({3, 5}, rng);
    const auto y = random_labels(3, 5, rng);
    double prev = -INFINITY;
    for (double m = 0.0; m < 0.95; m += 0.05) {
      const double l = am_softmax_loss(cos, y, 7.5, m).item();
      EXPECT_GE(l, prev);
      prev = l;
    }
  }
}

TEST(AmSoftmax, GradCheck) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < kInstances; ++trial) {
    const Tensor cos = random_tensor({5, 4}, rng, -0.95, 0.95, true);
    const auto y = random_labels(5, 4, rng);
    const auto f = [&](const Tensor& c) { return am_softmax_loss(c, y, 7.5, 0.35); };
    EXPECT_LT(grad_check(f, cos), kGradTol) << "instance " << trial;
  }
}

// ---- centroid MSE --------------------------------------------------------------------

TEST(PedccMse, ExactCases) {
  const CentroidSet cs = simplex_centroids(4, 6);
  const Tensor at_centroids = cs.as_tensor();
  const std::vector<int> y{0, 1, 2, 3};
  EXPECT_EQ(pedcc_mse_loss(at_centroids, y, cs).item(), 0.0);

  const auto c2 = cs.row(2);
  std::vector<double> anti(c2.begin(), c2.end());
  for (double& v : anti) v = -v;
  EXPECT_NEAR(pedcc_mse_loss(Tensor::from({1, 6}, anti), std::vector<int>{2}, cs).item(), 4.0, 1e-12);
}

TEST(PedccMse, MatchesBruteForce) {
  const CentroidSet cs = generate_pedcc(5, 8, 2).centroids;
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = random_tensor({5, 8}, rng);
    const auto y = random_labels(5, 5, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t d = 0; d < 8; ++d) {
        const double diff = f.at(i, d) - cs.row(y[i])[d];
        acc += diff * diff;
      }
    EXPECT_NEAR(pedcc_mse_loss(f, y, cs).item(), acc / 5.0, 1e-12);
  }
}

TEST(PedccMse, Errors) {
  const CentroidSet cs = simplex_centroids(3, 4);
  EXPECT_THROW(pedcc_mse_loss(Tensor::zeros({2, 5}), std::vector<int>{0, 1}, cs), std::invalid_argument);
  EXPECT_THROW(pedcc_mse_loss(Tensor::zeros({2, 4}), std::vector<int>{0, 3}, cs), ArgumentError);
}

TEST(PedccMse, GradCheckThroughNormalization) {
  const CentroidSet cs = generate_pedcc(6, 5, 1).centroids;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < kInstances; ++trial) {
    const Tensor f = random_tensor({4, 5}, rng, -2.0, 2.0, true);
    const auto y = random_labels(4, 6, rng);
    const auto raw = [&](const Tensor& t) { return pedcc_mse_loss(t, y, cs); };
    const auto normed = [&](const Tensor& t) { return pedcc_mse_loss(l2_normalize_rows(t), y, cs); };
    EXPECT_LT(grad_check(raw, f), kGradTol);
    EXPECT_LT(grad_check(normed, f), kGradTol);
  }
}

TEST(PedccMse, CentroidsReceiveNoGradient) {
  const CentroidSet cs = simplex_centroids(3, 3);
  const Tensor f = Tensor::from({1, 3}, {0.2, 0.1, -0.3}, true);
  backward(pedcc_mse_loss(f, std::vector<int>{1}, cs));
  EXPECT_TRUE(f.has_grad());
  EXPECT_FALSE(cs.as_tensor().requires_grad());
}

// ---- labeled combination ---------------------------------------------------------------

TEST(LabeledLoss, Examples) {
  HyperParams hp;
  hp.n_root = 1.0;
  hp.lambda1 = hp.lambda2 = 1.0;
  EXPECT_NEAR(labeled_loss(Tensor::scalar(0.3), Tensor::scalar(1.2), hp).item(), 1.5, 1e-15);

  hp.n_root = 2.0;
  hp.lambda2 = 0.0;
  EXPECT_NEAR(labeled_loss(Tensor::scalar(4.0), Tensor::scalar(9.0), hp).item(), 2.0, 1e-15);

  hp.n_root = 1.0;
  hp.lambda1 = 0.0;
  hp.lambda2 = 1.0;
  EXPECT_EQ(labeled_loss(Tensor::scalar(0.7), Tensor::scalar(0.123456789), hp).item(), 0.123456789);

  EXPECT_THROW(labeled_loss(Tensor::scalar(-1e-3), Tensor::scalar(1.0), hp), ContractError);
}

TEST(LabeledLoss, RootAtZeroHasZeroSubgradient) {
  HyperParams hp;
  hp.n_root = 2.0;
  const Tensor l1 = Tensor::scalar(0.0, true);
  const Tensor l2 = Tensor::scalar(0.5, true);
  const Tensor out = labeled_loss(l1, l2, hp);
  backward(out);
  EXPECT_EQ(out.item(), 0.5);
  EXPECT_EQ(l1.grad()[0], 0.0);
  EXPECT_EQ(l2.grad()[0], 1.0);
}

TEST(LabeledLoss, GradCheck) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < kInstances; ++trial) {
    HyperParams hp;
    hp.n_root = 1.0 + trial % 4;
    hp.lambda1 = u(rng);
    hp.lambda2 = u(rng);
    const Tensor t = Tensor::from({2, 1}, {u(rng), u(rng)}, true);
    const auto f = [&](const Tensor& v) {
      return labeled_loss(sum(slice_rows(v, 0, 1)), sum(slice_rows(v, 1, 2)), hp);
    };
    EXPECT_LT(grad_check(f, t), kGradTol);
  }
}

// ---- KL consistency ------------------------------------------------------------------------

TEST(KlConsistency, Examples) {
  std::mt19937_64 rng(23);
  const Tensor p = random_probs(3, 5, rng);
  EXPECT_NEAR(kl_consistency_loss(p, p.clone()).item(), 0.0, 1e-15);

  const Tensor t = Tensor::from({1, 2}, {1.0, 0.0});
  const Tensor s = Tensor::from({1, 2}, {0.5, 0.5});
  EXPECT_NEAR(kl_consistency_loss(t, s).item(), std::log(2.0), 1e-12);
}

TEST(KlConsistency, BruteForceAndTeacherProbe) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor teacher_src = random_probs(4, 10, rng).clone(true);
    const Tensor student = random_probs(4, 10, rng).clone(true);
    double expect = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 10; ++c)
        expect += teacher_src.at(i, c) * std::log(teacher_src.at(i, c) / student.at(i, c));
    const Tensor l = kl_consistency_loss(stop_gradient(teacher_src), student);
    EXPECT_NEAR(l.item(), expect / 4.0, 1e-12);
    EXPECT_GE(l.item(), 0.0);
    backward(l);
    EXPECT_TRUE(student.has_grad());
    for (double g : teacher_src.grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(KlConsistency, ZeroTeacherEntriesContributeNothing) {
  const Tensor t = Tensor::from({1, 3}, {0.0, 0.25, 0.75});
  const Tensor s = Tensor::from({1, 3}, {0.5, 0.25, 0.25});
  EXPECT_NEAR(kl_consistency_loss(t, s).item(), 0.75 * std::log(3.0), 1e-12);
  const Tensor hard = Tensor::from({1, 3}, {1.0, 0.0, 0.0});
  const Tensor zero_student = Tensor::from({1, 3}, {0.0, 0.5, 0.5});
  EXPECT_TRUE(std::isfinite(kl_consistency_loss(hard, zero_student).item()));
}

TEST(KlConsistency, Errors) {
  std::mt19937_64 rng(31);
  const Tensor p = random_probs(2, 3, rng);
  EXPECT_THROW(kl_consistency_loss(p, random_probs(2, 4, rng)), DimensionError);
  EXPECT_THROW(kl_consistency_loss(p.clone(true), p), ContractError);
  EXPECT_THROW(kl_consistency_loss(Tensor::from({1, 2}, {0.6, 0.6}), Tensor::from({1, 2}, {0.5, 0.5})),
               ArgumentError);
  EXPECT_THROW(kl_consistency_loss(Tensor::from({1, 2}, {0.5, 0.5}), Tensor::from({1, 2}, {1.2, -0.2})),
               ArgumentError);
}

TEST(KlConsistency, GradCheckWrtStudentLogits) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < kInstances; ++trial) {
    const Tensor teacher = random_probs(4, 6, rng);
    const Tensor logits = random_tensor({4, 6}, rng, -2.0, 2.0, true);
    const auto f = [&](const Tensor& z) { return kl_consistency_loss(teacher, softmax_rows(z)); };
    EXPECT_LT(grad_check(f, logits), kGradTol);
  }
}

// ---- kernel and MMD ---------------------------------------------------------------------------

TEST(GaussianKernel, Examples) {
  const std::vector<double> x{0.3, -1.2, 2.0}, y{1.0, 0.5, -0.25};
  EXPECT_EQ(gaussian_kernel(x, x, 0.7), 1.0);
  double d2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  EXPECT_NEAR(gaussian_kernel(x, y, std::sqrt(d2 / 2.0)), std::exp(-1.0), 1e-15);
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor({6}, rng), b = random_tensor({6}, rng);
    EXPECT_EQ(gaussian_kernel(a.data(), b.data(), 0.9), gaussian_kernel(b.data(), a.data(), 0.9));
    const double k = gaussian_kernel(a.data(), b.data(), 0.9);
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, 1.0);
  }
  EXPECT_THROW(gaussian_kernel(x, std::vector<double>{1.0}, 1.0), DimensionError);
  EXPECT_THROW(gaussian_kernel(x, y, 0.0), ArgumentError);
}

TEST(Mmd, DegenerateCommonVectorIsZero) {
  const Tensor v = Tensor::from({4, 3}, {0.6, 0.8, 0, 0.6, 0.8, 0, 0.6, 0.8, 0, 0.6, 0.8, 0});
  EXPECT_EQ(mmd_loss(v, slice_rows(v, 0, 3), 0.5).item(), 0.0);
}

TEST(Mmd, SymmetricInSampleSets) {
  std::mt19937_64 rng(43);
  const Tensor a = random_tensor({5, 4}, rng), b = random_tensor({7, 4}, rng);
  EXPECT_NEAR(mmd_loss(a, b, 0.8).item(), mmd_loss(b, a, 0.8).item(), 1e-15);
}

TEST(Mmd, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(47);
  std::uniform_int_distribution<std::size_t> rows(2, 10), dims(2, 16);
  std::uniform_real_distribution<double> sig(0.2, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = dims(rng);
    const Tensor z = unit_rows(rows(rng), d, rng);
    const Tensor c = unit_rows(rows(rng), d, rng);
    const double sigma = sig(rng);
    EXPECT_NEAR(mmd_loss(z, c, sigma).item(), brute_mmd(z, c, sigma), 1e-12) << "instance " << trial;
  }
  const CentroidSet cs = generate_pedcc(3, 8, 4).centroids;
  const Tensor z = unit_rows(5, 8, rng);
  EXPECT_NEAR(mmd_loss(z, cs, 1.1).item(), brute_mmd(z, cs.as_tensor(), 1.1), 1e-12);
}

TEST(Mmd, EmpiricalConsistency) {
  // tests/oracles/mmd_thresholds.py: same-distribution max |mmd| 0.0058,
  // shifted minimum 0.2733 over 20 draws.
  double same_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor a = normal_rows(200, 8, 0.0, rng), b = normal_rows(200, 8, 0.0, rng);
    const Tensor c = normal_rows(200, 8, 3.0 / std::sqrt(8.0), rng);
    same_sum += mmd_loss(a, b, median_heuristic_sigma(a, b)).item();
    EXPECT_GT(mmd_loss(a, c, median_heuristic_sigma(a, c)).item(), 0.2) << "seed " << seed;
  }
  EXPECT_LT(std::abs(same_sum / 20.0), 0.05);
}

TEST(Mmd, MedianHeuristic) {
  // Pairwise squared distances 1, 1, 4 (points 0, 1, 2 on a line): median 1.
  const Tensor a = Tensor::from({2, 1}, {0.0, 1.0});
  const Tensor b = Tensor::from({1, 1}, {2.0});
  EXPECT_NEAR(median_heuristic_sigma(a, b), std::sqrt(0.5), 1e-15);
  const Tensor same = Tensor::full({3, 2}, 0.5);
  EXPECT_EQ(median_heuristic_sigma(same, same), 1.0);
}

TEST(Mmd, Errors) {
  std::mt19937_64 rng(53);
  const Tensor a = random_tensor({1, 3}, rng), b = random_tensor({4, 3}, rng);
  try {
    mmd_loss(a, b, 1.0);
    FAIL();
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("at least 2"), std::string::npos);
  }
  EXPECT_THROW(mmd_loss(b, random_tensor({4, 2}, rng), 1.0), DimensionError);
  EXPECT_THROW(mmd_loss(b, b, -1.0), ArgumentError);
  EXPECT_THROW(mmd_loss(b, simplex_centroids(3, 4), 1.0), DimensionError);
}

TEST(Mmd, GradCheck) {
  const CentroidSet cs = generate_pedcc(4, 6, 9).centroids;
  std::mt19937_64 rng(59);
  for (int trial = 0; trial < kInstances; ++trial) {
    const Tensor z = random_tensor({5, 6}, rng, -1.0, 1.0, true);
    const double sigma = 0.4 + 0.1 * trial;
    const auto f = [&](const Tensor& t) { return mmd_loss(l2_normalize_rows(t), cs, sigma); };
    EXPECT_LT(grad_check(f, z), kGradTol);
    const Tensor other = random_tensor({3, 6}, rng);
    const auto g = [&](const Tensor& t) { return mmd_loss(other, t, sigma); };
    EXPECT_LT(grad_check(g, z), kGradTol);
  }
}

TEST(Mmd, MayBeNegative) {
  std::mt19937_64 rng(61);
  bool seen_negative = false;
  for (int trial = 0; trial < 200 && !seen_negative; ++trial) {
    const Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 3}, rng);
    seen_negative = mmd_loss(a, b, 1.0).item() < 0.0;
  }
  EXPECT_TRUE(seen_negative);
}

// ---- unlabeled combination and total -------------------------------------------------------------

TEST(UnlabeledLoss, Examples) {
  HyperParams hp;
  hp.lambda3 = 0.0;
  hp.lambda4 = 0.2;
  EXPECT_NEAR(unlabeled_loss(Tensor::scalar(9.0), Tensor::scalar(0.5), hp).item(), 0.1, 1e-15);

  const HyperParams cifar = HyperParams::paper_cifar10();
  EXPECT_NEAR(unlabeled_loss(Tensor::scalar(0.01), Tensor::scalar(0.5), cifar).item(), 4.1, 1e-12);

  const HyperParams svhn = HyperParams::paper_svhn();
  EXPECT_EQ(unlabeled_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), svhn).item(), 0.0);
}

TEST(HyperParams, TableValues) {
  const HyperParams c = HyperParams::paper_cifar10();
  EXPECT_EQ(c.s, 7.5);
  EXPECT_EQ(c.m, 0.35);
  EXPECT_EQ(c.n_root, 1.0);
  EXPECT_EQ(c.lambda1, 1.0);
  EXPECT_EQ(c.lambda2, 1.0);
  EXPECT_EQ(c.lambda3, 400.0);
  EXPECT_EQ(c.lambda4, 0.2);
  const HyperParams s = HyperParams::paper_svhn();
  EXPECT_EQ(s.lambda3, 1600.0);
  EXPECT_EQ(s.lambda4, 0.04);

  HyperParams bad;
  bad.m = 1.0;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = {};
  bad.n_root = 0.5;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = {};
  bad.lambda3 = -1;
  EXPECT_THROW(bad.validate(), ArgumentError);
  bad = {};
  bad.sigma = 0.0;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

namespace {

struct Fixture {
  CentroidSet cs;
  BatchOutputs out;
};

Fixture random_outputs(std::mt19937_64& rng, std::size_t m, std::size_t s, std::size_t c, std::size_t d) {
  Fixture fx{generate_pedcc(c, d, rng()).centroids, {}};
  fx.out.features_x = random_tensor({m, d}, rng);
  fx.out.cosines_x = matmul(l2_normalize_rows(fx.out.features_x), transpose(fx.cs.as_tensor()));
  fx.out.labels = random_labels(m, c, rng);
  fx.out.features_u = random_tensor({s, d}, rng);
  fx.out.probs_u = random_probs(s, c, rng);
  fx.out.probs_u_aug = random_probs(s, c, rng);
  return fx;
}

}  // namespace

TEST(TotalLoss, SingleActiveTerm) {
  std::mt19937_64 rng(67);
  const Fixture fx = random_outputs(rng, 4, 6, 5, 8);
  HyperParams hp;
  hp.lambda1 = hp.lambda3 = hp.lambda4 = 0.0;
  hp.lambda2 = 1.0;
  const LossResult r = total_loss(fx.out, fx.cs, hp);
  EXPECT_EQ(r.values.total, am_softmax_loss(fx.out.cosines_x, fx.out.labels, hp.s, hp.m).item());
}

TEST(TotalLoss, RecomposesFromComponents) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const Fixture fx = random_outputs(rng, 5, 7, 6, 8);
    HyperParams hp = trial % 2 ? HyperParams::paper_svhn() : HyperParams::paper_cifar10();
    hp.n_root = 1.0 + trial % 3;
    const LossResult r = total_loss(fx.out, fx.cs, hp);

    const Tensor zu = l2_normalize_rows(fx.out.features_u);
    const double sigma = median_heuristic_sigma(zu, fx.cs.as_tensor());
    const double l1 = pedcc_mse_loss(l2_normalize_rows(fx.out.features_x), fx.out.labels, fx.cs).item();
    const double l2 = am_softmax_loss(fx.out.cosines_x, fx.out.labels, hp.s, hp.m).item();
    const double l3 = kl_consistency_loss(fx.out.probs_u, fx.out.probs_u_aug).item();
    const double l4 = mmd_loss(zu, fx.cs, sigma).item();
    EXPECT_NEAR(r.values.l1_mse, l1, 1e-12);
    EXPECT_NEAR(r.values.l2_am, l2, 1e-12);
    EXPECT_NEAR(r.values.l3_kl, l3, 1e-12);
    EXPECT_NEAR(r.values.l4_mmd, l4, 1e-12);
    EXPECT_NEAR(r.sigma, sigma, 0.0);
    const double expect =
        hp.lambda1 * std::pow(l1, 1.0 / hp.n_root) + hp.lambda2 * l2 + hp.lambda3 * l3 + hp.lambda4 * l4;
    EXPECT_NEAR(r.values.total, expect, 1e-12 * std::max(1.0, std::abs(expect)));
    const auto& v = r.values;
    EXPECT_NEAR(v.total,
                hp.lambda1 * std::pow(v.l1_mse, 1.0 / hp.n_root) + hp.lambda2 * v.l2_am + hp.lambda3 * v.l3_kl +
                    hp.lambda4 * v.l4_mmd,
                1e-12 * std::max(1.0, std::abs(v.total)));
    EXPECT_GE(v.l1_mse, 0.0);
    EXPECT_GE(v.l2_am, 0.0);
    EXPECT_GE(v.l3_kl, 0.0);
  }
}

TEST(TotalLoss, FixedSigmaOverridesHeuristic) {
  std::mt19937_64 rng(73);
  const Fixture fx = random_outputs(rng, 3, 4, 3, 4);
  HyperParams hp;
  hp.sigma = 0.77;
  const LossResult r = total_loss(fx.out, fx.cs, hp);
  EXPECT_EQ(r.sigma, 0.77);
  EXPECT_NEAR(r.values.l4_mmd, mmd_loss(l2_normalize_rows(fx.out.features_u), fx.cs, 0.77).item(), 1e-15);
}

TEST(TotalLoss, MissingUnlabeledParts) {
  std::mt19937_64 rng(79);
  Fixture fx = random_outputs(rng, 3, 4, 3, 4);
  fx.out.probs_u = Tensor();
  fx.out.probs_u_aug = Tensor();
  fx.out.features_u = Tensor();
  HyperParams hp;
  EXPECT_THROW(total_loss(fx.out, fx.cs, hp), ArgumentError);
  hp.lambda3 = hp.lambda4 = 0.0;
  const LossResult r = total_loss(fx.out, fx.cs, hp);
  EXPECT_EQ(r.values.l3_kl, 0.0);
  EXPECT_EQ(r.values.l4_mmd, 0.0);
  EXPECT_EQ(r.sigma, 0.0);
}

// Gradient of the whole objective with respect to the network inputs on a
// 3 + 3 + 3 micro-batch. The teacher predictions are evaluated once at the
// unperturbed clean inputs, since they are constants of the objective.
TEST(TotalLoss, GradCheckWrtNetworkInputs) {
  std::mt19937_64 rng(83);
  for (int trial = 0; trial < kInstances; ++trial) {
    ModelConfig mc;
    mc.input_shape = {4};
    mc.architecture = Architecture::mlp({6});
    mc.feature_dim = 3;
    mc.num_classes = 3;
    mc.seed = 100 + trial;
    Model model(mc, simplex_centroids(3, 3));
    HyperParams hp = HyperParams::paper_cifar10();
    hp.sigma = 0.9;
    const auto y = random_labels(3, 3, rng);
    const Tensor z = random_tensor({9, 4}, rng, -1.5, 1.5, true);
    const Tensor teacher = model.forward(slice_rows(z, 3, 6).detach(), hp.s, false).probs.detach();

    const auto f = [&](const Tensor& in) {
      const ForwardOutput fo = model.forward(in, hp.s, false);
      BatchOutputs bo;
      bo.features_x = slice_rows(fo.features, 0, 3);
      bo.cosines_x = slice_rows(fo.cosines, 0, 3);
      bo.labels = y;
      bo.features_u = slice_rows(fo.features, 3, 6);
      bo.probs_u = teacher;
      bo.probs_u_aug = slice_rows(fo.probs, 6, 9);
      return total_loss(bo, model.centroids(), hp).total;
    };
    // λ3 = 400 puts the loss near 100; coordinates behind inactive ReLUs have
    // zero gradient and a difference quotient of pure rounding noise (~1e-8),
    // so those must agree to 1e-8 in absolute terms instead.
    const GradCheckResult r = grad_check_detailed(f, z, 1e-5, 1e-4);
    EXPECT_LT(r.max_rel_error, kGradTol) << "instance " << trial << " coordinate " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
  }
}
