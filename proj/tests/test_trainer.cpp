#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "pedcc/centroids.hpp"
#include "pedcc/errors.hpp"
#include "pedcc/trainer.hpp"
#include "test_util.hpp"

using namespace pedcc;
using pedcc::test::TempDir;

namespace {

// Small semi-supervised blobs experiment that trains in well under a second.
ExperimentSpec tiny_spec(std::size_t steps = 40) {
  ExperimentSpec s;
  s.data.classes = 3;
  s.data.input_dim = 4;
  s.data.per_class_train = 30;
  s.data.per_class_test = 20;
  s.data.separation = 4.0;
  s.data.labeled_per_class = 4;
  s.model.architecture = Architecture::mlp({12});
  s.model.feature_dim = 4;
  s.training.total_steps = steps;
  s.training.composition = {6, 12};
  s.training.eval_every = 10;
  return s;
}

std::vector<double> flat_parameters(const Model& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

// ---- schedule and optimizer -----------------------------------------------------------------

TEST(LearningRate, CosineSchedule) {
  TrainingConfig cfg;
  cfg.base_lr = 0.03;
  cfg.total_steps = 4000;
  EXPECT_EQ(lr_at(0, cfg), 0.03);
  EXPECT_NEAR(lr_at(4000, cfg), 0.0, 1e-18);
  EXPECT_NEAR(lr_at(2000, cfg), 0.015, 1e-15);
  EXPECT_NEAR(lr_at(1000, cfg), 0.03 * 0.5 * (1.0 + std::cos(M_PI / 4.0)), 1e-15);
  for (std::size_t t = 1; t <= 4000; ++t) ASSERT_LE(lr_at(t, cfg), lr_at(t - 1, cfg));
  EXPECT_THROW(lr_at(4001, cfg), ArgumentError);
}

TEST(SgdMomentum, PlainStep) {
  std::vector<double> p{1.0, -2.0, 3.5}, g(3, 1.0), v(3, 0.0);
  sgd_momentum_step(p, g, v, 1.0, 0.0);
  EXPECT_EQ(p, (std::vector<double>{0.0, -3.0, 2.5}));
}

TEST(SgdMomentum, SecondStepUsesAccumulatedVelocity) {
  std::vector<double> p{0.5, -1.0}, g{0.2, -0.4}, v(2, 0.0);
  sgd_momentum_step(p, g, v, 0.1, 0.9);
  const std::vector<double> after_first = p;
  sgd_momentum_step(p, g, v, 0.1, 0.9);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p[i] - after_first[i], -0.1 * 1.9 * g[i], 1e-15);
}

TEST(SgdMomentum, SizeMismatch) {
  std::vector<double> p(3), g(2), v(3);
  EXPECT_THROW(sgd_momentum_step(p, g, v, 0.1, 0.9), ContractError);
  std::vector<double> g3(3), v2(2);
  EXPECT_THROW(sgd_momentum_step(p, g3, v2, 0.1, 0.9), ContractError);
}

TEST(SgdMomentum, QuadraticBowlTrajectory) {
  // tests/oracles/momentum_bowl.py, from p0 = (1, −2, 0.5): ‖p‖ first drops
  // below 1e-6 at step 210, stays below from step 276; ‖p₂₀₀‖ = 3.196e-6.
  std::vector<double> p{1.0, -2.0, 0.5}, v(3, 0.0);
  std::size_t first_below = 0, last_above = 0;
  double norm200 = 0.0;
  for (std::size_t t = 1; t <= 600; ++t) {
    const std::vector<double> g = p;
    sgd_momentum_step(p, g, v, 0.1, 0.9);
    const double n = std::sqrt(std::inner_product(p.begin(), p.end(), p.begin(), 0.0));
    if (t == 200) norm200 = n;
    if (n < 1e-6 && first_below == 0) first_below = t;
    if (n >= 1e-6) last_above = t;
  }
  EXPECT_EQ(first_below, 210u);
  EXPECT_EQ(last_above + 1, 276u);
  EXPECT_NEAR(norm200, 3.1960135278407323e-06, 1e-18);
}

TEST(SgdMomentum, OptimizerWrapperTreatsMissingGradAsZero) {
  std::vector<NamedTensor> params{{"a", Tensor::from({2}, {1.0, 2.0}, true)}, {"b", Tensor::from({1}, {3.0}, true)}};
  SgdMomentum opt(params);
  backward(sum(mul(params[0].value, params[0].value)));
  opt.step(params, 0.5, 0.9);
  EXPECT_EQ(params[0].value.at(0), 0.0);
  EXPECT_EQ(params[0].value.at(1), 0.0);
  EXPECT_EQ(params[1].value.at(0), 3.0);
  EXPECT_EQ(opt.velocity()[0], (std::vector<double>{2.0, 4.0}));
  std::vector<NamedTensor> fewer{params[0]};
  EXPECT_THROW(opt.step(fewer, 0.5, 0.9), ContractError);
}

TEST(TrainingConfig, Validation) {
  TrainingConfig c;
  EXPECT_NO_THROW(c.validate());
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.base_lr = 0.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.eval_every = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.composition.labeled = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
}

// ---- ablation plumbing ------------------------------------------------------------------------

TEST(Ablation, EffectiveHyperparams) {
  const HyperParams base = HyperParams::paper_cifar10();
  const HyperParams ce = effective_hyperparams(base, Ablation::ce_kl);
  EXPECT_EQ(ce.lambda1, 0.0);
  EXPECT_EQ(ce.m, 0.0);
  EXPECT_EQ(ce.lambda4, 0.0);
  EXPECT_EQ(ce.lambda2, base.lambda2);
  EXPECT_EQ(ce.lambda3, base.lambda3);
  const HyperParams kl = effective_hyperparams(base, Ablation::pedcc_kl);
  EXPECT_EQ(kl.lambda4, 0.0);
  EXPECT_EQ(kl.lambda1, base.lambda1);
  EXPECT_EQ(kl.m, base.m);
  const HyperParams full = effective_hyperparams(base, Ablation::pedcc_kl_mmd);
  EXPECT_EQ(full.lambda4, base.lambda4);
  for (Ablation a : {Ablation::ce_kl, Ablation::pedcc_kl, Ablation::pedcc_kl_mmd})
    EXPECT_EQ(parse_ablation(ablation_name(a)), a);
  EXPECT_THROW(parse_ablation("softmax"), ArgumentError);
}

TEST(Ablation, DefaultGridShape) {
  const HyperParams base = HyperParams::paper_cifar10();
  const AblationGrid g = AblationGrid::defaults(base);
  ASSERT_EQ(g.sweep.size(), 5u);
  const std::vector<std::pair<double, double>> expect{{400, 0.1}, {400, 0.2}, {400, 0.4}, {200, 0.2}, {600, 0.2}};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(g.sweep[i].lambda3, expect[i].first);
    EXPECT_EQ(g.sweep[i].lambda4, expect[i].second);
  }
  EXPECT_EQ(AblationGrid::parse_sweep("default", base).size(), 5u);
  EXPECT_TRUE(AblationGrid::parse_sweep("none", base).empty());
  const auto pts = AblationGrid::parse_sweep("400:0.1,400:0.2,400:0.4", base);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[2].lambda4, 0.4);
  EXPECT_THROW(AblationGrid::parse_sweep("400", base), ArgumentError);
  EXPECT_THROW(AblationGrid::parse_sweep("400:x", base), ArgumentError);
  EXPECT_THROW(AblationGrid::parse_sweep("-1:0.2", base), ArgumentError);
}

// ---- evaluation --------------------------------------------------------------------------------

TEST(Evaluate, CentroidFeaturesScorePerfectly) {
  const CentroidSet cs = generate_pedcc(4, 4, 1).centroids;
  ModelConfig mc;
  mc.input_shape = {4};
  mc.architecture = Architecture::mlp({});
  mc.feature_dim = 4;
  mc.num_classes = 4;
  Model m(mc, cs);
  auto w = m.state_tensor("fc0.weight").mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  Dataset ds;
  ds.sample_shape = {4};
  ds.num_classes = 4;
  for (int rep = 0; rep < 3; ++rep)
    for (int k = 0; k < 4; ++k) {
      const auto row = cs.row(k);
      ds.samples.insert(ds.samples.end(), row.begin(), row.end());
      ds.labels.push_back(k);
    }
  const EvalResult r = evaluate(m, ds);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.count, 12u);
  EXPECT_NEAR(r.mean_l1, 0.0, 1e-24);
  for (double a : r.per_class) EXPECT_EQ(a, 1.0);
}

TEST(Evaluate, ConstantPredictorScoresOneOverC) {
  const CentroidSet cs = simplex_centroids(5, 6);
  ModelConfig mc;
  mc.input_shape = {3};
  mc.architecture = Architecture::mlp({});
  mc.feature_dim = 6;
  mc.num_classes = 5;
  Model m(mc, cs);
  for (double& v : m.state_tensor("fc0.weight").mutable_data()) v = 0.0;
  auto b = m.state_tensor("fc0.bias").mutable_data();
  std::copy(cs.row(2).begin(), cs.row(2).end(), b.begin());
  const Dataset test = gen_blobs(5, 6, 1, 40, 3.0, 0).second;
  Dataset three = test;
  three.sample_shape = {3};
  three.samples.clear();
  for (std::size_t i = 0; i < test.size(); ++i)
    three.samples.insert(three.samples.end(), test.sample(i).begin(), test.sample(i).begin() + 3);
  const EvalResult r = evaluate(m, three);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.2);
  EXPECT_EQ(r.per_class[2], 1.0);
  EXPECT_EQ(r.per_class[0], 0.0);
}

TEST(Evaluate, MatchesBruteForceCount) {
  const ExperimentSpec spec = tiny_spec(30);
  ExperimentResult res = run_experiment(spec);
  const Datasets d = load_datasets(spec.data);
  const auto pred = res.model.predict(d.test.all());
  std::size_t hits = 0;
  std::vector<std::size_t> per_hit(3, 0), per_n(3, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == d.test.labels[i];
    per_hit[d.test.labels[i]] += pred[i] == d.test.labels[i];
    ++per_n[d.test.labels[i]];
  }
  const EvalResult r = evaluate(res.model, d.test);
  EXPECT_EQ(r.accuracy, static_cast<double>(hits) / static_cast<double>(pred.size()));
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_EQ(r.per_class[k], static_cast<double>(per_hit[k]) / static_cast<double>(per_n[k]));
  EXPECT_EQ(r.accuracy, res.report.final_test_accuracy);
}

TEST(Evaluate, Errors) {
  const ExperimentSpec spec = tiny_spec(0);
  ExperimentResult res = run_experiment(spec);
  const Datasets d = load_datasets(spec.data);
  EXPECT_THROW(evaluate(res.model, d.train), ArgumentError);
  EXPECT_NO_THROW(evaluate(res.model, labeled_subset(d.train)));
  Dataset wrong = d.test;
  wrong.num_classes = 4;
  EXPECT_THROW(evaluate(res.model, wrong), DimensionError);
  const Dataset absent = gen_blobs(3, 5, 1, 2, 3.0, 0).second;
  EXPECT_THROW(evaluate(res.model, absent), DimensionError);
}

TEST(Evaluate, AbsentClassIsNaN) {
  const ExperimentSpec spec = tiny_spec(0);
  ExperimentResult res = run_experiment(spec);
  Dataset d = load_datasets(spec.data).test;
  Dataset only0;
  only0.sample_shape = d.sample_shape;
  only0.num_classes = 3;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == 0) {
      only0.samples.insert(only0.samples.end(), d.sample(i).begin(), d.sample(i).end());
      only0.labels.push_back(0);
    }
  const EvalResult r = evaluate(res.model, only0);
  EXPECT_FALSE(std::isnan(r.per_class[0]));
  EXPECT_TRUE(std::isnan(r.per_class[1]));
  EXPECT_TRUE(std::isnan(r.per_class[2]));
}

// ---- training -----------------------------------------------------------------------------------

TEST(Train, ZeroStepsRecordsOnlyInitialEvaluation) {
  const ExperimentResult r = run_experiment(tiny_spec(0));
  ASSERT_EQ(r.report.records.size(), 1u);
  EXPECT_EQ(r.report.records[0].step, 0u);
  EXPECT_EQ(r.report.records[0].lr, 0.03);
  EXPECT_EQ(r.report.final_test_accuracy, r.report.records[0].test_accuracy);
}

TEST(Train, RecordsFollowEvalSchedule) {
  ExperimentSpec spec = tiny_spec(35);
  const ExperimentResult r = run_experiment(spec);
  std::vector<std::size_t> steps;
  for (const auto& rec : r.report.records) {
    steps.push_back(rec.step);
    EXPECT_TRUE(std::isfinite(rec.loss.total));
    EXPECT_GE(rec.loss.l1_mse, 0.0);
    EXPECT_GE(rec.loss.l2_am, 0.0);
    EXPECT_GE(rec.loss.l3_kl, 0.0);
    EXPECT_GE(rec.test_accuracy, 0.0);
    EXPECT_LE(rec.test_accuracy, 1.0);
  }
  EXPECT_EQ(steps, (std::vector<std::size_t>{0, 10, 20, 30, 35}));
  EXPECT_EQ(r.report.records.back().lr, 0.0);

  const std::string csv = report_csv(r.report);
  EXPECT_EQ(csv.rfind("step,lr,l1,l2,l3,l4,total,train_acc,test_acc\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(Train, BitwiseDeterministic) {
  const ExperimentSpec spec = tiny_spec(40);
  const ExperimentResult a = run_experiment(spec), b = run_experiment(spec);
  EXPECT_EQ(report_csv(a.report), report_csv(b.report));
  EXPECT_TRUE(bitwise_equal(flat_parameters(a.model), flat_parameters(b.model)));
  const ExperimentResult c = run_experiment(spec.with_seed(1));
  EXPECT_FALSE(bitwise_equal(flat_parameters(a.model), flat_parameters(c.model)));
}

TEST(Train, FrozenHeadAfterTraining) {
  ExperimentSpec spec = tiny_spec(60);
  const PedccResult gen = generate_pedcc(3, 4, spec.centroid_seed, spec.solver);
  const ExperimentResult r = run_experiment(spec);
  const auto head = r.model.head().data(), pts = gen.centroids.points();
  EXPECT_TRUE(std::equal(head.begin(), head.end(), pts.begin(), pts.end()));
  EXPECT_EQ(r.model.centroids(), gen.centroids);
}

TEST(Train, TeacherBranchCarriesNoGradient) {
  ExperimentSpec spec = tiny_spec(25);
  spec.training.hp.lambda3 = 50.0;
  const auto params_with = [&](double teacher, double student) {
    ExperimentSpec s = spec;
    s.training.teacher_grad_scale = teacher;
    s.training.student_grad_scale = student;
    return flat_parameters(run_experiment(s).model);
  };
  const auto reference = params_with(1.0, 1.0);
  EXPECT_TRUE(bitwise_equal(params_with(0.0, 1.0), reference));
  EXPECT_TRUE(bitwise_equal(params_with(-3.0, 1.0), reference));
  EXPECT_FALSE(bitwise_equal(params_with(1.0, 0.0), reference));
}

TEST(Train, NonFiniteLossAbortsWithStep) {
  ExperimentSpec spec = tiny_spec(20);
  spec.training.base_lr = 1e200;
  try {
    run_experiment(spec);
    FAIL() << "expected an abort";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("training aborted at step"), std::string::npos) << e.what();
  }
}

TEST(Train, MismatchedDataRejected) {
  const ExperimentSpec spec = tiny_spec(5);
  ExperimentResult r = run_experiment(spec);
  const Datasets d = load_datasets(spec.data);
  const Dataset other = gen_blobs(3, 5, 10, 5, 3.0, 0).first;
  EXPECT_THROW(train(r.model, other, d.test, spec.training), DimensionError);
  TrainingConfig no_unlabeled = spec.training;
  no_unlabeled.composition.unlabeled = 0;
  EXPECT_THROW(train(r.model, d.train, d.test, no_unlabeled), ArgumentError);
  no_unlabeled.hp.lambda3 = no_unlabeled.hp.lambda4 = 0.0;
  EXPECT_NO_THROW(train(r.model, d.train, d.test, no_unlabeled));
}

TEST(Train, SupervisedReductionLearnsSeparatedBlobs) {
  ExperimentSpec spec;
  spec.data.classes = 4;
  spec.data.input_dim = 8;
  spec.data.per_class_train = 200;
  spec.data.per_class_test = 500;
  spec.data.separation = 6.0;
  spec.data.labeled_per_class = 200;
  spec.model.architecture = Architecture::mlp({32});
  spec.model.feature_dim = 8;
  spec.training.total_steps = 1000;
  spec.training.composition = {32, 0};
  spec.training.hp.lambda3 = spec.training.hp.lambda4 = 0.0;
  spec.training.eval_every = 1000;
  const ExperimentResult r = run_experiment(spec);
  EXPECT_GT(r.report.final_test_accuracy, 0.97);
}

// ---- experiments ---------------------------------------------------------------------------------

TEST(Experiment, WithSeedSetsEverySeed) {
  const ExperimentSpec s = tiny_spec().with_seed(42);
  EXPECT_EQ(s.data.seed, 42u);
  EXPECT_EQ(s.model.seed, 42u);
  EXPECT_EQ(s.centroid_seed, 42u);
  EXPECT_EQ(s.training.seed, 42u);
}

TEST(Experiment, DataSpecValidation) {
  DataSpec d;
  d.classes = 1;
  EXPECT_THROW(d.validate(), ArgumentError);
  d = {};
  d.labeled_per_class = d.per_class_train + 1;
  EXPECT_THROW(d.validate(), ArgumentError);
  d = {};
  d.kind = DataSpec::Kind::cifar10;
  EXPECT_THROW(d.validate(), ArgumentError);
  d = {};
  d.kind = DataSpec::Kind::csv;
  d.path = "x.csv";
  EXPECT_THROW(d.validate(), ArgumentError);
  for (auto k : {DataSpec::Kind::blobs, DataSpec::Kind::cifar10, DataSpec::Kind::csv})
    EXPECT_EQ(parse_data_kind(data_kind_name(k)), k);
  EXPECT_THROW(parse_data_kind("svhn"), ArgumentError);
}

TEST(Experiment, LabeledOnlyAndCsvData) {
  ExperimentSpec spec = tiny_spec(10);
  spec.data.labeled_only = true;
  const Datasets d = load_datasets(spec.data);
  EXPECT_EQ(d.train.size(), 12u);
  EXPECT_TRUE(d.train.unlabeled_indices().empty());

  TempDir dir("csvdata");
  const Datasets full = load_datasets(tiny_spec().data);
  write_dataset_csv(full.train, dir / "train.csv");
  write_dataset_csv(full.test, dir / "test.csv");
  ExperimentSpec csv = tiny_spec(10);
  csv.data.kind = DataSpec::Kind::csv;
  csv.data.path = dir / "train.csv";
  csv.data.test_path = dir / "test.csv";
  EXPECT_EQ(report_csv(run_experiment(csv).report), report_csv(run_experiment(tiny_spec(10)).report));
}

TEST(Experiment, AblationSuiteRowsAndThreadIndependence) {
  ExperimentSpec base = tiny_spec(20);
  AblationGrid grid;
  grid.include_ablations = false;
  grid.sweep = AblationGrid::parse_sweep("400:0.1,400:0.2,400:0.4", base.training.hp);
  grid.seeds = {0, 1, 2};
  const auto rows = run_ablation_suite(base, grid, 1);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.group, "sweep");
    ASSERT_EQ(r.errors.size(), 3u);
    for (double e : r.errors) {
      EXPECT_GE(e, 0.0);
      EXPECT_LE(e, 1.0);
    }
    EXPECT_TRUE(std::isfinite(r.mean_error));
    EXPECT_TRUE(std::isfinite(r.std_error));
    const double mean = (r.errors[0] + r.errors[1] + r.errors[2]) / 3.0;
    EXPECT_NEAR(r.mean_error, mean, 1e-15);
    double ss = 0.0;
    for (double e : r.errors) ss += (e - mean) * (e - mean);
    EXPECT_NEAR(r.std_error, std::sqrt(ss / 2.0), 1e-15);
  }
  EXPECT_EQ(rows[2].effective.lambda4, 0.4);
  EXPECT_EQ(ablation_csv(run_ablation_suite(base, grid, 4)), ablation_csv(rows));
  // Each cell equals a standalone run with the same seed.
  ExperimentSpec one = base.with_seed(1);
  one.training.hp.lambda3 = 400.0;
  one.training.hp.lambda4 = 0.2;
  EXPECT_EQ(rows[1].errors[1], 1.0 - run_experiment(one).report.final_test_accuracy);
}

TEST(Experiment, DefaultSuiteHasThreeAblationsAndFiveSweeps) {
  ExperimentSpec base = tiny_spec(10);
  AblationGrid grid = AblationGrid::defaults(base.training.hp);
  grid.seeds = {0, 1, 2};
  const auto rows = run_ablation_suite(base, grid);
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0].ablation, Ablation::ce_kl);
  EXPECT_EQ(rows[0].effective.lambda1, 0.0);
  EXPECT_EQ(rows[0].effective.m, 0.0);
  EXPECT_EQ(rows[1].ablation, Ablation::pedcc_kl);
  EXPECT_EQ(rows[1].effective.lambda4, 0.0);
  EXPECT_EQ(rows[2].ablation, Ablation::pedcc_kl_mmd);
  for (std::size_t i = 3; i < 8; ++i) EXPECT_EQ(rows[i].group, "sweep");
  const std::string csv = ablation_csv(rows);
  EXPECT_EQ(csv.rfind("group,ablation,lambda1,lambda2,lambda3,lambda4,m,seeds,mean_error,std_error,errors\n", 0), 0u);
  EXPECT_NE(csv.find("\nablation,ce_kl,0,1,400,0,0,3,"), std::string::npos) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  grid.seeds.clear();
  EXPECT_THROW(run_ablation_suite(base, grid), ArgumentError);
}
