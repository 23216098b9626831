#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pedcc/errors.hpp"
#include "pedcc/kernels.hpp"
#include "pedcc/trainer.hpp"

namespace pedcc {

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::ce_kl: return "ce_kl";
    case Ablation::pedcc_kl: return "pedcc_kl";
    case Ablation::pedcc_kl_mmd: return "pedcc_kl_mmd";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (Ablation a : {Ablation::ce_kl, Ablation::pedcc_kl, Ablation::pedcc_kl_mmd})
    if (name == ablation_name(a)) return a;
  throw ArgumentError("unknown ablation '" + name + "' (expected ce_kl, pedcc_kl or pedcc_kl_mmd)");
}

HyperParams effective_hyperparams(const HyperParams& hp, Ablation ablation) {
  HyperParams e = hp;
  if (ablation == Ablation::ce_kl) {
    e.lambda1 = 0.0;
    e.m = 0.0;
  }
  if (ablation != Ablation::pedcc_kl_mmd) e.lambda4 = 0.0;
  return e;
}

void TrainingConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ArgumentError("base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must lie in [0, 1)");
  if (eval_every == 0) throw ArgumentError("eval_every must be positive");
  if (composition.labeled == 0) throw ArgumentError("composition needs at least one labeled sample");
  if (!std::isfinite(teacher_grad_scale) || !std::isfinite(student_grad_scale))
    throw ArgumentError("gradient probe factors must be finite");
  hp.validate();
  policy.validate();
}

double lr_at(std::size_t step, const TrainingConfig& cfg) {
  if (step > cfg.total_steps)
    throw ArgumentError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
  if (cfg.total_steps == 0) return cfg.base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum) {
  if (grads.size() != params.size() || velocity.size() != params.size())
    throw ContractError("sgd_momentum_step: sizes differ (params " + std::to_string(params.size()) + ", grads " +
                        std::to_string(grads.size()) + ", velocity " + std::to_string(velocity.size()) + ")");
  kernels::active().momentum_step(params.data(), grads.data(), velocity.data(), lr, momentum, params.size());
}

SgdMomentum::SgdMomentum(const std::vector<NamedTensor>& params) {
  for (const auto& p : params) velocity_.emplace_back(p.value.numel(), 0.0);
}

void SgdMomentum::step(std::vector<NamedTensor>& params, double lr, double momentum) {
  if (params.size() != velocity_.size())
    throw ContractError("optimizer built for " + std::to_string(velocity_.size()) + " tensors, got " +
                        std::to_string(params.size()));
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    std::span<const double> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    sgd_momentum_step(p.mutable_data(), g, velocity_[i], lr, momentum);
  }
}

std::string report_csv(const TrainReport& report) {
  std::ostringstream os;
  os << "step,lr,l1,l2,l3,l4,total,train_acc,test_acc\n";
  for (const auto& r : report.records) {
    os << r.step << ',' << format_real(r.lr) << ',' << format_real(r.loss.l1_mse) << ',' << format_real(r.loss.l2_am)
       << ',' << format_real(r.loss.l3_kl) << ',' << format_real(r.loss.l4_mmd) << ',' << format_real(r.loss.total)
       << ',' << format_real(r.train_accuracy) << ',' << format_real(r.test_accuracy) << '\n';
  }
  return os.str();
}

Dataset labeled_subset(const Dataset& ds) {
  Dataset out;
  out.sample_shape = ds.sample_shape;
  out.split = ds.split;
  out.num_classes = ds.num_classes;
  out.channel_mean = ds.channel_mean;
  out.channel_std = ds.channel_std;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == kUnlabeled) continue;
    out.labels.push_back(ds.labels[i]);
    const auto s = ds.sample(i);
    out.samples.insert(out.samples.end(), s.begin(), s.end());
  }
  return out;
}

EvalResult evaluate(Model& model, const Dataset& data) {
  constexpr std::size_t kChunk = 512;
  if (data.sample_shape != model.config().input_shape)
    throw DimensionError("dataset samples have shape " + shape_str(data.sample_shape) + ", model expects " +
                         shape_str(model.config().input_shape));
  if (data.num_classes != model.config().num_classes)
    throw DimensionError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                         std::to_string(model.config().num_classes));
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.labels[i] == kUnlabeled) throw ArgumentError("evaluate: row " + std::to_string(i) + " is unlabeled");

  const std::size_t C = data.num_classes;
  std::vector<std::size_t> hits(C, 0), totals(C, 0);
  double l1_sum = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const std::size_t end = std::min(data.size(), begin + kChunk);
    rows.clear();
    for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
    const Tensor feats = model.features(data.gather(rows), false).detach();
    const Tensor normed = l2_normalize_rows(feats);
    const Tensor cos = model.cosines_from_features(feats);
    const std::span<const int> labels(data.labels.data() + begin, end - begin);
    l1_sum += pedcc_mse_loss(normed, labels, model.centroids()).item() * static_cast<double>(end - begin);
    for (std::size_t r = 0; r < end - begin; ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < C; ++j)
        if (cos.at(r, j) > cos.at(r, best)) best = j;
      const auto y = static_cast<std::size_t>(labels[r]);
      ++totals[y];
      if (best == y) ++hits[y];
    }
  }
  EvalResult res;
  res.count = data.size();
  std::size_t correct = 0;
  res.per_class.resize(C);
  for (std::size_t k = 0; k < C; ++k) {
    correct += hits[k];
    res.per_class[k] = totals[k] ? static_cast<double>(hits[k]) / static_cast<double>(totals[k]) : std::nan("");
  }
  res.accuracy = res.count ? static_cast<double>(correct) / static_cast<double>(res.count) : 0.0;
  res.mean_l1 = res.count ? l1_sum / static_cast<double>(res.count) : 0.0;
  return res;
}

namespace {

std::string components(const LossBreakdown& v) {
  return "l1=" + format_real(v.l1_mse) + " l2=" + format_real(v.l2_am) + " l3=" + format_real(v.l3_kl) +
         " l4=" + format_real(v.l4_mmd) + " total=" + format_real(v.total);
}

bool finite(const LossBreakdown& v) {
  return std::isfinite(v.l1_mse) && std::isfinite(v.l2_am) && std::isfinite(v.l3_kl) && std::isfinite(v.l4_mmd) &&
         std::isfinite(v.total);
}

LossResult batch_loss(Model& model, const SemiBatch& b, const HyperParams& hp, const TrainingConfig& cfg,
                      bool training) {
  const std::size_t M = b.M, S = b.S;
  const Tensor input = S > 0 ? concat_rows({b.x, b.u, b.u_aug}) : b.x;
  const ForwardOutput out = model.forward(input, hp.s, training);
  BatchOutputs bo;
  bo.features_x = slice_rows(out.features, 0, M);
  bo.cosines_x = slice_rows(out.cosines, 0, M);
  bo.labels = b.y;
  if (S > 0) {
    bo.features_u = slice_rows(out.features, M, M + S);
    bo.probs_u = gradient_scale(slice_rows(out.probs, M, M + S), cfg.teacher_grad_scale);
    bo.probs_u_aug = gradient_scale(slice_rows(out.probs, M + S, M + 2 * S), cfg.student_grad_scale);
  }
  return total_loss(bo, model.centroids(), hp);
}

}  // namespace

TrainReport train(Model& model, const Dataset& train_set, const Dataset& test_set, const TrainingConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const HyperParams hp = effective_hyperparams(cfg.hp, cfg.ablation);
  if ((hp.lambda3 != 0.0 || hp.lambda4 != 0.0) && cfg.composition.unlabeled == 0)
    throw ArgumentError("lambda3/lambda4 need unlabeled samples in the composition");
  for (const Dataset* ds : {&train_set, &test_set}) {
    if (ds->sample_shape != model.config().input_shape)
      throw DimensionError("dataset samples have shape " + shape_str(ds->sample_shape) + ", model expects " +
                           shape_str(model.config().input_shape));
    if (ds->num_classes != model.config().num_classes)
      throw DimensionError("dataset has " + std::to_string(ds->num_classes) + " classes, model has " +
                           std::to_string(model.config().num_classes));
  }
  const Dataset labeled_train = labeled_subset(train_set);

  TrainReport report;
  report.effective = hp;
  SgdMomentum opt(model.parameters());

  auto record = [&](std::size_t t) {
    TrainRecord r;
    r.step = t;
    r.lr = lr_at(t, cfg);
    const SemiBatch b = compose_batch(train_set, cfg.composition, cfg.policy, t, cfg.seed);
    try {
      r.loss = batch_loss(model, b, hp, cfg, false).values;
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(t) + ": " + e.what());
    }
    if (!finite(r.loss))
      throw NumericError("training aborted at step " + std::to_string(t) + ": non-finite loss " + components(r.loss));
    r.train_accuracy = evaluate(model, labeled_train).accuracy;
    r.test_accuracy = evaluate(model, test_set).accuracy;
    report.records.push_back(r);
  };

  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    if (t % cfg.eval_every == 0) record(t);
    const SemiBatch b = compose_batch(train_set, cfg.composition, cfg.policy, t, cfg.seed);
    LossResult loss;
    try {
      loss = batch_loss(model, b, hp, cfg, true);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(t) + ": " + e.what());
    }
    if (!finite(loss.values))
      throw NumericError("training aborted at step " + std::to_string(t) + ": non-finite loss " +
                         components(loss.values));
    model.zero_grad();
    backward(loss.total);
    opt.step(model.parameters(), lr_at(t, cfg), cfg.momentum);
  }
  if (report.records.empty() || report.records.back().step != cfg.total_steps) record(cfg.total_steps);

  report.final_test_accuracy = report.records.back().test_accuracy;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace pedcc
