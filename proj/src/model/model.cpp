#include <cmath>
#include <sstream>

#include "pedcc/errors.hpp"
#include "pedcc/model.hpp"

namespace pedcc {

Architecture Architecture::mlp(std::vector<std::size_t> hidden) {
  Architecture a;
  a.kind = Kind::mlp;
  a.hidden = std::move(hidden);
  return a;
}

Architecture Architecture::conv_small(std::size_t widen) {
  Architecture a;
  a.kind = Kind::conv_small;
  a.widen = widen;
  return a;
}

Architecture Architecture::wideresnet(std::size_t depth, std::size_t width) {
  Architecture a;
  a.kind = Kind::wideresnet;
  a.depth = depth;
  a.width = width;
  return a;
}

std::string Architecture::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::mlp:
      os << "mlp";
      for (std::size_t h : hidden) os << ' ' << h;
      break;
    case Kind::conv_small:
      os << "conv_small " << widen;
      break;
    case Kind::wideresnet:
      os << "wideresnet " << depth << ' ' << width;
      break;
  }
  return os.str();
}

Architecture Architecture::parse(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  std::vector<std::size_t> args;
  std::string tok;
  while (is >> tok) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || v == 0 || tok[0] == '-') throw ArgumentError("architecture argument '" + tok + "' is not a positive integer");
    args.push_back(v);
  }
  if (kind == "mlp") return mlp(args);
  if (kind == "conv_small") {
    if (args.size() > 1) throw ArgumentError("conv_small takes one widen factor");
    return conv_small(args.empty() ? 1 : args[0]);
  }
  if (kind == "wideresnet") {
    if (args.size() != 2) throw ArgumentError("wideresnet needs '<depth> <width>'");
    return wideresnet(args[0], args[1]);
  }
  throw ArgumentError("unknown architecture '" + kind + "' (expected mlp, conv_small or wideresnet)");
}

void ModelConfig::validate() const {
  if (feature_dim < 2) throw ArgumentError("feature_dim must be at least 2");
  if (num_classes < 2) throw ArgumentError("num_classes must be at least 2");
  if (activation != "relu") throw ArgumentError("unsupported activation '" + activation + "'");
  if (input_shape.empty()) throw ArgumentError("input_shape must not be empty");
  for (std::size_t e : input_shape)
    if (e == 0) throw ArgumentError("input_shape extents must be positive");
  switch (architecture.kind) {
    case Architecture::Kind::mlp:
      if (input_shape.size() != 1) throw ArgumentError("mlp needs a flat input_shape, got " + shape_str(input_shape));
      break;
    case Architecture::Kind::conv_small:
      if (input_shape.size() != 3) throw ArgumentError("conv_small needs input_shape C H W");
      if (architecture.widen == 0) throw ArgumentError("conv_small widen factor must be positive");
      break;
    case Architecture::Kind::wideresnet:
      if (input_shape.size() != 3) throw ArgumentError("wideresnet needs input_shape C H W");
      if (architecture.depth < 10 || (architecture.depth - 4) % 6 != 0)
        throw ArgumentError("wideresnet depth must be 6n+4 with n ≥ 1, got " + std::to_string(architecture.depth));
      if (architecture.width == 0) throw ArgumentError("wideresnet width must be positive");
      break;
  }
}

// ---- construction ----------------------------------------------------------------

Model::Model(ModelConfig cfg, CentroidSet centroids)
    : cfg_(std::move(cfg)), centroids_(std::move(centroids)), init_rng_(cfg_.seed) {
  cfg_.validate();
  if (cfg_.feature_dim != centroids_.dim() || cfg_.num_classes != centroids_.num_classes())
    throw ArgumentError("model expects " + std::to_string(cfg_.num_classes) + "×" + std::to_string(cfg_.feature_dim) +
                        " centroids, got " + std::to_string(centroids_.num_classes()) + "×" +
                        std::to_string(centroids_.dim()));
  head_ = centroids_.as_tensor();
  switch (cfg_.architecture.kind) {
    case Architecture::Kind::mlp:
      build_mlp();
      break;
    case Architecture::Kind::conv_small:
      build_conv_small();
      break;
    case Architecture::Kind::wideresnet:
      build_wideresnet();
      break;
  }
}

std::size_t Model::add_param(const std::string& name, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape), 0.0);
  if (stddev > 0.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (double& x : v) x = normal(init_rng_);
  }
  params_.push_back({name, Tensor::from(std::move(shape), std::move(v), true)});
  return params_.size() - 1;
}

std::size_t Model::add_batch_norm(const std::string& name, std::size_t channels) {
  BatchNormLayer layer;
  layer.name = name;
  layer.gamma = params_.size();
  params_.push_back({name + ".gamma", Tensor::full({channels}, 1.0, true)});
  layer.beta = params_.size();
  params_.push_back({name + ".beta", Tensor::zeros({channels}, true)});
  layer.state.running_mean = Tensor::zeros({channels});
  layer.state.running_var = Tensor::full({channels}, 1.0);
  bn_.push_back(std::move(layer));
  return bn_.size() - 1;
}

void Model::build_mlp() {
  std::size_t in = cfg_.input_shape[0];
  std::vector<std::size_t> widths = cfg_.architecture.hidden;
  widths.push_back(cfg_.feature_dim);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string base = "fc" + std::to_string(i);
    layer_w_.push_back(add_param(base + ".weight", {in, widths[i]}, std::sqrt(2.0 / static_cast<double>(in))));
    layer_b_.push_back(add_param(base + ".bias", {widths[i]}, 0.0));
    in = widths[i];
  }
}

void Model::build_conv_small() {
  std::size_t in = cfg_.input_shape[0];
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = (16u << i) * cfg_.architecture.widen;
    const std::string base = "conv" + std::to_string(i);
    layer_w_.push_back(add_param(base + ".weight", {out, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(in * 9))));
    layer_bn_.push_back(add_batch_norm("bn" + std::to_string(i), out));
    in = out;
  }
  proj_w_ = add_param("proj.weight", {in, cfg_.feature_dim}, std::sqrt(2.0 / static_cast<double>(in)));
  proj_b_ = add_param("proj.bias", {cfg_.feature_dim}, 0.0);
}

void Model::build_wideresnet() {
  const std::size_t per_group = (cfg_.architecture.depth - 4) / 6;
  const std::size_t k = cfg_.architecture.width;
  const auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  std::size_t in = 16;
  stem_ = add_param("conv1.weight", {16, cfg_.input_shape[0], 3, 3}, he(cfg_.input_shape[0] * 9));
  for (std::size_t g = 0; g < 3; ++g) {
    const std::size_t out = (16u << g) * k;
    for (std::size_t b = 0; b < per_group; ++b) {
      const std::string base = "group" + std::to_string(g + 2) + ".block" + std::to_string(b);
      WrnBlock blk{};
      blk.stride = (g > 0 && b == 0) ? 2 : 1;
      blk.bn1 = add_batch_norm(base + ".bn1", in);
      blk.conv1 = add_param(base + ".conv1.weight", {out, in, 3, 3}, he(in * 9));
      blk.bn2 = add_batch_norm(base + ".bn2", out);
      blk.conv2 = add_param(base + ".conv2.weight", {out, out, 3, 3}, he(out * 9));
      blk.shortcut = (in != out || blk.stride != 1) ? add_param(base + ".shortcut.weight", {out, in, 1, 1}, he(in)) : npos;
      wrn_blocks_.push_back(blk);
      in = out;
    }
  }
  final_bn_ = add_batch_norm("final_bn", in);
  if (in != cfg_.feature_dim) {
    proj_w_ = add_param("proj.weight", {in, cfg_.feature_dim}, he(in));
    proj_b_ = add_param("proj.bias", {cfg_.feature_dim}, 0.0);
  }
}

// ---- forward ---------------------------------------------------------------------

Tensor Model::apply_bn(std::size_t layer, const Tensor& x, bool training) {
  auto& l = bn_[layer];
  return batch_norm(x, params_[l.gamma].value, params_[l.beta].value, l.state, training);
}

Tensor Model::linear(std::size_t w, std::size_t b, const Tensor& x) const {
  return add_bias(matmul(x, params_[w].value), params_[b].value);
}

Tensor Model::conv(std::size_t w, const Tensor& x, std::size_t stride, std::size_t pad) const {
  return conv2d(x, params_[w].value, stride, pad);
}

Tensor Model::forward_mlp(const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < layer_w_.size(); ++i) {
    h = linear(layer_w_[i], layer_b_[i], h);
    if (i + 1 < layer_w_.size()) h = relu(h);
  }
  return h;
}

Tensor Model::forward_conv_small(const Tensor& x, bool training) {
  Tensor h = x;
  for (std::size_t i = 0; i < layer_w_.size(); ++i)
    h = relu(apply_bn(layer_bn_[i], conv(layer_w_[i], h, i == 0 ? 1 : 2, 1), training));
  return linear(proj_w_, proj_b_, global_avg_pool(h));
}

Tensor Model::forward_wideresnet(const Tensor& x, bool training) {
  Tensor h = conv(stem_, x, 1, 1);
  for (const WrnBlock& b : wrn_blocks_) {
    const Tensor pre = relu(apply_bn(b.bn1, h, training));
    Tensor r = conv(b.conv1, pre, b.stride, 1);
    r = conv(b.conv2, relu(apply_bn(b.bn2, r, training)), 1, 1);
    const Tensor skip = b.shortcut == npos ? h : conv(b.shortcut, pre, b.stride, 0);
    h = add(r, skip);
  }
  h = global_avg_pool(relu(apply_bn(final_bn_, h, training)));
  return proj_w_ == npos ? h : linear(proj_w_, proj_b_, h);
}

Tensor Model::features(const Tensor& x, bool training) {
  if (x.rank() != cfg_.input_shape.size() + 1 ||
      !std::equal(cfg_.input_shape.begin(), cfg_.input_shape.end(), x.shape().begin() + 1))
    throw ArgumentError("model input " + shape_str(x.shape()) + " does not match [B×" +
                        shape_str(cfg_.input_shape).substr(1));
  switch (cfg_.architecture.kind) {
    case Architecture::Kind::mlp:
      return forward_mlp(x);
    case Architecture::Kind::conv_small:
      return forward_conv_small(x, training);
    case Architecture::Kind::wideresnet:
      return forward_wideresnet(x, training);
  }
  return {};
}

Tensor Model::cosines_from_features(const Tensor& feats) const {
  return matmul(l2_normalize_rows(feats), transpose(head_));
}

ForwardOutput Model::forward(const Tensor& x, double scale_factor, bool training) {
  ForwardOutput out;
  out.features = features(x, training);
  out.normalized = l2_normalize_rows(out.features);
  out.cosines = matmul(out.normalized, transpose(head_));
  out.probs = softmax_rows(scale(out.cosines, scale_factor));
  return out;
}

std::vector<int> Model::predict(const Tensor& x) {
  const Tensor cos = cosines_from_features(features(x.detach(), false));
  const std::size_t rows = cos.dim(0), c = cos.dim(1);
  std::vector<int> labels(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (cos.at(i, j) > cos.at(i, best)) best = j;
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

std::vector<NamedTensor> Model::buffers() const {
  std::vector<NamedTensor> out;
  for (const auto& l : bn_) {
    out.push_back({l.name + ".running_mean", l.state.running_mean});
    out.push_back({l.name + ".running_var", l.state.running_var});
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Tensor& Model::state_tensor(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  for (auto& l : bn_) {
    if (name == l.name + ".running_mean") return l.state.running_mean;
    if (name == l.name + ".running_var") return l.state.running_var;
  }
  throw ArgumentError("model has no tensor named '" + name + "'");
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Model Model::clone() const {
  Model copy(cfg_, centroids_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto src = params_[i].value.data();
    std::copy(src.begin(), src.end(), copy.params_[i].value.mutable_data().begin());
  }
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    copy.bn_[i].state.running_mean = bn_[i].state.running_mean.clone();
    copy.bn_[i].state.running_var = bn_[i].state.running_var.clone();
  }
  return copy;
}

}  // namespace pedcc
