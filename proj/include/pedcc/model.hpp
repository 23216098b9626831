#pragma once

// Feed-forward classifiers whose last layer is the frozen centroid matrix.
// Cosine scores are l2_normalize(features) · centroidsᵀ.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pedcc/centroids.hpp"
#include "pedcc/tensor.hpp"

namespace pedcc {

struct Architecture {
  enum class Kind { mlp, conv_small, wideresnet };
  Kind kind = Kind::mlp;
  std::vector<std::size_t> hidden{64, 64};  // mlp
  std::size_t widen = 1;                    // conv_small
  std::size_t depth = 28;                   // wideresnet, depth = 6n + 4
  std::size_t width = 2;                    // wideresnet

  static Architecture mlp(std::vector<std::size_t> hidden);
  static Architecture conv_small(std::size_t widen);
  static Architecture wideresnet(std::size_t depth, std::size_t width);

  // "mlp 64 64", "conv_small 1", "wideresnet 28 2"
  std::string to_string() const;
  static Architecture parse(const std::string& text);
};

struct ModelConfig {
  Shape input_shape{8};  // one sample: [D_in] for mlp, [C×H×W] for conv nets
  Architecture architecture;
  std::size_t feature_dim = 8;
  std::size_t num_classes = 4;
  std::string activation = "relu";
  std::uint64_t seed = 0;

  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ForwardOutput {
  Tensor features;    // raw backbone output [B×D]
  Tensor normalized;  // row-normalized features
  Tensor cosines;     // [B×C], each in [−1, 1]
  Tensor probs;       // softmax(s · cosines)
};

class Model {
 public:
  // Parameters drawn from a He-normal seeded by cfg.seed; the head is the
  // centroid matrix and is never part of parameters().
  Model(ModelConfig cfg, CentroidSet centroids);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  // Copies would silently share parameter storage; use clone().
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  const CentroidSet& centroids() const noexcept { return centroids_; }
  // C×D constant; bit-identical to centroids().points().
  const Tensor& head() const noexcept { return head_; }

  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  // Non-trainable state (batch-norm running statistics), named like parameters.
  std::vector<NamedTensor> buffers() const;
  std::size_t parameter_count() const;
  // Parameter or buffer by name; throws ArgumentError when absent.
  Tensor& state_tensor(const std::string& name);

  // x is [B × input_shape...]. training selects batch statistics for
  // batch-norm layers and updates their running averages.
  ForwardOutput forward(const Tensor& x, double scale, bool training);
  // Backbone output only.
  Tensor features(const Tensor& x, bool training);
  // Cosines of arbitrary feature rows against the head.
  Tensor cosines_from_features(const Tensor& features) const;

  // argmax of cosines per row, ties to the lowest class index (eval mode).
  std::vector<int> predict(const Tensor& x);

  void zero_grad();
  // Independent copy for evaluation snapshots.
  Model clone() const;

 private:
  struct BatchNormLayer {
    std::size_t gamma, beta;  // indices into params_
    BatchNormState state;
    std::string name;
  };

  std::size_t add_param(const std::string& name, Shape shape, double stddev);
  std::size_t add_batch_norm(const std::string& name, std::size_t channels);
  Tensor apply_bn(std::size_t layer, const Tensor& x, bool training);
  Tensor linear(std::size_t w, std::size_t b, const Tensor& x) const;
  Tensor conv(std::size_t w, const Tensor& x, std::size_t stride, std::size_t pad) const;

  void build_mlp();
  void build_conv_small();
  void build_wideresnet();
  Tensor forward_mlp(const Tensor& x);
  Tensor forward_conv_small(const Tensor& x, bool training);
  Tensor forward_wideresnet(const Tensor& x, bool training);

  ModelConfig cfg_;
  CentroidSet centroids_;
  Tensor head_;
  std::vector<NamedTensor> params_;
  std::vector<BatchNormLayer> bn_;
  std::mt19937_64 init_rng_;

  // Layer index bookkeeping filled by the build_* functions.
  struct WrnBlock {
    std::size_t bn1, conv1, bn2, conv2, stride;
    std::size_t shortcut;  // npos when identity
  };
  std::vector<std::size_t> layer_w_, layer_b_, layer_bn_;
  std::vector<WrnBlock> wrn_blocks_;
  std::size_t proj_w_ = npos, proj_b_ = npos, final_bn_ = npos, stem_ = npos;

 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// Checkpoint text format:
//   PEDCC-MODEL 1
//   input_shape <extents>
//   architecture <kind> <args>
//   feature_dim <D>
//   num_classes <C>
//   activation relu
//   seed <seed>
//   <centroid block, same format as centroid files>
//   parameters <count>
//   <name> <rank> <extents> <values>          one line per tensor
//   buffers <count>
//   <name> <rank> <extents> <values>
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace pedcc
