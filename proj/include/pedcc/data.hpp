#pragma once

// Sample streams for semi-supervised training: synthetic Gaussian blobs,
// CIFAR-10 binary ingestion, label-preserving augmentation and the
// labeled/unlabeled/augmented batch composition.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pedcc/tensor.hpp"

namespace pedcc {

constexpr int kUnlabeled = -1;

enum class Split { train, test };

struct Dataset {
  Shape sample_shape;           // extents of one sample
  std::vector<double> samples;  // N × numel(sample_shape), row-major
  std::vector<int> labels;      // kUnlabeled or [0, num_classes)
  Split split = Split::train;
  std::size_t num_classes = 0;
  // Per-channel standardization applied at load time (image data only).
  std::vector<double> channel_mean;
  std::vector<double> channel_std;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }
  std::span<const double> sample(std::size_t i) const;
  // Rows gathered in the given order as a [n × sample_shape] tensor.
  Tensor gather(std::span<const std::size_t> rows) const;
  Tensor all() const;
  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;

  void validate() const;
};

// Class k ~ N(separation · simplex_k, I) with simplex directions in D_in
// dimensions. Classes cycle 0,1,…,C−1 through the sample order.
std::pair<Dataset, Dataset> gen_blobs(std::size_t num_classes, std::size_t input_dim, std::size_t per_class_train,
                                      std::size_t per_class_test, double separation, std::uint64_t seed);

// Keeps labeled_per_class labels per class (seeded choice) and marks every
// other sample unlabeled. Sample order is unchanged.
Dataset split_labels(const Dataset& train, std::size_t labeled_per_class, std::uint64_t seed);

// ---- CIFAR-10 ------------------------------------------------------------------

constexpr std::size_t kCifarRecordBytes = 3073;
constexpr std::size_t kCifarPixels = 3072;

struct CifarRecords {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // N × 3072, channel-major
  std::size_t size() const noexcept { return labels.size(); }
};

CifarRecords read_cifar10_file(const std::string& path);
// Pixels scaled to [0,1] then standardized with the given per-channel constants.
Dataset cifar_to_dataset(const CifarRecords& records, Split split, const std::array<double, 3>& mean,
                         const std::array<double, 3>& stddev);
std::pair<std::array<double, 3>, std::array<double, 3>> cifar_channel_stats(const CifarRecords& records);
// data_batch_1..5.bin and test_batch.bin; constants from the training split.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);
// Inverts the standardization of sample i back to its original 3073 bytes.
std::array<std::uint8_t, kCifarRecordBytes> cifar_record_bytes(const Dataset& ds, std::size_t i);

// ---- augmentation ---------------------------------------------------------------

enum class AugmentKind { horizontal_flip, shift_crop, brightness_contrast, rotation, cutout, bounded_jitter };

std::string augment_kind_name(AugmentKind k);
AugmentKind parse_augment_kind(const std::string& name);

struct AugmentOp {
  AugmentKind kind;
  double probability = 0.0;
  // horizontal_flip: unused; shift_crop: max shift in pixels; brightness_contrast:
  // max brightness offset and contrast deviation; rotation: max degrees;
  // cutout: square side in pixels; bounded_jitter: per-coordinate bound.
  double magnitude = 0.0;
};

struct AugmentPolicy {
  std::vector<AugmentOp> ops;

  void validate() const;
  static AugmentPolicy identity() { return {}; }
  // flip, shift_crop, brightness_contrast, cutout.
  static AugmentPolicy default_image();
  // bounded_jitter and in-plane rotation of a random coordinate pair.
  static AugmentPolicy default_vector(double jitter = 0.5, double degrees = 10.0);

  // "kind:prob:mag,kind:prob:mag"
  std::string to_string() const;
  static AugmentPolicy parse(const std::string& text);
};

// Applies each op with its probability. Image ops need a [C×H×W] shape;
// vector samples admit only bounded_jitter and rotation.
std::vector<double> augment(std::span<const double> sample, const Shape& shape, const AugmentPolicy& policy,
                            std::mt19937_64& rng);

// ---- batch composition ------------------------------------------------------------

struct Composition {
  std::size_t labeled = 32;     // M
  std::size_t unlabeled = 160;  // S
};

struct SemiBatch {
  Tensor x;
  std::vector<int> y;
  Tensor u;
  Tensor u_aug;  // row i is an augmentation of u row i
  std::size_t M = 0;
  std::size_t S = 0;
  std::vector<std::size_t> labeled_rows;
  std::vector<std::size_t> unlabeled_rows;
};

// Samples walk through a seeded per-epoch permutation of each pool, so any
// step's batch is a pure function of (seed, step).
SemiBatch compose_batch(const Dataset& ds, const Composition& composition, const AugmentPolicy& policy,
                        std::size_t step, std::uint64_t seed);

// ---- export -------------------------------------------------------------------------

// CSV with header label,f0,…,f{D−1}; unlabeled rows use −1.
void write_dataset_csv(const Dataset& ds, const std::string& path);
Dataset read_dataset_csv(const std::string& path, std::size_t num_classes);

// Mixes values into a 64-bit seed (SplitMix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace pedcc
