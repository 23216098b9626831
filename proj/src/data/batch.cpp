#include <algorithm>

#include "pedcc/data.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

namespace {

constexpr std::uint64_t kLabeledStream = 0x4c41424c;
constexpr std::uint64_t kUnlabeledStream = 0x554e4c42;
constexpr std::uint64_t kAugmentStream = 0x41554754;

// Rows for positions [step·count, (step+1)·count) of the infinite sequence
// formed by concatenating one fresh permutation of pool per epoch.
std::vector<std::size_t> window(const std::vector<std::size_t>& pool, std::size_t count, std::size_t step,
                                std::uint64_t stream_seed) {
  std::vector<std::size_t> rows;
  rows.reserve(count);
  std::vector<std::size_t> perm;
  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t pos = step * count + r;
    const std::size_t epoch = pos / pool.size();
    if (epoch != perm_epoch) {
      perm = pool;
      std::mt19937_64 rng(mix_seed(stream_seed, epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      perm_epoch = epoch;
    }
    rows.push_back(perm[pos % pool.size()]);
  }
  return rows;
}

}  // namespace

SemiBatch compose_batch(const Dataset& ds, const Composition& composition, const AugmentPolicy& policy,
                        std::size_t step, std::uint64_t seed) {
  const auto labeled = ds.labeled_indices();
  const auto unlabeled = ds.unlabeled_indices();
  if (composition.labeled == 0) throw ArgumentError("composition needs at least one labeled sample per step");
  if (labeled.size() < composition.labeled)
    throw ArgumentError("dataset has " + std::to_string(labeled.size()) + " labeled samples, composition needs " +
                        std::to_string(composition.labeled));
  if (unlabeled.size() < composition.unlabeled)
    throw ArgumentError("dataset has " + std::to_string(unlabeled.size()) + " unlabeled samples, composition needs " +
                        std::to_string(composition.unlabeled));

  SemiBatch b;
  b.M = composition.labeled;
  b.S = composition.unlabeled;
  b.labeled_rows = window(labeled, b.M, step, mix_seed(seed, kLabeledStream));
  b.x = ds.gather(b.labeled_rows);
  b.y.reserve(b.M);
  for (std::size_t r : b.labeled_rows) b.y.push_back(ds.labels[r]);

  if (b.S > 0) {
    b.unlabeled_rows = window(unlabeled, b.S, step, mix_seed(seed, kUnlabeledStream));
    b.u = ds.gather(b.unlabeled_rows);
    const std::size_t n = ds.sample_numel();
    std::vector<double> aug;
    aug.reserve(b.S * n);
    const std::uint64_t aug_seed = mix_seed(mix_seed(seed, kAugmentStream), step);
    for (std::size_t i = 0; i < b.S; ++i) {
      std::mt19937_64 rng(mix_seed(aug_seed, i));
      const auto a = augment(ds.sample(b.unlabeled_rows[i]), ds.sample_shape, policy, rng);
      aug.insert(aug.end(), a.begin(), a.end());
    }
    b.u_aug = Tensor::from(b.u.shape(), std::move(aug));
  }
  return b;
}

}  // namespace pedcc
