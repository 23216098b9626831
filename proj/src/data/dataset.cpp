#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pedcc/centroids.hpp"
#include "pedcc/data.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t n = sample_numel();
  return std::span<const double>(samples).subspan(i * n, n);
}

Tensor Dataset::gather(std::span<const std::size_t> rows) const {
  const std::size_t n = sample_numel();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (std::size_t r : rows) {
    if (r >= size()) throw ArgumentError("dataset row " + std::to_string(r) + " out of range");
    const auto s = sample(r);
    out.insert(out.end(), s.begin(), s.end());
  }
  Shape shape{rows.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor::from(std::move(shape), std::move(out));
}

Tensor Dataset::all() const {
  std::vector<std::size_t> rows(size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return gather(rows);
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kUnlabeled) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == kUnlabeled) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (samples.size() != labels.size() * sample_numel())
    throw DimensionError("dataset holds " + std::to_string(samples.size()) + " values for " +
                         std::to_string(labels.size()) + " samples of shape " + shape_str(sample_shape));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kUnlabeled && (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes))
      throw ArgumentError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside [0, " +
                          std::to_string(num_classes) + ")");
  for (double v : samples)
    if (!std::isfinite(v)) throw NumericError("dataset contains a non-finite value");
}

std::pair<Dataset, Dataset> gen_blobs(std::size_t num_classes, std::size_t input_dim, std::size_t per_class_train,
                                      std::size_t per_class_test, double separation, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("gen_blobs needs at least 2 classes");
  if (!(separation > 0.0)) throw ArgumentError("gen_blobs separation must be positive");
  if (num_classes > input_dim + 1)
    throw ArgumentError("gen_blobs: " + std::to_string(num_classes) + " simplex means need input_dim ≥ " +
                        std::to_string(num_classes - 1));
  const CentroidSet means = simplex_centroids(num_classes, input_dim);

  auto make = [&](std::size_t per_class, Split split, std::uint64_t stream) {
    Dataset ds;
    ds.sample_shape = {input_dim};
    ds.split = split;
    ds.num_classes = num_classes;
    std::mt19937_64 rng(mix_seed(seed, stream));
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = per_class * num_classes;
    ds.samples.reserve(n * input_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const int k = static_cast<int>(i % num_classes);
      ds.labels.push_back(k);
      const auto mu = means.row(k);
      for (std::size_t j = 0; j < input_dim; ++j) ds.samples.push_back(separation * mu[j] + normal(rng));
    }
    return ds;
  };
  return {make(per_class_train, Split::train, 1), make(per_class_test, Split::test, 2)};
}

Dataset split_labels(const Dataset& train, std::size_t labeled_per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(train.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.labels[i] != kUnlabeled) by_class[train.labels[i]].push_back(i);
  Dataset out = train;
  std::fill(out.labels.begin(), out.labels.end(), kUnlabeled);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.size() < labeled_per_class)
      throw ArgumentError("split_labels: class " + std::to_string(k) + " has " + std::to_string(idx.size()) +
                          " samples, " + std::to_string(labeled_per_class) + " requested");
    std::mt19937_64 rng(mix_seed(seed, k));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < labeled_per_class; ++j) out.labels[idx[j]] = static_cast<int>(k);
  }
  return out;
}

// ---- CSV --------------------------------------------------------------------------

void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::size_t d = ds.sample_numel();
  os << "label";
  for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.labels[i];
    for (double v : ds.sample(i)) os << ',' << format_real(v);
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

Dataset read_dataset_csv(const std::string& path, std::size_t num_classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("label", 0) != 0) throw FormatError("missing 'label,f0,...' header", 1);
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (d == 0) throw FormatError("header has no feature columns", 1);
  Dataset ds;
  ds.sample_shape = {d};
  ds.num_classes = num_classes;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
        throw FormatError("invalid value '" + cell + "' in column " + std::to_string(col), lineno);
      if (col == 0) {
        if (v != std::floor(v)) throw FormatError("label must be an integer", lineno);
        ds.labels.push_back(static_cast<int>(v));
      } else {
        ds.samples.push_back(v);
      }
      ++col;
    }
    if (col != d + 1)
      throw FormatError("row has " + std::to_string(col) + " columns, header has " + std::to_string(d + 1), lineno);
  }
  try {
    ds.validate();
  } catch (const std::exception& e) {
    throw FormatError(e.what());
  }
  return ds;
}

}  // namespace pedcc
