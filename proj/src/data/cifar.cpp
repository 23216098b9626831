#include <cmath>
#include <filesystem>
#include <fstream>

#include "pedcc/data.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

namespace {
constexpr std::size_t kPlane = 1024;
}

CifarRecords read_cifar10_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes == 0 || bytes % kCifarRecordBytes != 0) {
    const std::size_t whole = bytes / kCifarRecordBytes + (bytes % kCifarRecordBytes ? 1 : 0);
    throw FormatError("'" + path + "' has " + std::to_string(bytes) + " bytes, expected a positive multiple of " +
                      std::to_string(kCifarRecordBytes) + " (e.g. " + std::to_string(whole * kCifarRecordBytes) +
                      " for " + std::to_string(whole) + " records)");
  }
  is.seekg(0);
  std::vector<std::uint8_t> raw(bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw FormatError("short read on '" + path + "'");

  const std::size_t n = bytes / kCifarRecordBytes;
  CifarRecords rec;
  rec.labels.resize(n);
  rec.pixels.resize(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* r = raw.data() + i * kCifarRecordBytes;
    if (r[0] > 9) throw FormatError("record " + std::to_string(i) + " has label byte " + std::to_string(r[0]) + " > 9");
    rec.labels[i] = r[0];
    std::copy(r + 1, r + kCifarRecordBytes, rec.pixels.begin() + static_cast<std::ptrdiff_t>(i * kCifarPixels));
  }
  return rec;
}

std::pair<std::array<double, 3>, std::array<double, 3>> cifar_channel_stats(const CifarRecords& records) {
  std::array<double, 3> mean{}, stddev{};
  const double count = static_cast<double>(records.size() * kPlane);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i)
      for (std::size_t p = 0; p < kPlane; ++p) {
        const double v = records.pixels[i * kCifarPixels + c * kPlane + p] / 255.0;
        s += v;
        s2 += v * v;
      }
    mean[c] = s / count;
    const double var = std::max(s2 / count - mean[c] * mean[c], 0.0);
    stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return {mean, stddev};
}

Dataset cifar_to_dataset(const CifarRecords& records, Split split, const std::array<double, 3>& mean,
                         const std::array<double, 3>& stddev) {
  Dataset ds;
  ds.sample_shape = {3, 32, 32};
  ds.split = split;
  ds.num_classes = 10;
  ds.channel_mean.assign(mean.begin(), mean.end());
  ds.channel_std.assign(stddev.begin(), stddev.end());
  ds.labels.assign(records.labels.begin(), records.labels.end());
  ds.samples.resize(records.pixels.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < kPlane; ++p) {
        const std::size_t at = i * kCifarPixels + c * kPlane + p;
        ds.samples[at] = (records.pixels[at] / 255.0 - mean[c]) / stddev[c];
      }
  return ds;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  CifarRecords train;
  for (int b = 1; b <= 5; ++b) {
    const fs::path p = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
    if (!fs::exists(p)) throw std::runtime_error("missing CIFAR-10 batch '" + p.string() + "'");
    CifarRecords part = read_cifar10_file(p.string());
    train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    train.pixels.insert(train.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  const fs::path tp = fs::path(dir) / "test_batch.bin";
  if (!fs::exists(tp)) throw std::runtime_error("missing CIFAR-10 batch '" + tp.string() + "'");
  const CifarRecords test = read_cifar10_file(tp.string());
  const auto [mean, stddev] = cifar_channel_stats(train);
  return {cifar_to_dataset(train, Split::train, mean, stddev), cifar_to_dataset(test, Split::test, mean, stddev)};
}

std::array<std::uint8_t, kCifarRecordBytes> cifar_record_bytes(const Dataset& ds, std::size_t i) {
  if (ds.sample_numel() != kCifarPixels || ds.channel_mean.size() != 3 || ds.channel_std.size() != 3)
    throw ArgumentError("cifar_record_bytes needs a dataset loaded from CIFAR-10 records");
  if (ds.labels[i] < 0 || ds.labels[i] > 9) throw ArgumentError("record has no CIFAR label");
  std::array<std::uint8_t, kCifarRecordBytes> out{};
  out[0] = static_cast<std::uint8_t>(ds.labels[i]);
  const auto s = ds.sample(i);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < kPlane; ++p) {
      const double v = (s[c * kPlane + p] * ds.channel_std[c] + ds.channel_mean[c]) * 255.0;
      out[1 + c * kPlane + p] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return out;
}

}  // namespace pedcc
