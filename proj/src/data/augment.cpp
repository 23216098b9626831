#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pedcc/centroids.hpp"
#include "pedcc/data.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

namespace {

struct OpInfo {
  AugmentKind kind;
  const char* name;
  double max_magnitude;
  bool vector_ok;
};

constexpr OpInfo kOps[] = {
    {AugmentKind::horizontal_flip, "horizontal_flip", 0.0, false},
    {AugmentKind::shift_crop, "shift_crop", 16.0, false},
    {AugmentKind::brightness_contrast, "brightness_contrast", 1.0, false},
    {AugmentKind::rotation, "rotation", 180.0, true},
    {AugmentKind::cutout, "cutout", 32.0, false},
    {AugmentKind::bounded_jitter, "bounded_jitter", 10.0, true},
};

const OpInfo& info(AugmentKind k) {
  for (const auto& o : kOps)
    if (o.kind == k) return o;
  throw ArgumentError("unknown augmentation kind");
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

long uniform_int(std::mt19937_64& rng, long lo, long hi) {
  return std::uniform_int_distribution<long>(lo, hi)(rng);
}

struct Image {
  std::size_t c, h, w;
  std::size_t at(std::size_t ch, std::size_t y, std::size_t x) const { return (ch * h + y) * w + x; }
};

void flip(std::vector<double>& v, const Image& im) {
  for (std::size_t ch = 0; ch < im.c; ++ch)
    for (std::size_t y = 0; y < im.h; ++y)
      std::reverse(v.begin() + static_cast<std::ptrdiff_t>(im.at(ch, y, 0)),
                   v.begin() + static_cast<std::ptrdiff_t>(im.at(ch, y, 0) + im.w));
}

// Translate by (dy, dx) with zero fill: equivalent to padding then cropping.
void shift(std::vector<double>& v, const Image& im, double mag, std::mt19937_64& rng) {
  const long m = static_cast<long>(mag);
  const long dy = uniform_int(rng, -m, m), dx = uniform_int(rng, -m, m);
  std::vector<double> out(v.size(), 0.0);
  const long H = static_cast<long>(im.h), W = static_cast<long>(im.w);
  for (std::size_t ch = 0; ch < im.c; ++ch)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const long sy = y + dy, sx = x + dx;
        if (sy >= 0 && sy < H && sx >= 0 && sx < W) out[im.at(ch, y, x)] = v[im.at(ch, sy, sx)];
      }
  v.swap(out);
}

void brightness_contrast(std::vector<double>& v, const Image& im, double mag, std::mt19937_64& rng) {
  const double b = uniform(rng, -mag, mag);
  const double k = uniform(rng, 1.0 - mag, 1.0 + mag);
  const std::size_t plane = im.h * im.w;
  for (std::size_t ch = 0; ch < im.c; ++ch) {
    double mu = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mu += v[ch * plane + p];
    mu /= static_cast<double>(plane);
    for (std::size_t p = 0; p < plane; ++p) {
      double& x = v[ch * plane + p];
      x = (x - mu) * k + mu + b;
    }
  }
}

// Nearest-neighbour inverse mapping about the image centre, zero fill.
void rotate_image(std::vector<double>& v, const Image& im, double degrees, std::mt19937_64& rng) {
  const double th = uniform(rng, -degrees, degrees) * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = (static_cast<double>(im.h) - 1.0) / 2.0, cx = (static_cast<double>(im.w) - 1.0) / 2.0;
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t y = 0; y < im.h; ++y)
    for (std::size_t x = 0; x < im.w; ++x) {
      const double ry = static_cast<double>(y) - cy, rx = static_cast<double>(x) - cx;
      const long sy = std::lround(c * ry - s * rx + cy);
      const long sx = std::lround(s * ry + c * rx + cx);
      if (sy < 0 || sx < 0 || sy >= static_cast<long>(im.h) || sx >= static_cast<long>(im.w)) continue;
      for (std::size_t ch = 0; ch < im.c; ++ch) out[im.at(ch, y, x)] = v[im.at(ch, sy, sx)];
    }
  v.swap(out);
}

void rotate_pair(std::vector<double>& v, double degrees, std::mt19937_64& rng) {
  const long n = static_cast<long>(v.size());
  const auto i = static_cast<std::size_t>(uniform_int(rng, 0, n - 1));
  auto j = static_cast<std::size_t>(uniform_int(rng, 0, n - 2));
  if (j >= i) ++j;
  const double th = uniform(rng, -degrees, degrees) * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double a = v[i], b = v[j];
  v[i] = c * a - s * b;
  v[j] = s * a + c * b;
}

void cutout(std::vector<double>& v, const Image& im, double side, std::mt19937_64& rng) {
  const long half = static_cast<long>(side) / 2;
  const long cy = uniform_int(rng, 0, static_cast<long>(im.h) - 1);
  const long cx = uniform_int(rng, 0, static_cast<long>(im.w) - 1);
  const long y0 = std::max(0L, cy - half), y1 = std::min(static_cast<long>(im.h), cy - half + static_cast<long>(side));
  const long x0 = std::max(0L, cx - half), x1 = std::min(static_cast<long>(im.w), cx - half + static_cast<long>(side));
  for (std::size_t ch = 0; ch < im.c; ++ch)
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) v[im.at(ch, y, x)] = 0.0;
}

}  // namespace

std::string augment_kind_name(AugmentKind k) { return info(k).name; }

AugmentKind parse_augment_kind(const std::string& name) {
  for (const auto& o : kOps)
    if (name == o.name) return o.kind;
  throw ArgumentError("unknown augmentation op '" + name + "'");
}

void AugmentPolicy::validate() const {
  for (const auto& op : ops) {
    const auto& in = info(op.kind);
    if (!(op.probability >= 0.0 && op.probability <= 1.0))
      throw ArgumentError(std::string(in.name) + " probability must lie in [0, 1]");
    if (!(op.magnitude >= 0.0 && op.magnitude <= in.max_magnitude))
      throw ArgumentError(std::string(in.name) + " magnitude must lie in [0, " + format_real(in.max_magnitude) + "]");
  }
}

AugmentPolicy AugmentPolicy::default_image() {
  return {{{AugmentKind::horizontal_flip, 0.5, 0.0},
           {AugmentKind::shift_crop, 1.0, 2.0},
           {AugmentKind::brightness_contrast, 0.5, 0.2},
           {AugmentKind::cutout, 0.5, 8.0}}};
}

AugmentPolicy AugmentPolicy::default_vector(double jitter, double degrees) {
  return {{{AugmentKind::bounded_jitter, 1.0, jitter}, {AugmentKind::rotation, 0.5, degrees}}};
}

std::string AugmentPolicy::to_string() const {
  if (ops.empty()) return "identity";
  std::string out;
  for (const auto& op : ops) {
    if (!out.empty()) out += ',';
    out += augment_kind_name(op.kind) + ':' + format_real(op.probability) + ':' + format_real(op.magnitude);
  }
  return out;
}

AugmentPolicy AugmentPolicy::parse(const std::string& text) {
  AugmentPolicy p;
  if (text == "identity" || text.empty()) return p;
  if (text == "default_image") return default_image();
  if (text == "default_vector") return default_vector();
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find(':');
    const auto b = a == std::string::npos ? a : item.find(':', a + 1);
    if (b == std::string::npos) throw ArgumentError("augmentation op '" + item + "' must be kind:probability:magnitude");
    AugmentOp op{parse_augment_kind(item.substr(0, a)), 0.0, 0.0};
    try {
      std::size_t used = 0;
      const std::string ps = item.substr(a + 1, b - a - 1), ms = item.substr(b + 1);
      op.probability = std::stod(ps, &used);
      if (used != ps.size()) throw std::invalid_argument(ps);
      op.magnitude = std::stod(ms, &used);
      if (used != ms.size()) throw std::invalid_argument(ms);
    } catch (const std::logic_error&) {
      throw ArgumentError("augmentation op '" + item + "' has a malformed number");
    }
    p.ops.push_back(op);
  }
  p.validate();
  return p;
}

std::vector<double> augment(std::span<const double> sample, const Shape& shape, const AugmentPolicy& policy,
                            std::mt19937_64& rng) {
  if (sample.size() != shape_numel(shape))
    throw DimensionError("sample of " + std::to_string(sample.size()) + " values does not match shape " +
                         shape_str(shape));
  const bool image = shape.size() == 3;
  if (!image && shape.size() != 1) throw ArgumentError("augment expects a [D] vector or [C×H×W] image sample");
  const Image im = image ? Image{shape[0], shape[1], shape[2]} : Image{1, 1, sample.size()};

  std::vector<double> v(sample.begin(), sample.end());
  for (const auto& op : policy.ops) {
    if (!image && !info(op.kind).vector_ok)
      throw ArgumentError(augment_kind_name(op.kind) + " needs an image sample, got shape " + shape_str(shape));
    if (!image && op.kind == AugmentKind::rotation && v.size() < 2)
      throw ArgumentError("rotation needs at least two coordinates");
    // One draw per op regardless of outcome keeps the stream layout fixed.
    const bool apply = uniform(rng, 0.0, 1.0) < op.probability;
    if (!apply) continue;
    switch (op.kind) {
      case AugmentKind::horizontal_flip: flip(v, im); break;
      case AugmentKind::shift_crop: shift(v, im, op.magnitude, rng); break;
      case AugmentKind::brightness_contrast: brightness_contrast(v, im, op.magnitude, rng); break;
      case AugmentKind::rotation:
        if (image) rotate_image(v, im, op.magnitude, rng);
        else rotate_pair(v, op.magnitude, rng);
        break;
      case AugmentKind::cutout: cutout(v, im, op.magnitude, rng); break;
      case AugmentKind::bounded_jitter:
        for (double& x : v) x += uniform(rng, -op.magnitude, op.magnitude);
        break;
    }
  }
  return v;
}

}  // namespace pedcc
