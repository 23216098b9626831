#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "pedcc/centroids.hpp"
#include "pedcc/errors.hpp"

namespace pedcc {

std::string_view method_name(CentroidMethod m) {
  return m == CentroidMethod::simplex ? "simplex" : "repulsion";
}

CentroidMethod parse_method(std::string_view name) {
  if (name == "repulsion") return CentroidMethod::repulsion;
  if (name == "simplex") return CentroidMethod::simplex;
  throw ArgumentError("unknown centroid method '" + std::string(name) + "'");
}

std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_stored_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CentroidSet::CentroidSet(std::size_t num_classes, std::size_t dim, std::vector<double> points,
                         std::uint64_t seed, CentroidMethod method, double unit_tolerance)
    : num_classes_(num_classes), dim_(dim), points_(std::move(points)), seed_(seed), method_(method) {
  if (num_classes_ < 2) throw ArgumentError("centroid set needs at least 2 classes");
  if (dim_ < 2) throw ArgumentError("centroid set needs dimension at least 2");
  if (points_.size() != num_classes_ * dim_)
    throw DimensionError("centroid set expects " + std::to_string(num_classes_ * dim_) + " values, got " +
                         std::to_string(points_.size()));
  for (std::size_t k = 0; k < num_classes_; ++k) {
    double s = 0.0;
    for (double v : row(k)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > unit_tolerance)
      throw ArgumentError("centroid row " + std::to_string(k) + " has norm " + format_real(std::sqrt(s)));
  }
  if (!(min_pairwise_distance(points_, dim_) > 0.0)) throw ArgumentError("centroid rows are not distinct");
}

std::span<const double> CentroidSet::row(std::size_t k) const {
  return std::span<const double>(points_).subspan(k * dim_, dim_);
}

Tensor CentroidSet::as_tensor() const { return Tensor::from({num_classes_, dim_}, points_); }

void SolverConfig::validate() const {
  if (max_iters < 1) throw ArgumentError("solver max_iters must be at least 1");
  if (!(step_size > 0.0)) throw ArgumentError("solver step_size must be positive");
  if (!(convergence_tol > 0.0)) throw ArgumentError("solver convergence_tol must be positive");
  if (!(force_exponent > 0.0)) throw ArgumentError("solver force_exponent must be positive");
}

double min_pairwise_distance(std::span<const double> rows, std::size_t dim) {
  const std::size_t n = rows.size() / dim;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = rows[i * dim + k] - rows[j * dim + k];
        s += d * d;
      }
      best = std::min(best, std::sqrt(s));
    }
  return best;
}

double min_pairwise_distance(const CentroidSet& cs) { return min_pairwise_distance(cs.points(), cs.dim()); }

// ---- regular simplex ---------------------------------------------------------

CentroidSet simplex_centroids(std::size_t num_classes, std::size_t dim) {
  if (num_classes < 2 || dim < 2) throw ArgumentError("simplex needs C ≥ 2 and D ≥ 2");
  if (num_classes > dim + 1)
    throw ArgumentError("no regular simplex with " + std::to_string(num_classes) + " vertices in " +
                        std::to_string(dim) + " dimensions (needs C ≤ D+1)");
  const std::size_t c = num_classes;
  // Centered basis vectors e_i − 1/C expressed in the orthonormal Helmert
  // basis of the hyperplane orthogonal to the all-ones vector.
  std::vector<double> points(c * dim, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t k = 1; k < c; ++k) {
      // h_k = (1,…,1 [k times], −k, 0,…) / sqrt(k(k+1)); h_k·(e_i − 1/C) = h_k[i].
      const double norm = std::sqrt(static_cast<double>(k * (k + 1)));
      double coord = 0.0;
      if (i < k)
        coord = 1.0 / norm;
      else if (i == k)
        coord = -static_cast<double>(k) / norm;
      points[i * dim + (k - 1)] = coord;
    }
    // ‖e_i − 1/C‖ = sqrt((C−1)/C)
    const double scale = std::sqrt(static_cast<double>(c) / static_cast<double>(c - 1));
    for (std::size_t k = 0; k < dim; ++k) points[i * dim + k] *= scale;
  }
  return CentroidSet(c, dim, std::move(points), 0, CentroidMethod::simplex);
}

// ---- repulsion solver ----------------------------------------------------------

namespace {

struct Forces {
  std::vector<double> tangential;
  double residual = 0.0;
  double energy = 0.0;
};

double potential(double dist, double exponent) {
  // Antiderivative of the force law, so forces are −∇potential.
  if (exponent == 1.0) return -std::log(dist);
  return std::pow(dist, 1.0 - exponent) / (exponent - 1.0);
}

Forces compute_forces(const std::vector<double>& x, std::size_t n, std::size_t d, double exponent) {
  Forces f;
  f.tangential.assign(n * d, 0.0);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        diff[k] = x[i * d + k] - x[j * d + k];
        s += diff[k] * diff[k];
      }
      const double dist = std::sqrt(s);
      f.energy += potential(dist, exponent);
      const double mag = std::pow(dist, -exponent) / dist;
      for (std::size_t k = 0; k < d; ++k) {
        f.tangential[i * d + k] += mag * diff[k];
        f.tangential[j * d + k] -= mag * diff[k];
      }
    }
  for (std::size_t i = 0; i < n; ++i) {
    double* t = &f.tangential[i * d];
    const double* p = &x[i * d];
    double radial = 0.0;
    for (std::size_t k = 0; k < d; ++k) radial += t[k] * p[k];
    double norm2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      t[k] -= radial * p[k];
      norm2 += t[k] * t[k];
    }
    f.residual = std::max(f.residual, std::sqrt(norm2));
  }
  return f;
}

void normalize_row(double* row, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += row[k] * row[k];
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t k = 0; k < d; ++k) row[k] *= inv;
}

}  // namespace

PedccResult generate_pedcc(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                           const SolverConfig& cfg) {
  if (num_classes < 2) throw ArgumentError("generate_pedcc needs at least 2 classes, got " + std::to_string(num_classes));
  if (dim < 2) throw ArgumentError("generate_pedcc needs dimension at least 2, got " + std::to_string(dim));
  cfg.validate();
  const std::size_t n = num_classes, d = dim;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw_row = [&](double* row) {
    double s = 0.0;
    do {
      s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        row[k] = normal(rng);
        s += row[k] * row[k];
      }
    } while (s == 0.0);
    normalize_row(row, d);
  };

  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    draw_row(&x[i * d]);
    // Coincident starts make the force singular; redraw the later point.
    for (std::size_t attempt = 0; attempt < 1000; ++attempt) {
      bool clash = false;
      for (std::size_t j = 0; j < i && !clash; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = x[i * d + k] - x[j * d + k];
          s += diff * diff;
        }
        clash = std::sqrt(s) < 1e-9;
      }
      if (!clash) break;
      draw_row(&x[i * d]);
    }
  }

  PedccResult result{CentroidSet(n, d, x, seed, CentroidMethod::repulsion), false, 0, 0.0,
                     min_pairwise_distance(x, d), {}, true};

  Forces cur = compute_forces(x, n, d, cfg.force_exponent);
  result.residual_trace.push_back(cur.residual);
  double step = cfg.step_size;
  // Steps this small cannot lower the max residual any further; the solver
  // then falls back to plain energy descent.
  const double monotone_floor = cfg.step_size * 1e-12;
  std::vector<double> trial(n * d);
  std::size_t iter = 0;
  while (cur.residual >= cfg.convergence_tol && iter < cfg.max_iters) {
    ++iter;
    for (std::size_t i = 0; i < n * d; ++i) trial[i] = x[i] + step * cur.tangential[i];
    for (std::size_t i = 0; i < n; ++i) normalize_row(&trial[i * d], d);
    Forces next = compute_forces(trial, n, d, cfg.force_exponent);
    // Energy differences near equilibrium fall below rounding, hence the slack.
    const bool energy_ok = next.energy <= cur.energy + 1e-14 * std::abs(cur.energy);
    const bool residual_ok = !result.monotone_residual || next.residual <= cur.residual;
    if (!energy_ok || !residual_ok) {
      step *= 0.5;
      if (step < monotone_floor) {
        if (!result.monotone_residual) break;
        result.monotone_residual = false;
        step = cfg.step_size;
      }
      continue;
    }
    x.swap(trial);
    cur = std::move(next);
    result.residual_trace.push_back(cur.residual);
    step = std::min(cfg.step_size, step * 2.0);
  }

  result.converged = cur.residual < cfg.convergence_tol;
  result.iterations = iter;
  result.residual = cur.residual;
  result.centroids = CentroidSet(n, d, std::move(x), seed, CentroidMethod::repulsion);
  return result;
}

// ---- text format -----------------------------------------------------------------

void write_centroids(std::ostream& os, const CentroidSet& cs) {
  os << "PEDCC 1 " << cs.num_classes() << ' ' << cs.dim() << ' ' << cs.seed() << ' '
     << method_name(cs.method()) << '\n';
  for (std::size_t k = 0; k < cs.num_classes(); ++k) {
    const auto r = cs.row(k);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? " " : "") << format_stored_real(r[j]);
    os << '\n';
  }
}

namespace {

double parse_real(const std::string& tok, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
    throw FormatError("invalid real '" + tok + "'", line);
  return v;
}

}  // namespace

CentroidSet read_centroids(std::istream& is, std::size_t first_line) {
  std::string header;
  if (!std::getline(is, header)) throw FormatError("missing centroid header", first_line);
  std::istringstream hs(header);
  std::string magic, method;
  int version = 0;
  long long c = 0, d = 0;
  unsigned long long seed = 0;
  if (!(hs >> magic >> version >> c >> d >> seed >> method) || magic != "PEDCC" || version != 1)
    throw FormatError("malformed header, expected 'PEDCC 1 <C> <D> <seed> <method>'", first_line);
  std::string extra;
  if (hs >> extra) throw FormatError("trailing text in header", first_line);
  if (c < 2 || d < 2) throw FormatError("header needs C ≥ 2 and D ≥ 2", first_line);
  CentroidMethod m;
  try {
    m = parse_method(method);
  } catch (const ArgumentError& e) {
    throw FormatError(e.what(), first_line);
  }

  std::vector<double> points;
  points.reserve(static_cast<std::size_t>(c * d));
  std::string line;
  for (long long k = 0; k < c; ++k) {
    const std::size_t lineno = first_line + 1 + static_cast<std::size_t>(k);
    if (!std::getline(is, line))
      throw FormatError("expected " + std::to_string(c) + " centroid rows, found " + std::to_string(k), lineno);
    std::istringstream ls(line);
    std::string tok;
    long long count = 0;
    while (ls >> tok) {
      if (count < d) points.push_back(parse_real(tok, lineno));
      ++count;
    }
    if (count != d)
      throw FormatError("row " + std::to_string(k) + " has " + std::to_string(count) + " columns, expected " +
                            std::to_string(d),
                        lineno);
    double s = 0.0;
    for (long long j = 0; j < d; ++j) s += points[k * d + j] * points[k * d + j];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
      throw FormatError("row " + std::to_string(k) + " is not unit norm (norm " + format_real(std::sqrt(s)) + ")",
                        lineno);
  }
  try {
    return CentroidSet(static_cast<std::size_t>(c), static_cast<std::size_t>(d), std::move(points), seed, m, 1e-6);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), first_line);
  }
}

void save_centroids(const CentroidSet& cs, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_centroids(os, cs);
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

CentroidSet load_centroids(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_centroids(is);
}

}  // namespace pedcc
