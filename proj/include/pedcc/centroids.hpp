#pragma once

// Predefined evenly-distributed class centroids: C unit vectors on the
// (D−1)-sphere, generated by a charge-repulsion equilibrium solver or, when
// C ≤ D+1, by the closed-form regular simplex.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pedcc/tensor.hpp"

namespace pedcc {

enum class CentroidMethod { repulsion, simplex };

std::string_view method_name(CentroidMethod m);
CentroidMethod parse_method(std::string_view name);

// Immutable C×D matrix of unit rows.
class CentroidSet {
 public:
  // Validates: C ≥ 2, D ≥ 2, |‖row‖ − 1| ≤ unit_tolerance, rows pairwise distinct.
  CentroidSet(std::size_t num_classes, std::size_t dim, std::vector<double> points,
              std::uint64_t seed, CentroidMethod method, double unit_tolerance = 1e-9);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  CentroidMethod method() const noexcept { return method_; }
  std::span<const double> points() const noexcept { return points_; }
  std::span<const double> row(std::size_t k) const;
  // More classes than twice the dimension; the spread is then noticeably
  // below the simplex ideal.
  bool crowded() const noexcept { return num_classes_ > 2 * dim_; }

  // C×D constant tensor (no gradient).
  Tensor as_tensor() const;

  friend bool operator==(const CentroidSet&, const CentroidSet&) = default;

 private:
  std::size_t num_classes_;
  std::size_t dim_;
  std::vector<double> points_;
  std::uint64_t seed_;
  CentroidMethod method_;
};

struct SolverConfig {
  std::size_t max_iters = 20000;
  double step_size = 0.05;
  // Equilibrium when every point's tangential net force norm is below this.
  double convergence_tol = 1e-9;
  // Force magnitude 1/distance^force_exponent.
  double force_exponent = 2.0;

  void validate() const;
};

struct PedccResult {
  CentroidSet centroids;
  bool converged = false;
  std::size_t iterations = 0;
  // Max tangential force norm at the final configuration.
  double residual = 0.0;
  double initial_min_distance = 0.0;
  // Residual after each accepted iteration, starting with the initial one.
  std::vector<double> residual_trace;
  // False when the solver had to give up the non-increasing residual
  // guarantee to keep descending (crowded sets with C > D+1).
  bool monotone_residual = true;
};

PedccResult generate_pedcc(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                           const SolverConfig& cfg = {});

// Regular simplex: every pairwise dot equals −1/(C−1). Requires C ≤ D+1.
CentroidSet simplex_centroids(std::size_t num_classes, std::size_t dim);

double min_pairwise_distance(const CentroidSet& cs);
// Same metric on a raw row-major matrix.
double min_pairwise_distance(std::span<const double> rows, std::size_t dim);

// Text format:
//   PEDCC 1 <C> <D> <seed> <method>
//   C lines of D reals, 17 significant digits, single-space separated.
void write_centroids(std::ostream& os, const CentroidSet& cs);
// first_line is the file line number of the header, for error messages.
CentroidSet read_centroids(std::istream& is, std::size_t first_line = 1);
void save_centroids(const CentroidSet& cs, const std::string& path);
CentroidSet load_centroids(const std::string& path);

// Shortest round-trip decimal form, used for reports and CSV exports.
std::string format_real(double v);
// "%.17g", used by the centroid and checkpoint files.
std::string format_stored_real(double v);

}  // namespace pedcc
