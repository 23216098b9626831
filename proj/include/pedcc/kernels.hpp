#pragma once

// Dense inner-loop kernels with a scalar reference implementation and SIMD
// variants chosen once at runtime.
//
// Every SIMD variant vectorizes across independent output elements only and
// keeps the per-element accumulation order of the scalar loop, so all
// variants produce bit-identical results. The equivalence tests rely on this.

#include <cstddef>
#include <string_view>

namespace pedcc::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  // c[M×N] = a[M×K] · b[K×N]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // c[M×N] = a[K×M]ᵀ · b[K×N]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // c[M×N] = a[M×K] · b[N×K]ᵀ
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // y += alpha·x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = x ⊙ y
  void (*hadamard)(const double* x, const double* y, double* out, std::size_t n);
  // v = momentum·v + g; p = p − lr·v
  void (*momentum_step)(double* p, const double* g, double* v, double lr, double momentum,
                        std::size_t n);
  // d[i][j] = Σ_k (a[i][k] − b[j][k])², a is N×D, b is M×D
  void (*pairwise_sqdist)(const double* a, const double* b, double* d, std::size_t n,
                          std::size_t m, std::size_t dim);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);

// Selected on first use: AVX2 when the CPU has it, unless the environment
// variable PEDCC_SSL_ISA=scalar forces the reference path.
const KernelTable& active();
Isa active_isa();

// Overrides the runtime choice. Throws ArgumentError if the CPU lacks the ISA.
void select(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace pedcc::kernels
