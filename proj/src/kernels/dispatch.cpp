#include <atomic>
#include <cstdlib>
#include <string>

#include "pedcc/errors.hpp"
#include "pedcc/kernels.hpp"

namespace pedcc::kernels {
namespace {

Isa detect() {
  if (const char* env = std::getenv("PEDCC_SSL_ISA"); env != nullptr && std::string(env) == "scalar")
    return Isa::scalar;
  return cpu_supports(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() {
  return current().load(std::memory_order_relaxed) == Isa::avx2 ? *avx2_table() : scalar_table();
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void select(Isa isa) {
  if (!cpu_supports(isa))
    throw ArgumentError("kernel ISA " + std::string(isa_name(isa)) + " is not supported on this CPU");
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace pedcc::kernels
