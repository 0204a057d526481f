#include "othin/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace othin::simd {
namespace {

constexpr KernelTable kScalarTable{&scalar::dot, &scalar::center_sqnorm, &scalar::axpy,
                                   &scalar::sqnorm};
#if defined(OTHIN_HAVE_AVX2)
constexpr KernelTable kAvx2Table{&avx2::dot, &avx2::center_sqnorm, &avx2::axpy, &avx2::sqnorm};
#endif
#if defined(OTHIN_HAVE_NEON)
constexpr KernelTable kNeonTable{&neon::dot, &neon::center_sqnorm, &neon::axpy, &neon::sqnorm};
#endif

// OTHIN_ISA=scalar forces the reference kernels for the whole process.
Isa initial_isa() {
  if (const char* env = std::getenv("OTHIN_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
  }
  return best_supported_isa();
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> table{&table_for(initial_isa())};
  return table;
}

std::atomic<Isa>& active_tag() {
  static std::atomic<Isa> tag{initial_isa()};
  return tag;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if defined(OTHIN_HAVE_AVX2)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(OTHIN_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa best_supported_isa() {
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

const KernelTable& table_for(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA not available: " + std::string(isa_name(isa)));
  }
  switch (isa) {
#if defined(OTHIN_HAVE_AVX2)
    case Isa::Avx2: return kAvx2Table;
#endif
#if defined(OTHIN_HAVE_NEON)
    case Isa::Neon: return kNeonTable;
#endif
    default: return kScalarTable;
  }
}

Isa active_isa() { return active_tag().load(std::memory_order_relaxed); }

void select_isa(Isa isa) {
  const KernelTable& t = table_for(isa);
  active_table().store(&t, std::memory_order_relaxed);
  active_tag().store(isa, std::memory_order_relaxed);
}

const KernelTable& kernels() { return *active_table().load(std::memory_order_relaxed); }

}  // namespace othin::simd
