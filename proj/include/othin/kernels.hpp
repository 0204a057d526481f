#pragma once
// Inner-loop arithmetic kernels with a scalar reference implementation and
// SIMD variants (AVX2+FMA on x86-64, NEON on aarch64). The active variant is
// chosen once at startup from the CPU's capabilities and can be overridden
// for equivalence testing.

#include <cstddef>
#include <span>
#include <string_view>

namespace othin::simd {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // out[i] = x[i] - mu[i]; returns sum_i out[i]^2
  double (*center_sqnorm)(const double* x, const double* mu, double* out, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i x[i]^2
  double (*sqnorm)(const double* x, std::size_t n);
};

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double center_sqnorm(const double* x, const double* mu, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sqnorm(const double* x, std::size_t n);
}  // namespace scalar

#if defined(OTHIN_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double center_sqnorm(const double* x, const double* mu, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sqnorm(const double* x, std::size_t n);
}  // namespace avx2
#endif

#if defined(OTHIN_HAVE_NEON)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double center_sqnorm(const double* x, const double* mu, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double sqnorm(const double* x, std::size_t n);
}  // namespace neon
#endif

bool isa_supported(Isa isa);
Isa best_supported_isa();
Isa active_isa();

/// Switch the process-wide kernel table. Throws std::invalid_argument when
/// the ISA is not compiled in or not supported by this CPU.
void select_isa(Isa isa);

const KernelTable& table_for(Isa isa);
const KernelTable& kernels();

// Span conveniences over the active table.
inline double dot(std::span<const double> a, std::span<const double> b) {
  return kernels().dot(a.data(), b.data(), a.size());
}
inline double center_sqnorm(std::span<const double> x, std::span<const double> mu,
                            std::span<double> out) {
  return kernels().center_sqnorm(x.data(), mu.data(), out.data(), x.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  kernels().axpy(alpha, x.data(), y.data(), x.size());
}
inline double sqnorm(std::span<const double> x) { return kernels().sqnorm(x.data(), x.size()); }

}  // namespace othin::simd
