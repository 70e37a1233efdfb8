#pragma once
// Dense double-precision kernels with a scalar reference implementation and
// SIMD variants (AVX2+FMA on x86-64, NEON on aarch64) selected at runtime.
//
// Only the innermost primitives (dot, axpy, sum of squares) are vectorised;
// the small GEMM shapes used by the model are composed from them so every
// variant shares one blocking scheme.

#include <cstddef>
#include <span>
#include <string_view>

namespace lgcd::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum_sq)(const double* a, std::size_t n);
};

/// Kernel table for `isa`, or nullptr when the variant is not compiled in or
/// the running CPU lacks the instructions.
const KernelTable* table_for(Isa isa) noexcept;

/// Table used by the free functions below. Chosen once on first use: the
/// widest supported variant, unless LGCD_KERNELS=scalar|avx2|neon is set.
const KernelTable& active() noexcept;

/// Overrides the active table (tests and benchmarks). Returns false if the
/// requested variant is unavailable, leaving the selection unchanged.
bool force_isa(Isa isa) noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sum_sq(std::span<const double> a) noexcept {
  return active().sum_sq(a.data(), a.size());
}

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b) noexcept;

// Row-major GEMM shapes. When `accumulate` is false C is overwritten.
//   gemm_nt: C[n x m] (+)= A[n x k] * B[m x k]^T
//   gemm_nn: C[n x m] (+)= A[n x k] * B[k x m]
//   gemm_tn: C[n x m] (+)= A[k x n]^T * B[k x m]
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k, bool accumulate) noexcept;
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k, bool accumulate) noexcept;
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k, bool accumulate) noexcept;

namespace detail {
double dot_scalar(const double* a, const double* b, std::size_t n) noexcept;
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) noexcept;
double sum_sq_scalar(const double* a, std::size_t n) noexcept;
#if defined(LGCD_HAVE_AVX2)
double dot_avx2(const double* a, const double* b, std::size_t n) noexcept;
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) noexcept;
double sum_sq_avx2(const double* a, std::size_t n) noexcept;
#endif
#if defined(LGCD_HAVE_NEON)
double dot_neon(const double* a, const double* b, std::size_t n) noexcept;
void axpy_neon(double alpha, const double* x, double* y, std::size_t n) noexcept;
double sum_sq_neon(const double* a, std::size_t n) noexcept;
#endif
}  // namespace detail

}  // namespace lgcd::kernels
