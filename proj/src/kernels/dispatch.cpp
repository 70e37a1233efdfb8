#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "lgcd/kernels.hpp"

namespace lgcd::kernels {

namespace {

constexpr KernelTable kScalar{Isa::scalar, detail::dot_scalar, detail::axpy_scalar,
                              detail::sum_sq_scalar};
#if defined(LGCD_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::avx2, detail::dot_avx2, detail::axpy_avx2, detail::sum_sq_avx2};
#endif
#if defined(LGCD_HAVE_NEON)
constexpr KernelTable kNeon{Isa::neon, detail::dot_neon, detail::axpy_neon, detail::sum_sq_neon};
#endif

bool cpu_has_avx2() noexcept {
#if defined(LGCD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* choose_default() noexcept {
  if (const char* env = std::getenv("LGCD_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &kScalar;
    if (std::strcmp(env, "avx2") == 0 && table_for(Isa::avx2)) return table_for(Isa::avx2);
    if (std::strcmp(env, "neon") == 0 && table_for(Isa::neon)) return table_for(Isa::neon);
  }
  if (const KernelTable* t = table_for(Isa::avx2)) return t;
  if (const KernelTable* t = table_for(Isa::neon)) return t;
  return &kScalar;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{choose_default()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

const KernelTable* table_for(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return &kScalar;
    case Isa::avx2:
#if defined(LGCD_HAVE_AVX2)
      return cpu_has_avx2() ? &kAvx2 : nullptr;
#else
      return nullptr;
#endif
    case Isa::neon:
#if defined(LGCD_HAVE_NEON)
      return &kNeon;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

bool force_isa(Isa isa) noexcept {
  const KernelTable* t = table_for(isa);
  if (!t) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

double cosine(std::span<const double> a, std::span<const double> b) noexcept {
  const KernelTable& k = active();
  const double na = k.sum_sq(a.data(), a.size());
  const double nb = k.sum_sq(b.data(), b.size());
  if (na == 0.0 || nb == 0.0) return 0.0;
  return k.dot(a.data(), b.data(), a.size()) / (std::sqrt(na) * std::sqrt(nb));
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k, bool accumulate) noexcept {
  const KernelTable& kt = active();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double v = kt.dot(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + v : v;
    }
  }
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k, bool accumulate) noexcept {
  const KernelTable& kt = active();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    if (!accumulate) std::memset(ci, 0, m * sizeof(double));
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      if (ai[p] != 0.0) kt.axpy(ai[p], b + p * m, ci, m);
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k, bool accumulate) noexcept {
  const KernelTable& kt = active();
  if (!accumulate) std::memset(c, 0, n * m * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * n;
    const double* bp = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      if (ap[i] != 0.0) kt.axpy(ap[i], bp, c + i * m, m);
    }
  }
}

}  // namespace lgcd::kernels
