// Dense double-precision inner loops used by the LTI integrator and the
// frequency sweeps. A scalar reference is always available; vector variants
// are selected once at runtime from the host CPU features.
#pragma once

#include <cstddef>
#include <string_view>

namespace gridloop::kernels {

enum class Isa { Scalar, Avx2, Neon };

struct KernelTable {
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = A x, A row-major rows x cols with leading dimension ld
  void (*gemv)(const double* A, std::size_t ld, const double* x, double* y,
               std::size_t rows, std::size_t cols);
  // Real polynomial (ascending coeffs c[0..deg]) evaluated at s = j*w[k].
  void (*poly_jw)(const double* c, std::size_t ncoef, const double* w,
                  double* re, double* im, std::size_t npts);
};

Isa best_isa();
bool isa_available(Isa isa);
std::string_view isa_name(Isa isa);

// Table for a specific ISA; throws std::invalid_argument if unavailable.
const KernelTable& table(Isa isa);

// Active table (best available unless overridden via set_active or the
// GRIDLOOP_SIMD environment variable: "scalar", "avx2", "neon").
const KernelTable& active();
Isa active_isa();
void set_active(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemv(const double* A, std::size_t ld, const double* x, double* y, std::size_t rows,
                 std::size_t cols) {
  active().gemv(A, ld, x, y, rows, cols);
}
inline void poly_jw(const double* c, std::size_t ncoef, const double* w, double* re, double* im,
                    std::size_t npts) {
  active().poly_jw(c, ncoef, w, re, im, npts);
}

namespace detail {
extern const KernelTable scalar_table;
#if defined(GRIDLOOP_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(GRIDLOOP_HAVE_NEON)
extern const KernelTable neon_table;
#endif
}  // namespace detail

}  // namespace gridloop::kernels
