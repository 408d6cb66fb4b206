#include <arm_neon.h>

#include "gridloop/kernels.hpp"

namespace gridloop::kernels::detail {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_neon(const double* A, std::size_t ld, const double* x, double* y, std::size_t rows,
               std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_neon(A + r * ld, x, cols);
}

void poly_jw_neon(const double* c, std::size_t ncoef, const double* w, double* re, double* im,
                  std::size_t npts) {
  std::size_t k = 0;
  for (; k + 2 <= npts; k += 2) {
    const float64x2_t wv = vld1q_f64(w + k);
    float64x2_t pr = vdupq_n_f64(0.0), pi = vdupq_n_f64(0.0);
    for (std::size_t i = ncoef; i-- > 0;) {
      const float64x2_t nr = vfmsq_f64(vdupq_n_f64(c[i]), pi, wv);
      const float64x2_t ni = vmulq_f64(pr, wv);
      pr = nr;
      pi = ni;
    }
    vst1q_f64(re + k, pr);
    vst1q_f64(im + k, pi);
  }
  if (k < npts) scalar_table.poly_jw(c, ncoef, w + k, re + k, im + k, npts - k);
}

}  // namespace

const KernelTable neon_table{dot_neon, axpy_neon, gemv_neon, poly_jw_neon};

}  // namespace gridloop::kernels::detail
