#include <immintrin.h>

#include "gridloop/kernels.hpp"

namespace gridloop::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four rows at a time so each x load feeds four accumulators.
void gemv_avx2(const double* A, std::size_t ld, const double* x, double* y, std::size_t rows,
               std::size_t cols) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double* a0 = A + r * ld;
    const double* a1 = a0 + ld;
    const double* a2 = a1 + ld;
    const double* a3 = a2 + ld;
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      const __m256d xv = _mm256_loadu_pd(x + c);
      s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a0 + c), xv, s0);
      s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a1 + c), xv, s1);
      s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a2 + c), xv, s2);
      s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a3 + c), xv, s3);
    }
    double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
    for (; c < cols; ++c) {
      t0 += a0[c] * x[c];
      t1 += a1[c] * x[c];
      t2 += a2[c] * x[c];
      t3 += a3[c] * x[c];
    }
    y[r] = t0;
    y[r + 1] = t1;
    y[r + 2] = t2;
    y[r + 3] = t3;
  }
  for (; r < rows; ++r) y[r] = dot_avx2(A + r * ld, x, cols);
}

// Four frequencies per lane group; same recurrence as the scalar Horner.
void poly_jw_avx2(const double* c, std::size_t ncoef, const double* w, double* re, double* im,
                  std::size_t npts) {
  std::size_t k = 0;
  for (; k + 4 <= npts; k += 4) {
    const __m256d wv = _mm256_loadu_pd(w + k);
    __m256d pr = _mm256_setzero_pd(), pi = _mm256_setzero_pd();
    for (std::size_t i = ncoef; i-- > 0;) {
      const __m256d nr = _mm256_fnmadd_pd(pi, wv, _mm256_set1_pd(c[i]));
      const __m256d ni = _mm256_mul_pd(pr, wv);
      pr = nr;
      pi = ni;
    }
    _mm256_storeu_pd(re + k, pr);
    _mm256_storeu_pd(im + k, pi);
  }
  if (k < npts) scalar_table.poly_jw(c, ncoef, w + k, re + k, im + k, npts - k);
}

}  // namespace

const KernelTable avx2_table{dot_avx2, axpy_avx2, gemv_avx2, poly_jw_avx2};

}  // namespace gridloop::kernels::detail
