#include "gridloop/kernels.hpp"

namespace gridloop::kernels::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* A, std::size_t ld, const double* x, double* y, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(A + r * ld, x, cols);
}

// Horner in s = j*w, carried as (re, im).
void poly_jw_scalar(const double* c, std::size_t ncoef, const double* w, double* re, double* im,
                    std::size_t npts) {
  for (std::size_t k = 0; k < npts; ++k) {
    double pr = 0.0, pi = 0.0;
    for (std::size_t i = ncoef; i-- > 0;) {
      const double nr = -pi * w[k] + c[i];
      const double ni = pr * w[k];
      pr = nr;
      pi = ni;
    }
    re[k] = pr;
    im[k] = pi;
  }
}

}  // namespace

const KernelTable scalar_table{dot_scalar, axpy_scalar, gemv_scalar, poly_jw_scalar};

}  // namespace gridloop::kernels::detail
