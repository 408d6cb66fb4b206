#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "gridloop/kernels.hpp"
#include "gridloop/tfcore.hpp"

using namespace gridloop;
namespace k = gridloop::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<k::Isa> vector_isas() {
  std::vector<k::Isa> out;
  for (k::Isa isa : {k::Isa::Avx2, k::Isa::Neon})
    if (k::isa_available(isa)) out.push_back(isa);
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar reference kernels match hand values") {
    const auto& s = k::table(k::Isa::Scalar);
    const double a[3] = {1, 2, 3}, b[3] = {4, 5, 6};
    CHECK(s.dot(a, b, 3) == 32.0);
    double y[3] = {1, 1, 1};
    s.axpy(2.0, a, y, 3);
    CHECK(y[2] == 7.0);
    const double A[6] = {1, 2, 3, 4, 5, 6};
    double out[2];
    s.gemv(A, 3, a, out, 2, 3);
    CHECK(out[0] == 14.0);
    CHECK(out[1] == 32.0);
    // 1 + 2s + 3s^2 at s = j: 1 - 3 + 2j
    const double c[3] = {1, 2, 3}, w[1] = {1.0};
    double re, im;
    s.poly_jw(c, 3, w, &re, &im, 1);
    CHECK(re == -2.0);
    CHECK(im == 2.0);
  }

  TEST_CASE("vector kernels agree with the scalar reference") {
    const auto& ref = k::table(k::Isa::Scalar);
    for (k::Isa isa : vector_isas()) {
      CAPTURE(k::isa_name(isa));
      const auto& t = k::table(isa);
      for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 33u, 100u, 257u}) {
        const auto a = random_vec(n, 1 + n), b = random_vec(n, 2 + n);
        CHECK(rel_err(t.dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n)) < 1e-13);
        auto y1 = random_vec(n, 3 + n), y2 = y1;
        t.axpy(0.37, a.data(), y1.data(), n);
        ref.axpy(0.37, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(rel_err(y1[i], y2[i]) < 1e-14);
      }
      for (std::size_t rows : {1u, 4u, 5u, 13u}) {
        for (std::size_t cols : {1u, 4u, 9u, 31u}) {
          const std::size_t ld = cols + 2;
          const auto A = random_vec(rows * ld, 7 * rows + cols);
          const auto x = random_vec(cols, 11 * cols);
          std::vector<double> o1(rows), o2(rows);
          t.gemv(A.data(), ld, x.data(), o1.data(), rows, cols);
          ref.gemv(A.data(), ld, x.data(), o2.data(), rows, cols);
          for (std::size_t i = 0; i < rows; ++i) CHECK(rel_err(o1[i], o2[i]) < 1e-13);
        }
      }
      const auto c = random_vec(9, 99);
      const auto w = logspace(-2, 2, 37);
      std::vector<double> r1(w.size()), i1(w.size()), r2(w.size()), i2(w.size());
      t.poly_jw(c.data(), c.size(), w.data(), r1.data(), i1.data(), w.size());
      ref.poly_jw(c.data(), c.size(), w.data(), r2.data(), i2.data(), w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double scale = std::max(1.0, std::pow(w[i], 8));
        CHECK(std::abs(r1[i] - r2[i]) / scale < 1e-13);
        CHECK(std::abs(i1[i] - i2[i]) / scale < 1e-13);
      }
    }
  }

  TEST_CASE("RK4 simulation is equivalent across kernel ISAs") {
    const StateSpace sys = tf_to_ss(RationalTF(Polynomial({2.0, 1.0}), Polynomial({6.0, 11.0, 6.0, 1.0})));
    SimOptions opt;
    opt.dt = 1e-3;
    opt.horizon = 2.0;
    const k::Isa saved = k::active_isa();
    k::set_active(k::Isa::Scalar);
    const SimResult ref = simulate_lti(sys, [](double, double* u) { u[0] = 1.0; }, opt);
    for (k::Isa isa : vector_isas()) {
      k::set_active(isa);
      const SimResult r = simulate_lti(sys, [](double, double* u) { u[0] = 1.0; }, opt);
      CHECK((r.y - ref.y).cwiseAbs().maxCoeff() < 1e-13);
    }
    k::set_active(saved);
  }

  TEST_CASE("unavailable ISA is rejected") {
    for (k::Isa isa : {k::Isa::Avx2, k::Isa::Neon})
      if (!k::isa_available(isa)) CHECK_THROWS(k::table(isa));
  }
}
