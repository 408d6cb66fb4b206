#include <cmath>
#include <random>

#include "doctest.h"
#include "gridloop/tfcore.hpp"

using namespace gridloop;

namespace {

std::vector<cd> random_points(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  std::vector<cd> out;
  for (int i = 0; i < n; ++i) out.emplace_back(d(rng), d(rng));
  return out;
}

double rel(cd a, cd b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

const RationalTF G1(Polynomial({1.0}), Polynomial({1.0, 1.0}));         // 1/(s+1)
const RationalTF G2(Polynomial({1.0}), Polynomial({2.0, 1.0}));         // 1/(s+2)
const RationalTF G3(Polynomial({3.0, 0.5}), Polynomial({5.0, 2.0, 1.0}));  // (0.5s+3)/(s^2+2s+5)

}  // namespace

TEST_SUITE("tfcore") {
  TEST_CASE("polynomial basics") {
    const Polynomial p({1.0, 3.0, 2.0});
    CHECK(p.degree() == 2);
    CHECK(p.eval(2.0) == 15.0);
    auto r = p.roots();
    REQUIRE(r.size() == 2);
    std::sort(r.begin(), r.end(), [](cd a, cd b) { return a.real() < b.real(); });
    CHECK(r[0].real() == doctest::Approx(-1.0));
    CHECK(r[1].real() == doctest::Approx(-0.5));
    CHECK(Polynomial({1.0, 0.0, 0.0}).degree() == 0);
    CHECK(Polynomial().degree() == -1);
    const Polynomial q = Polynomial::from_roots(2.0, {cd(-1, 2), cd(-1, -2)});
    CHECK(q[0] == doctest::Approx(10.0));
    CHECK(q[1] == doctest::Approx(4.0));
    CHECK(q[2] == doctest::Approx(2.0));
  }

  TEST_CASE("tf_arith examples") {
    const RationalTF prod = G1 * G2;
    CHECK(prod.num().coeffs() == std::vector<double>{1.0});
    CHECK(prod.den().coeffs() == std::vector<double>{2.0, 3.0, 1.0});
    const RationalTF sum0 = G3 + RationalTF();
    CHECK(sum0.num().coeffs() == G3.num().coeffs());
    CHECK(sum0.den().coeffs() == G3.den().coeffs());
    const RationalTF h(Polynomial({1.0, 1.0}), Polynomial({2.0, 1.0}));
    const RationalTF one = h / h;
    for (const cd& s : random_points(10, 7)) CHECK(rel(one.eval(s), cd(1.0, 0.0)) < 1e-12);
    CHECK(one.den().degree() == 0);
    CHECK_THROWS_AS(G1 / RationalTF(), InputError);
  }

  TEST_CASE("tf_arith algebraic laws hold pointwise") {
    for (const cd& s : random_points(20, 11)) {
      CHECK(rel(((G1 + G2) + G3).eval(s), (G1 + (G2 + G3)).eval(s)) < 1e-9);
      CHECK(rel((G1 + G3).eval(s), (G3 + G1).eval(s)) < 1e-9);
      CHECK(rel(((G1 * G2) * G3).eval(s), (G1 * (G2 * G3)).eval(s)) < 1e-9);
      CHECK(rel((G2 * G3).eval(s), (G3 * G2).eval(s)) < 1e-9);
      CHECK(rel((G3 - G1).eval(s), G3.eval(s) - G1.eval(s)) < 1e-9);
    }
  }

  TEST_CASE("cancellation keeps near-but-distinct roots") {
    const RationalTF a(Polynomial::from_roots(1.0, {cd(-1.0 - 1e-6, 0)}), Polynomial::from_roots(1.0, {cd(-1.0, 0), cd(-3, 0)}));
    const RationalTF c = cancel_common(a);
    CHECK(c.den().degree() == 2);
    const RationalTF b(Polynomial::from_roots(1.0, {cd(-1.0, 0)}), Polynomial::from_roots(1.0, {cd(-1.0, 0), cd(-3, 0)}));
    CHECK(cancel_common(b).den().degree() == 1);
  }

  TEST_CASE("tf_eval examples and pole hit") {
    CHECK(std::abs(G1.eval(0.0) - cd(1.0, 0.0)) < 1e-15);
    CHECK(std::abs(G1.eval(cd(0.0, 1.0)) - cd(0.5, -0.5)) < 1e-15);
    CHECK_THROWS_AS(G1.eval(cd(-1.0, 0.0)), PoleHit);
  }

  TEST_CASE("tf_to_ss round trip") {
    const RationalTF g(Polynomial({2.0, -1.0, 0.3, 0.7}), Polynomial({4.0, 6.0, 5.0, 2.0}));
    const StateSpace ss = tf_to_ss(g);
    const auto grid = logspace(-2, 3, 100);
    const auto a = freq_response(g, grid);
    const auto b = freq_response(ss, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(rel(b.values[i], a.values[i]) < 1e-9);
    const RationalTF improper(Polynomial({1.0, 1.0, 1.0}), Polynomial({1.0, 1.0}));
    CHECK_FALSE(improper.proper());
    CHECK(improper.relative_degree() == -1);
    CHECK_THROWS_AS(tf_to_ss(improper), InputError);
    const StateSpace k = tf_to_ss(RationalTF::gain(3.0));
    CHECK(k.states() == 0);
    CHECK(k.D(0, 0) == 3.0);
  }

  TEST_CASE("eigenvalues") {
    Mat A(2, 2);
    A << -1, 0, 0, -2;
    auto e = eigenvalues(A);
    CHECK(e[0].real() == doctest::Approx(-1.0));
    CHECK(e[1].real() == doctest::Approx(-2.0));
    e = ss_eigenvalues(tf_to_ss(RationalTF(Polynomial({1.0}), Polynomial({2.0, 3.0, 1.0}))));
    CHECK(e[0].real() == doctest::Approx(-1.0));
    CHECK(e[1].real() == doctest::Approx(-2.0));
    CHECK(is_hurwitz(e));
  }

  TEST_CASE("freq_response examples") {
    const auto fr = freq_response(G1, {1.0});
    CHECK(std::abs(fr.values[0]) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
    const RationalTF integ(Polynomial({1.0}), Polynomial({0.0, 1.0}));
    const auto fi = freq_response(integ, {1e6});
    CHECK(std::abs(fi.values[0]) < 1e-5);
    CHECK(std::arg(fi.values[0]) == doctest::Approx(-M_PI / 2));
    CHECK_THROWS_AS(freq_response(G1, {}), InputError);
    CHECK_THROWS_AS(freq_response(G1, {1.0, 0.5}), InputError);
    CHECK_THROWS_AS(freq_response(tf_to_ss(integ), {0.0}), InputError);
    const RationalTF osc(Polynomial({1.0}), Polynomial({1.0, 0.0, 1.0}));
    CHECK_THROWS_AS(freq_response(osc, {1.0}), PoleHit);
    CHECK_THROWS_AS(freq_response(tf_to_ss(osc), {1.0}), PoleHit);
  }

  TEST_CASE("system norm oracles") {
    const Norms n2 = sys_norms(tf_to_ss(G2));
    CHECK(n2.h2 == doctest::Approx(0.5).epsilon(1e-10));
    const Norms n1 = sys_norms(tf_to_ss(G1));
    CHECK(n1.hinf == doctest::Approx(1.0).epsilon(1e-4));
    // Lightly damped resonance: peak of 1/(s^2 + 2 z w s + w^2) is 1/(2 z sqrt(1 - z^2) w^2).
    const double z = 0.05, w = 3.0;
    const RationalTF res(Polynomial({1.0}), Polynomial({w * w, 2 * z * w, 1.0}));
    const Norms nr = sys_norms(tf_to_ss(res));
    CHECK(nr.hinf == doctest::Approx(1.0 / (2 * z * std::sqrt(1 - z * z) * w * w)).epsilon(1e-6));
    // H2 of the same resonance: 1/(4 z w^3).
    CHECK(nr.h2 == doctest::Approx(std::sqrt(1.0 / (4 * z * w * w * w))).epsilon(1e-9));
    const RationalTF unstable(Polynomial({1.0}), Polynomial({-1.0, 1.0}));
    CHECK_THROWS_AS(sys_norms(tf_to_ss(unstable)), NumericError);
    const RationalTF biproper(Polynomial({1.0, 1.0}), Polynomial({2.0, 1.0}));
    CHECK_THROWS_AS(sys_norms(tf_to_ss(biproper)), InputError);
  }

  TEST_CASE("H2 via Lyapunov matches truncated quadrature with Richardson extrapolation") {
    const RationalTF g(Polynomial({1.0, 0.4}), Polynomial({2.0, 1.5, 2.2, 1.0}));
    const double h2 = sys_norms(tf_to_ss(g)).h2;
    auto fn = [&](double w) { return g.eval(cd(0.0, w)); };
    // |g|^2 ~ c/w^4 beyond the cutoff, so the truncation error scales as W^-3.
    const double i1 = std::pow(band_norms(fn, 1e-6, 100.0).h2, 2);
    const double i2 = std::pow(band_norms(fn, 1e-6, 200.0).h2, 2);
    const double extrap = (8.0 * i2 - i1) / 7.0;
    CHECK(std::sqrt(extrap) == doctest::Approx(h2).epsilon(1e-3));
  }

  TEST_CASE("Lyapunov solver residual") {
    Mat A(3, 3);
    A << -1, 2, 0, -3, -1, 1, 0, 0.5, -4;
    Mat Q = Mat::Identity(3, 3);
    Q(0, 2) = Q(2, 0) = 0.3;
    const Mat X = lyapunov(A, Q);
    CHECK((A * X + X * A.transpose() + Q).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("simulate_lti examples") {
    const StateSpace s1 = tf_to_ss(G1);
    SimOptions opt;
    opt.dt = 1e-3;
    opt.horizon = 5.0;
    const SimResult r = simulate_lti(s1, [](double, double* u) { u[0] = 1.0; }, opt);
    CHECK(r.t.back() == doctest::Approx(5.0));
    CHECK(std::abs(r.y(r.y.rows() - 1, 0) - (1.0 - std::exp(-5.0))) < 1e-6);
    const SimResult z = simulate_lti(s1, [](double, double* u) { u[0] = 0.0; }, opt);
    CHECK(z.y.cwiseAbs().maxCoeff() == 0.0);
    const Mat U = Mat::Ones(5001, 1);
    const SimResult rs = simulate_lti(s1, U, opt);
    CHECK((rs.y - r.y).cwiseAbs().maxCoeff() < 1e-14);
    SimOptions big = opt;
    big.dt = 0.5;
    CHECK_THROWS_AS(simulate_lti(s1, [](double, double* u) { u[0] = 1.0; }, big), InputError);
    big.enforce_dt = false;
    big.dt = 4.0;
    big.horizon = 1000.0;
    CHECK_THROWS_AS(simulate_lti(s1, [](double, double* u) { u[0] = 1.0; }, big), NumericError);
  }

  TEST_CASE("RK4 converges at fourth order") {
    const RationalTF g(Polynomial({1.0}), Polynomial({4.0, 0.8, 1.0}));
    const StateSpace ss = tf_to_ss(g);
    auto input = [](double t, double* u) { u[0] = std::sin(3.0 * t); };
    // Reference from the matrix exponential-free fine run.
    SimOptions fine;
    fine.dt = 1e-4;
    fine.horizon = 2.0;
    const double ref = simulate_lti(ss, input, fine).y.bottomRows(1)(0, 0);
    double errs[3];
    const double dts[3] = {0.04, 0.02, 0.01};
    for (int i = 0; i < 3; ++i) {
      SimOptions o;
      o.dt = dts[i];
      o.horizon = 2.0;
      o.enforce_dt = false;
      errs[i] = std::abs(simulate_lti(ss, input, o).y.bottomRows(1)(0, 0) - ref);
    }
    const double order1 = std::log2(errs[0] / errs[1]);
    const double order2 = std::log2(errs[1] / errs[2]);
    CHECK(order1 == doctest::Approx(4.0).epsilon(0.1));
    CHECK(order2 == doctest::Approx(4.0).epsilon(0.1));
  }

  TEST_CASE("propagator equals the stage-wise RK4 step") {
    Mat A(3, 3), B(3, 2);
    A << -1, 2, 0, -3, -1, 1, 0, 0.5, -4;
    B << 1, 0, 0, 2, 0.5, -1;
    const double h = 0.01;
    const Rk4Propagator prop(A, B, h);
    Vec x(3), u0(2), um(2), u1(2);
    x << 0.3, -0.2, 1.0;
    u0 << 1.0, 0.5;
    um << 0.7, 0.2;
    u1 << -0.1, 0.9;
    Vec out(3);
    prop.step(x.data(), u0.data(), um.data(), u1.data(), out.data());
    const Vec ref = rk4_step(A, B, x, u0, um, u1, h);
    CHECK((out - ref).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("band norms of a first-order lag") {
    // int_0^W 1/(1+w^2) dw = atan(W)
    const BandNorms bn = band_norms([](double w) { return 1.0 / cd(1.0, w); }, 1e-8, 10.0);
    CHECK(bn.h2 == doctest::Approx(std::sqrt(std::atan(10.0) / M_PI)).epsilon(1e-8));
    CHECK(bn.hinf == doctest::Approx(1.0).epsilon(1e-8));
  }
}
