// Polynomial / rational transfer-function algebra, state-space realization,
// frequency response, system norms and fixed-step RK4 LTI simulation.
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <initializer_list>
#include <vector>

#include "gridloop/errors.hpp"

namespace gridloop {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Real polynomial in s, coefficients in ascending power.
class Polynomial {
 public:
  Polynomial() = default;
  Polynomial(std::initializer_list<double> c);
  explicit Polynomial(std::vector<double> c);
  static Polynomial constant(double v) { return Polynomial({v}); }
  static Polynomial s() { return Polynomial({0.0, 1.0}); }
  // lead * prod (s - r); conjugate pairs are expected for a real result.
  static Polynomial from_roots(double lead, const std::vector<cd>& roots);

  const std::vector<double>& coeffs() const { return c_; }
  bool is_zero() const { return c_.empty(); }
  int degree() const { return is_zero() ? -1 : static_cast<int>(c_.size()) - 1; }
  double lead() const { return is_zero() ? 0.0 : c_.back(); }
  double operator[](std::size_t i) const { return i < c_.size() ? c_[i] : 0.0; }

  cd eval(cd s) const;
  double eval(double s) const;
  std::vector<cd> roots() const;
  Polynomial derivative() const;

  friend Polynomial operator+(const Polynomial& a, const Polynomial& b);
  friend Polynomial operator-(const Polynomial& a, const Polynomial& b);
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);
  friend Polynomial operator*(double k, const Polynomial& a);
  Polynomial operator-() const { return -1.0 * *this; }

 private:
  void trim();
  std::vector<double> c_;
};

// num/den with den normalized to a monic leading coefficient.
class RationalTF {
 public:
  RationalTF();  // zero
  RationalTF(Polynomial num, Polynomial den);
  static RationalTF gain(double k) { return RationalTF(Polynomial::constant(k), Polynomial::constant(1.0)); }
  // 1/(sT+1)
  static RationalTF lag(double T);

  const Polynomial& num() const { return num_; }
  const Polynomial& den() const { return den_; }
  bool proper() const { return num_.degree() <= den_.degree(); }
  bool strictly_proper() const { return num_.degree() < den_.degree(); }
  // deg den - deg num (negative when improper).
  int relative_degree() const { return den_.degree() - std::max(num_.degree(), 0); }
  bool is_zero() const { return num_.is_zero(); }

  cd eval(cd s) const;
  std::vector<cd> poles() const { return den_.roots(); }
  std::vector<cd> zeros() const { return num_.roots(); }

 private:
  Polynomial num_, den_;
};

enum class TfOp { Add, Sub, Mul, Div };

// Exact polynomial arithmetic followed by cancellation of numerator and
// denominator roots agreeing within cancel_tol (absolute).
RationalTF tf_arith(const RationalTF& a, const RationalTF& b, TfOp op, double cancel_tol = 1e-9);
RationalTF cancel_common(const RationalTF& g, double tol = 1e-9);
cd tf_eval(const RationalTF& g, cd s);

RationalTF operator+(const RationalTF& a, const RationalTF& b);
RationalTF operator-(const RationalTF& a, const RationalTF& b);
RationalTF operator*(const RationalTF& a, const RationalTF& b);
RationalTF operator/(const RationalTF& a, const RationalTF& b);
RationalTF operator*(double k, const RationalTF& a);

struct StateSpace {
  Mat A, B, C, D;
  StateSpace() = default;
  StateSpace(Mat a, Mat b, Mat c, Mat d);
  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return B.cols(); }
  Eigen::Index outputs() const { return C.rows(); }
  void validate() const;
};

// Controllable-canonical realization; throws InputError if improper.
StateSpace tf_to_ss(const RationalTF& g);

std::vector<cd> eigenvalues(const Mat& A);
std::vector<cd> ss_eigenvalues(const StateSpace& m);
bool is_hurwitz(const std::vector<cd>& eig, double margin = 0.0);
double spectral_abscissa(const std::vector<cd>& eig);

struct FrequencyResponse {
  std::vector<double> omegas;
  std::vector<cd> values;
};

std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t n);
// Default analysis grid: 2000 points over [1e-3, 1e4] rad/s.
std::vector<double> default_grid();
void validate_grid(const std::vector<double>& omegas);

FrequencyResponse freq_response(const RationalTF& g, const std::vector<double>& omegas);
// Output `out`, input `in` of a MIMO system via (jwI - A) x = B solves.
FrequencyResponse freq_response(const StateSpace& sys, const std::vector<double>& omegas, int out = 0,
                                int in = 0);
cd ss_eval(const StateSpace& sys, cd s, int out = 0, int in = 0);

struct Norms {
  double h2 = 0.0;
  double hinf = 0.0;
  double hinf_omega = 0.0;
  double tolerance = 1e-4;  // documented relative tolerance of the H-infinity search
};

// Solves A X + X A^T + Q = 0 (A Hurwitz) by complex Schur back-substitution.
Mat lyapunov(const Mat& A, const Mat& Q);
double h2_norm(const StateSpace& sys);
// Peak gain of a scalar frequency function over [lo, hi]: log grid with at
// least per_decade points, then golden-section refinement of the top peaks.
struct Peak {
  double value = 0.0;
  double omega = 0.0;
};
Peak peak_gain(const std::function<cd(double)>& g, double lo, double hi, int per_decade = 400,
               bool include_dc = false);
Norms sys_norms(const StateSpace& sys);

// Band-limited norms of a scalar frequency function:
// h2 = sqrt((1/pi) int_lo^hi |g(jw)|^2 dw), hinf = max over [lo, hi].
struct BandNorms {
  double h2 = 0.0;
  double hinf = 0.0;
  double hinf_omega = 0.0;
};
BandNorms band_norms(const std::function<cd(double)>& g, double lo, double hi);

// Fixed-step RK4 of x' = A x + B u(t), y = C x + D u(t).
struct SimOptions {
  double dt = 2e-4;
  double horizon = 1.0;
  bool enforce_dt = true;  // dt <= 0.1 * smallest time constant
  Vec x0;                  // empty = zero
};

struct SimResult {
  std::vector<double> t;
  Mat y;  // rows = samples, cols = outputs
  Vec x_final;
};

using InputFn = std::function<void(double t, double* u)>;

// Smallest time constant 1/max|lambda| of A (infinity for A == 0).
double smallest_time_constant(const Mat& A);
SimResult simulate_lti(const StateSpace& sys, const InputFn& input, const SimOptions& opt);
// Sampled inputs: row k of U is u(k*dt); midpoints use linear interpolation.
SimResult simulate_lti(const StateSpace& sys, const Mat& U, const SimOptions& opt);

// One RK4 step of x' = A x + B u collapsed into
// x+ = Phi x + G0 u(t) + Gm u(t + h/2) + G1 u(t + h); identical to the
// stage-wise step for linear systems.
class Rk4Propagator {
 public:
  Rk4Propagator() = default;
  Rk4Propagator(const Mat& A, const Mat& B, double h);
  double h() const { return h_; }
  Eigen::Index states() const { return phi_.rows(); }
  Eigen::Index inputs() const { return g0_.cols(); }
  // out must not alias x.
  void step(const double* x, const double* u0, const double* um, const double* u1, double* out) const;
  void step_autonomous(const double* x, double* out) const;
  const RowMat& phi() const { return phi_; }

 private:
  double h_ = 0.0;
  RowMat phi_, g0_, gm_, g1_;
};

// Stage-wise RK4 step with an explicit step size (used for partial steps).
Vec rk4_step(const Mat& A, const Mat& B, const Vec& x, const Vec& u0, const Vec& um, const Vec& u1, double h);

}  // namespace gridloop
