#include "gridloop/tfcore.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gridloop/kernels.hpp"

namespace gridloop {

// ---------------------------------------------------------------- Polynomial

Polynomial::Polynomial(std::initializer_list<double> c) : c_(c) { trim(); }
Polynomial::Polynomial(std::vector<double> c) : c_(std::move(c)) { trim(); }

void Polynomial::trim() {
  while (!c_.empty() && c_.back() == 0.0) c_.pop_back();
}

Polynomial Polynomial::from_roots(double lead, const std::vector<cd>& roots) {
  std::vector<cd> p{cd(lead, 0.0)};
  for (const cd& r : roots) {
    std::vector<cd> q(p.size() + 1, cd(0.0, 0.0));
    for (std::size_t i = 0; i < p.size(); ++i) {
      q[i + 1] += p[i];
      q[i] -= r * p[i];
    }
    p = std::move(q);
  }
  std::vector<double> c(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) c[i] = p[i].real();
  return Polynomial(std::move(c));
}

cd Polynomial::eval(cd s) const {
  cd acc(0.0, 0.0);
  for (std::size_t i = c_.size(); i-- > 0;) acc = acc * s + c_[i];
  return acc;
}

double Polynomial::eval(double s) const {
  double acc = 0.0;
  for (std::size_t i = c_.size(); i-- > 0;) acc = acc * s + c_[i];
  return acc;
}

std::vector<cd> Polynomial::roots() const {
  std::vector<cd> out;
  if (degree() < 1) return out;
  // Exact roots at the origin first.
  std::size_t k = 0;
  while (k < c_.size() && c_[k] == 0.0) {
    out.emplace_back(0.0, 0.0);
    ++k;
  }
  const std::size_t n = c_.size() - 1 - k;
  if (n == 0) return out;
  Mat comp = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double lead = c_.back();
  for (std::size_t j = 0; j < n; ++j) comp(0, static_cast<Eigen::Index>(j)) = -c_[c_.size() - 2 - j] / lead;
  for (std::size_t i = 1; i < n; ++i) comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = 1.0;
  Eigen::EigenSolver<Mat> es(comp, false);
  if (es.info() != Eigen::Success) throw NumericError("polynomial root finder did not converge");
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
  return out;
}

Polynomial Polynomial::derivative() const {
  if (c_.size() <= 1) return Polynomial();
  std::vector<double> d(c_.size() - 1);
  for (std::size_t i = 1; i < c_.size(); ++i) d[i - 1] = c_[i] * static_cast<double>(i);
  return Polynomial(std::move(d));
}

Polynomial operator+(const Polynomial& a, const Polynomial& b) {
  // Coefficients that cancel to roundoff level are snapped to exact zero so
  // that structural zeros (e.g. s^k factors) survive symbolic arithmetic.
  constexpr double kCancelRel = 1e-11;
  std::vector<double> c(std::max(a.c_.size(), b.c_.size()), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double x = i < a.c_.size() ? a.c_[i] : 0.0, y = i < b.c_.size() ? b.c_[i] : 0.0;
    c[i] = x + y;
    if (std::abs(c[i]) <= kCancelRel * (std::abs(x) + std::abs(y))) c[i] = 0.0;
  }
  return Polynomial(std::move(c));
}

Polynomial operator-(const Polynomial& a, const Polynomial& b) { return a + (-1.0) * b; }

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  if (a.is_zero() || b.is_zero()) return Polynomial();
  std::vector<double> c(a.c_.size() + b.c_.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.c_.size(); ++i)
    for (std::size_t j = 0; j < b.c_.size(); ++j) c[i + j] += a.c_[i] * b.c_[j];
  return Polynomial(std::move(c));
}

Polynomial operator*(double k, const Polynomial& a) {
  std::vector<double> c(a.c_);
  for (double& v : c) v *= k;
  return Polynomial(std::move(c));
}

// ---------------------------------------------------------------- RationalTF

RationalTF::RationalTF() : num_(), den_(Polynomial::constant(1.0)) {}

RationalTF::RationalTF(Polynomial num, Polynomial den) : num_(std::move(num)), den_(std::move(den)) {
  if (den_.is_zero()) throw InputError("transfer function denominator is identically zero");
  for (double v : num_.coeffs())
    if (!std::isfinite(v)) throw InputError("non-finite numerator coefficient");
  for (double v : den_.coeffs())
    if (!std::isfinite(v)) throw InputError("non-finite denominator coefficient");
  if (num_.is_zero()) {
    den_ = Polynomial::constant(1.0);
    return;
  }
  const double lead = den_.lead();
  if (lead != 1.0) {
    num_ = (1.0 / lead) * num_;
    den_ = (1.0 / lead) * den_;
  }
}

RationalTF RationalTF::lag(double T) { return RationalTF(Polynomial::constant(1.0), Polynomial({1.0, T})); }

cd RationalTF::eval(cd s) const {
  const cd d = den_.eval(s);
  if (std::abs(d) < 1e-14) {
    std::ostringstream os;
    os << "pole hit evaluating transfer function at s = " << s;
    throw PoleHit(os.str());
  }
  return num_.eval(s) / d;
}

cd tf_eval(const RationalTF& g, cd s) { return g.eval(s); }

RationalTF cancel_common(const RationalTF& g, double tol) {
  if (g.num().degree() < 1 || g.den().degree() < 1) return g;
  std::vector<cd> zn = g.num().roots();
  std::vector<cd> pd = g.den().roots();
  std::vector<bool> used(zn.size(), false);
  std::vector<cd> keep_p;
  bool any = false;
  for (const cd& p : pd) {
    std::size_t best = zn.size();
    double best_d = tol;
    for (std::size_t i = 0; i < zn.size(); ++i) {
      if (used[i]) continue;
      const double d = std::abs(zn[i] - p);
      if (d <= best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best < zn.size()) {
      used[best] = true;
      any = true;
    } else {
      keep_p.push_back(p);
    }
  }
  if (!any) return g;
  std::vector<cd> keep_z;
  for (std::size_t i = 0; i < zn.size(); ++i)
    if (!used[i]) keep_z.push_back(zn[i]);
  return RationalTF(Polynomial::from_roots(g.num().lead(), keep_z), Polynomial::from_roots(1.0, keep_p));
}

RationalTF tf_arith(const RationalTF& a, const RationalTF& b, TfOp op, double cancel_tol) {
  switch (op) {
    case TfOp::Add:
      if (a.is_zero()) return b;
      if (b.is_zero()) return a;
      if (a.den().coeffs() == b.den().coeffs()) return cancel_common(RationalTF(a.num() + b.num(), a.den()), cancel_tol);
      return cancel_common(RationalTF(a.num() * b.den() + b.num() * a.den(), a.den() * b.den()), cancel_tol);
    case TfOp::Sub:
      return tf_arith(a, -1.0 * b, TfOp::Add, cancel_tol);
    case TfOp::Mul:
      if (a.is_zero() || b.is_zero()) return RationalTF();
      return cancel_common(RationalTF(a.num() * b.num(), a.den() * b.den()), cancel_tol);
    case TfOp::Div:
      if (b.is_zero()) throw InputError("division by a zero transfer function");
      if (a.is_zero()) return RationalTF();
      return cancel_common(RationalTF(a.num() * b.den(), a.den() * b.num()), cancel_tol);
  }
  return RationalTF();
}

RationalTF operator+(const RationalTF& a, const RationalTF& b) { return tf_arith(a, b, TfOp::Add); }
RationalTF operator-(const RationalTF& a, const RationalTF& b) { return tf_arith(a, b, TfOp::Sub); }
RationalTF operator*(const RationalTF& a, const RationalTF& b) { return tf_arith(a, b, TfOp::Mul); }
RationalTF operator/(const RationalTF& a, const RationalTF& b) { return tf_arith(a, b, TfOp::Div); }
RationalTF operator*(double k, const RationalTF& a) { return RationalTF(k * a.num(), a.den()); }

// ---------------------------------------------------------------- StateSpace

StateSpace::StateSpace(Mat a, Mat b, Mat c, Mat d) : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
  validate();
}

void StateSpace::validate() const {
  const auto n = A.rows();
  if (A.cols() != n) throw InputError("state matrix is not square");
  if (B.rows() != n || C.cols() != n) throw InputError("state-space dimension mismatch");
  if (D.rows() != C.rows() || D.cols() != B.cols()) throw InputError("feedthrough dimension mismatch");
  if (!A.allFinite() || !B.allFinite() || !C.allFinite() || !D.allFinite())
    throw InputError("state-space matrices contain non-finite entries");
}

StateSpace tf_to_ss(const RationalTF& g) {
  if (!g.proper()) throw InputError("tf_to_ss: improper transfer function must be regularized first");
  const int n = g.den().degree();
  Mat D(1, 1);
  D(0, 0) = g.num().degree() == n ? g.num().lead() : 0.0;
  if (n == 0) return StateSpace(Mat(0, 0), Mat(0, 1), Mat(1, 0), D);
  const Polynomial rem = g.num() - D(0, 0) * g.den();
  Mat A = Mat::Zero(n, n), B = Mat::Zero(n, 1), C = Mat::Zero(1, n);
  for (int i = 0; i + 1 < n; ++i) A(i, i + 1) = 1.0;
  for (int j = 0; j < n; ++j) {
    A(n - 1, j) = -g.den()[static_cast<std::size_t>(j)];
    C(0, j) = rem[static_cast<std::size_t>(j)];
  }
  B(n - 1, 0) = 1.0;
  return StateSpace(A, B, C, D);
}

std::vector<cd> eigenvalues(const Mat& A) {
  std::vector<cd> out;
  if (A.rows() == 0) return out;
  Eigen::EigenSolver<Mat> es(A, false);
  if (es.info() != Eigen::Success) throw NumericError("eigenvalue solver did not converge");
  out.reserve(static_cast<std::size_t>(A.rows()));
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
  std::sort(out.begin(), out.end(), [](cd a, cd b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });
  return out;
}

std::vector<cd> ss_eigenvalues(const StateSpace& m) { return eigenvalues(m.A); }

double spectral_abscissa(const std::vector<cd>& eig) {
  double m = -std::numeric_limits<double>::infinity();
  for (const cd& e : eig) m = std::max(m, e.real());
  return m;
}

bool is_hurwitz(const std::vector<cd>& eig, double margin) {
  for (const cd& e : eig)
    if (!(e.real() < -margin)) return false;
  return true;
}

// ---------------------------------------------------------------- frequency response

std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t n) {
  std::vector<double> w(n);
  if (n == 1) {
    w[0] = std::pow(10.0, lo_exp);
    return w;
  }
  for (std::size_t i = 0; i < n; ++i)
    w[i] = std::pow(10.0, lo_exp + (hi_exp - lo_exp) * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

std::vector<double> default_grid() { return logspace(-3.0, 4.0, 2000); }

void validate_grid(const std::vector<double>& omegas) {
  if (omegas.empty()) throw InputError("frequency grid is empty");
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    if (!(omegas[i] > 0.0) || !std::isfinite(omegas[i])) throw InputError("frequency grid entries must be positive");
    if (i > 0 && !(omegas[i] > omegas[i - 1])) throw InputError("frequency grid must be strictly increasing");
  }
}

FrequencyResponse freq_response(const RationalTF& g, const std::vector<double>& omegas) {
  validate_grid(omegas);
  const std::size_t n = omegas.size();
  std::vector<double> nr(n), ni(n), dr(n), di(n);
  const auto& nc = g.num().coeffs();
  const auto& dc = g.den().coeffs();
  if (nc.empty()) {
    std::fill(nr.begin(), nr.end(), 0.0);
    std::fill(ni.begin(), ni.end(), 0.0);
  } else {
    kernels::poly_jw(nc.data(), nc.size(), omegas.data(), nr.data(), ni.data(), n);
  }
  kernels::poly_jw(dc.data(), dc.size(), omegas.data(), dr.data(), di.data(), n);
  FrequencyResponse fr{omegas, std::vector<cd>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const cd d(dr[k], di[k]);
    if (std::abs(d) < 1e-14) throw PoleHit("imaginary-axis pole at w = " + std::to_string(omegas[k]));
    fr.values[k] = cd(nr[k], ni[k]) / d;
  }
  return fr;
}

namespace {

// Hessenberg form reused across frequencies: A = Q H Q^T.
struct HessCache {
  CMat H;
  CVec b;   // Q^T B(:, in)
  CVec c;   // C(out, :) Q
  cd d;
};

HessCache hess_prepare(const StateSpace& sys, int out, int in) {
  Eigen::HessenbergDecomposition<Mat> hd(sys.A);
  const Mat Q = hd.matrixQ();
  HessCache hc;
  hc.H = hd.matrixH().cast<cd>();
  hc.b = (Q.transpose() * sys.B.col(in)).cast<cd>();
  hc.c = (sys.C.row(out) * Q).transpose().cast<cd>();
  hc.d = sys.D(out, in);
  return hc;
}

// Solve (sI - H) x = b for upper Hessenberg H with adjacent-row pivoting.
cd hess_eval(const HessCache& hc, cd s) {
  const Eigen::Index n = hc.H.rows();
  if (n == 0) return hc.d;
  CMat M = -hc.H;
  for (Eigen::Index i = 0; i < n; ++i) M(i, i) += s;
  CVec x = hc.b;
  const double scale = std::max(1.0, hc.H.cwiseAbs().maxCoeff() + std::abs(s));
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    if (std::abs(M(k + 1, k)) > std::abs(M(k, k))) {
      M.row(k).segment(k, n - k).swap(M.row(k + 1).segment(k, n - k));
      std::swap(x(k), x(k + 1));
    }
    if (std::abs(M(k, k)) < 1e-14 * scale) throw PoleHit("singular (sI - A): imaginary-axis pole");
    const cd f = M(k + 1, k) / M(k, k);
    if (f != cd(0.0, 0.0)) {
      M.row(k + 1).segment(k, n - k) -= f * M.row(k).segment(k, n - k);
      x(k + 1) -= f * x(k);
    }
  }
  if (std::abs(M(n - 1, n - 1)) < 1e-14 * scale) throw PoleHit("singular (sI - A): imaginary-axis pole");
  for (Eigen::Index i = n; i-- > 0;) {
    cd acc = x(i);
    for (Eigen::Index j = i + 1; j < n; ++j) acc -= M(i, j) * x(j);
    x(i) = acc / M(i, i);
  }
  return (hc.c.transpose() * x)(0) + hc.d;
}

}  // namespace

FrequencyResponse freq_response(const StateSpace& sys, const std::vector<double>& omegas, int out, int in) {
  validate_grid(omegas);
  sys.validate();
  const HessCache hc = hess_prepare(sys, out, in);
  FrequencyResponse fr{omegas, std::vector<cd>(omegas.size())};
  for (std::size_t k = 0; k < omegas.size(); ++k) fr.values[k] = hess_eval(hc, cd(0.0, omegas[k]));
  return fr;
}

cd ss_eval(const StateSpace& sys, cd s, int out, int in) {
  const Eigen::Index n = sys.A.rows();
  if (n == 0) return sys.D(out, in);
  CMat M = -sys.A.cast<cd>();
  for (Eigen::Index i = 0; i < n; ++i) M(i, i) += s;
  Eigen::PartialPivLU<CMat> lu(M);
  const CVec x = lu.solve(sys.B.col(in).cast<cd>());
  if (!x.allFinite()) throw PoleHit("singular (sI - A)");
  return (sys.C.row(out).cast<cd>() * x)(0) + sys.D(out, in);
}

// ---------------------------------------------------------------- norms

Mat lyapunov(const Mat& A, const Mat& Q) {
  const Eigen::Index n = A.rows();
  if (n == 0) return Mat(0, 0);
  Eigen::ComplexSchur<CMat> cs(A.cast<cd>());
  if (cs.info() != Eigen::Success) throw NumericError("Schur decomposition did not converge");
  const CMat& U = cs.matrixU();
  const CMat& T = cs.matrixT();
  const CMat Qt = U.adjoint() * Q.cast<cd>() * U;
  CMat Y = CMat::Zero(n, n);
  for (Eigen::Index j = n; j-- > 0;) {
    CVec rhs = -Qt.col(j);
    for (Eigen::Index k = j + 1; k < n; ++k) rhs -= std::conj(T(j, k)) * Y.col(k);
    CMat M = T;
    const cd shift = std::conj(T(j, j));
    for (Eigen::Index i = 0; i < n; ++i) M(i, i) += shift;
    Y.col(j) = M.triangularView<Eigen::Upper>().solve(rhs);
  }
  const CMat X = U * Y * U.adjoint();
  return X.real();
}

double h2_norm(const StateSpace& sys) {
  sys.validate();
  if (sys.D.cwiseAbs().maxCoeff() != 0.0) throw InputError("H2 norm requires a strictly proper system (D = 0)");
  if (sys.states() == 0) return 0.0;
  if (!is_hurwitz(ss_eigenvalues(sys))) throw NumericError("H2 norm requested for an unstable system");
  const Mat P = lyapunov(sys.A, sys.B * sys.B.transpose());
  const double v = (sys.C * P * sys.C.transpose()).trace();
  return std::sqrt(std::max(v, 0.0));
}

Peak peak_gain(const std::function<cd(double)>& g, double lo, double hi, int per_decade, bool include_dc) {
  const double l0 = std::log10(lo), l1 = std::log10(hi);
  const auto n = static_cast<std::size_t>(std::ceil((l1 - l0) * per_decade)) + 1;
  const std::vector<double> w = logspace(l0, l1, n);
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(g(w[i]));
  Peak best;
  if (include_dc) {
    best.value = std::abs(g(0.0));
    best.omega = 0.0;
  }
  // Candidate local maxima, largest first.
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; ++i) {
    const bool left = i == 0 || mag[i] >= mag[i - 1];
    const bool right = i + 1 == n || mag[i] >= mag[i + 1];
    if (left && right) cand.push_back(i);
  }
  std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
  if (cand.size() > 4) cand.resize(4);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  for (std::size_t i : cand) {
    if (mag[i] > best.value) {
      best.value = mag[i];
      best.omega = w[i];
    }
    double a = std::log10(w[i == 0 ? 0 : i - 1]);
    double b = std::log10(w[i + 1 == n ? n - 1 : i + 1]);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = std::abs(g(std::pow(10.0, x1))), f2 = std::abs(g(std::pow(10.0, x2)));
    for (int it = 0; it < 60 && (b - a) > 1e-12; ++it) {
      if (f1 > f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - gr * (b - a);
        f1 = std::abs(g(std::pow(10.0, x1)));
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + gr * (b - a);
        f2 = std::abs(g(std::pow(10.0, x2)));
      }
    }
    const double xm = 0.5 * (a + b);
    const double fm = std::abs(g(std::pow(10.0, xm)));
    if (fm > best.value) {
      best.value = fm;
      best.omega = std::pow(10.0, xm);
    }
  }
  return best;
}

Norms sys_norms(const StateSpace& sys) {
  sys.validate();
  if (sys.inputs() != 1 || sys.outputs() != 1) throw InputError("sys_norms expects a SISO system");
  if (!is_hurwitz(ss_eigenvalues(sys))) throw NumericError("system norms requested for an unstable system");
  Norms n;
  n.h2 = h2_norm(sys);
  const HessCache hc = hess_prepare(sys, 0, 0);
  const Peak pk = peak_gain([&](double w) { return hess_eval(hc, cd(0.0, w)); }, 1e-3, 1e4, 400, true);
  n.hinf = pk.value;
  n.hinf_omega = pk.omega;
  return n;
}

BandNorms band_norms(const std::function<cd(double)>& g, double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) throw InputError("band_norms: need 0 < lo < hi");
  // 8-point Gauss-Legendre on panels uniform in log(w).
  static const double xg[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                               0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
  static const double wg[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                               0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
  const double u0 = std::log(lo), u1 = std::log(hi);
  const int panels = std::max(50, static_cast<int>(std::ceil((u1 - u0) / std::log(10.0) * 200.0)));
  const double hp = (u1 - u0) / panels;
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = u0 + (p + 0.5) * hp;
    double part = 0.0;
    for (int k = 0; k < 8; ++k) {
      const double w = std::exp(mid + 0.5 * hp * xg[k]);
      part += wg[k] * std::norm(g(w)) * w;
    }
    acc += 0.5 * hp * part;
  }
  BandNorms bn;
  bn.h2 = std::sqrt(acc / M_PI);
  const Peak pk = peak_gain(g, lo, hi, 400, false);
  bn.hinf = pk.value;
  bn.hinf_omega = pk.omega;
  return bn;
}

// ---------------------------------------------------------------- simulation

double smallest_time_constant(const Mat& A) {
  double m = 0.0;
  for (const cd& e : eigenvalues(A)) m = std::max(m, std::abs(e));
  return m > 0.0 ? 1.0 / m : std::numeric_limits<double>::infinity();
}

namespace {

void check_dt(const StateSpace& sys, const SimOptions& opt) {
  if (!(opt.dt > 0.0) || !(opt.horizon >= 0.0)) throw InputError("simulate_lti: dt must be positive and horizon nonnegative");
  if (opt.enforce_dt) {
    const double tau = smallest_time_constant(sys.A);
    if (opt.dt > 0.1 * tau * (1.0 + 1e-12)) {
      std::ostringstream os;
      os << "simulate_lti: dt = " << opt.dt << " exceeds 0.1 x smallest time constant (" << tau << ")";
      throw InputError(os.str());
    }
  }
}

SimResult simulate_impl(const StateSpace& sys, const std::function<void(std::size_t, int, double*)>& input,
                        const SimOptions& opt) {
  sys.validate();
  check_dt(sys, opt);
  const auto n = static_cast<std::size_t>(sys.states());
  const auto m = static_cast<std::size_t>(sys.inputs());
  const auto p = static_cast<std::size_t>(sys.outputs());
  const auto steps = static_cast<std::size_t>(std::llround(opt.horizon / opt.dt));
  const RowMat A = sys.A, B = sys.B;
  const double h = opt.dt;
  std::vector<double> x(n, 0.0), xt(n), k1(n), k2(n), k3(n), k4(n), bu(n);
  if (opt.x0.size() != 0) {
    if (static_cast<std::size_t>(opt.x0.size()) != n) throw InputError("simulate_lti: x0 dimension mismatch");
    for (std::size_t i = 0; i < n; ++i) x[i] = opt.x0(static_cast<Eigen::Index>(i));
  }
  std::vector<double> u0(m), um(m), u1(m);
  SimResult res;
  res.t.resize(steps + 1);
  res.y.resize(static_cast<Eigen::Index>(steps + 1), static_cast<Eigen::Index>(p));
  auto output = [&](std::size_t k, const double* u) {
    for (std::size_t r = 0; r < p; ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += sys.C(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) * x[i];
      for (std::size_t j = 0; j < m; ++j) acc += sys.D(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) * u[j];
      res.y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) = acc;
    }
    res.t[k] = static_cast<double>(k) * h;
  };
  // f(x, u) = A x + B u into out.
  auto deriv = [&](const double* xs, const double* u, double* out) {
    kernels::gemv(A.data(), n, xs, out, n, n);
    if (m > 0) {
      kernels::gemv(B.data(), m, u, bu.data(), n, m);
      kernels::axpy(1.0, bu.data(), out, n);
    }
  };
  input(0, 0, u0.data());
  output(0, u0.data());
  for (std::size_t k = 0; k < steps; ++k) {
    input(k, 1, um.data());
    input(k + 1, 0, u1.data());
    deriv(x.data(), u0.data(), k1.data());
    for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + 0.5 * h * k1[i];
    deriv(xt.data(), um.data(), k2.data());
    for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + 0.5 * h * k2[i];
    deriv(xt.data(), um.data(), k3.data());
    for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + h * k3[i];
    deriv(xt.data(), u1.data(), k4.data());
    bool finite = true;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      finite = finite && std::isfinite(x[i]) && std::abs(x[i]) < 1e150;
    }
    if (!finite) {
      std::ostringstream os;
      os << "simulate_lti: non-finite state at t = " << static_cast<double>(k + 1) * h;
      throw NumericError(os.str());
    }
    output(k + 1, u1.data());
    std::swap(u0, u1);
  }
  res.x_final = Eigen::Map<Vec>(x.data(), static_cast<Eigen::Index>(n));
  return res;
}

}  // namespace

SimResult simulate_lti(const StateSpace& sys, const InputFn& input, const SimOptions& opt) {
  const double h = opt.dt;
  return simulate_impl(
      sys, [&](std::size_t k, int half, double* u) { input((static_cast<double>(k) + 0.5 * half) * h, u); }, opt);
}

SimResult simulate_lti(const StateSpace& sys, const Mat& U, const SimOptions& opt) {
  const auto m = static_cast<std::size_t>(sys.inputs());
  if (static_cast<std::size_t>(U.cols()) != m) throw InputError("simulate_lti: input trace width mismatch");
  const auto steps = static_cast<std::size_t>(std::llround(opt.horizon / opt.dt));
  if (m > 0 && static_cast<std::size_t>(U.rows()) < steps + 1)
    throw InputError("simulate_lti: input trace shorter than the horizon");
  return simulate_impl(
      sys,
      [&](std::size_t k, int half, double* u) {
        for (std::size_t j = 0; j < m; ++j) {
          const auto c = static_cast<Eigen::Index>(j);
          const auto r = static_cast<Eigen::Index>(k);
          u[j] = half ? 0.5 * (U(r, c) + U(r + 1, c)) : U(r, c);
        }
      },
      opt);
}

// ---------------------------------------------------------------- propagator

namespace {

Mat rk4_matrix_step(const Mat& A, const Mat& X, const Mat& BU0, const Mat& BUm, const Mat& BU1, double h) {
  const Mat k1 = A * X + BU0;
  const Mat k2 = A * (X + 0.5 * h * k1) + BUm;
  const Mat k3 = A * (X + 0.5 * h * k2) + BUm;
  const Mat k4 = A * (X + h * k3) + BU1;
  return X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Rk4Propagator::Rk4Propagator(const Mat& A, const Mat& B, double h) : h_(h) {
  const Eigen::Index n = A.rows(), m = B.cols();
  const Mat I = Mat::Identity(n, n);
  const Mat Zn = Mat::Zero(n, n), Zb = Mat::Zero(n, m);
  phi_ = rk4_matrix_step(A, I, Zn, Zn, Zn, h);
  g0_ = rk4_matrix_step(A, Zb, B, Zb, Zb, h);
  gm_ = rk4_matrix_step(A, Zb, Zb, B, Zb, h);
  g1_ = rk4_matrix_step(A, Zb, Zb, Zb, B, h);
}

void Rk4Propagator::step(const double* x, const double* u0, const double* um, const double* u1, double* out) const {
  const auto n = static_cast<std::size_t>(phi_.rows());
  const auto m = static_cast<std::size_t>(g0_.cols());
  kernels::gemv(phi_.data(), n, x, out, n, n);
  if (m == 0) return;
  thread_local std::vector<double> tmp;
  tmp.resize(n);
  kernels::gemv(g0_.data(), m, u0, tmp.data(), n, m);
  kernels::axpy(1.0, tmp.data(), out, n);
  kernels::gemv(gm_.data(), m, um, tmp.data(), n, m);
  kernels::axpy(1.0, tmp.data(), out, n);
  kernels::gemv(g1_.data(), m, u1, tmp.data(), n, m);
  kernels::axpy(1.0, tmp.data(), out, n);
}

void Rk4Propagator::step_autonomous(const double* x, double* out) const {
  const auto n = static_cast<std::size_t>(phi_.rows());
  kernels::gemv(phi_.data(), n, x, out, n, n);
}

Vec rk4_step(const Mat& A, const Mat& B, const Vec& x, const Vec& u0, const Vec& um, const Vec& u1, double h) {
  const Vec k1 = A * x + B * u0;
  const Vec k2 = A * (x + 0.5 * h * k1) + B * um;
  const Vec k3 = A * (x + 0.5 * h * k2) + B * um;
  const Vec k4 = A * (x + h * k3) + B * u1;
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace gridloop
