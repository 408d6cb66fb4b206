#include "gridloop/devices.hpp"

#include <cmath>
#include <sstream>

#include "dual.hpp"

namespace gridloop {

using detail::Dual;

namespace {

constexpr int kSgStates = 11;
constexpr int kIgStates = 8;
constexpr int kInputs = 3;   // V_D, V_Q, FR
constexpr int kOutputs = 5;  // I_D, I_Q, P_terminal, P_drive, P_airgap

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InputError(std::string("parameter ") + name + " must be positive");
}

// Evaluates f at (x0, u0) with one dual direction per state and input.
template <class F>
void linearize(F f, const Vec& x0, const Vec& u0, Mat& J, Vec& fx0) {
  const int nx = static_cast<int>(x0.size()), nu = static_cast<int>(u0.size());
  const int nf = nx + kOutputs;
  J = Mat::Zero(nf, nx + nu);
  fx0 = Vec::Zero(nf);
  std::vector<Dual> x(nx), u(nu), out(nf);
  for (int dir = 0; dir < nx + nu; ++dir) {
    for (int i = 0; i < nx; ++i) x[i] = Dual(x0(i), dir == i ? 1.0 : 0.0);
    for (int i = 0; i < nu; ++i) u[i] = Dual(u0(i), dir == nx + i ? 1.0 : 0.0);
    f(x.data(), u.data(), out.data(), out.data() + nx);
    for (int r = 0; r < nf; ++r) {
      J(r, dir) = out[r].d;
      if (dir == 0) fx0(r) = out[r].v;
    }
  }
}

DgBlock finish_block(const Mat& J, const Vec& fx0, int nx, const char* what) {
  const double resid = fx0.head(nx).cwiseAbs().maxCoeff();
  if (resid > 1e-8) {
    std::ostringstream os;
    os << what << ": operating point is not an equilibrium (residual " << resid << ")";
    throw NumericError(os.str());
  }
  DgBlock b;
  const Mat A = J.block(0, 0, nx, nx), B = J.block(0, nx, nx, kInputs);
  b.ss = StateSpace(A, B, J.block(nx, 0, 2, nx), J.block(nx, nx, 2, kInputs));
  b.aux = StateSpace(A, B, J.block(nx + 2, 0, 3, nx), J.block(nx + 2, nx, 3, kInputs));
  const auto eig = eigenvalues(A);
  if (!is_hurwitz(eig)) {
    std::ostringstream os;
    os << what << ": isolated block is unstable (spectral abscissa " << spectral_abscissa(eig) << ")";
    throw NumericError(os.str());
  }
  return b;
}

struct SgModel {
  SgParams p;
  StateSpace gov;
  double omega_b = 0.0, pm0 = 0.0, vref = 0.0;

  template <class T>
  void operator()(const T* x, const T* u, T* dx, T* y) const {
    using std::cos, std::sin, std::sqrt;
    using detail::cos, detail::sin, detail::sqrt;
    const T ang = x[0] - T(M_PI / 2.0);
    const T c = cos(ang), s = sin(ang);
    const T vd = u[0] * c + u[1] * s;
    const T vq = u[1] * c - u[0] * s;
    const T eq1 = x[2], ed1 = x[3], eq2 = x[4], ed2 = x[5], efd = x[6];
    const double det = p.rs * p.rs + p.xq2 * p.xd2;
    const T a = ed2 - vd, bq = eq2 - vq;
    const T id = (p.rs * a + p.xq2 * bq) / det;
    const T iq = (p.rs * bq - p.xd2 * a) / det;
    const T pe = ed2 * id + eq2 * iq + (p.xq2 - p.xd2) * id * iq;
    const T vmag = sqrt(u[0] * u[0] + u[1] * u[1]);
    const T ug = u[2] / p.rating - x[1] / p.m;
    T pm = T(pm0);
    for (int i = 0; i < 4; ++i) pm = pm + gov.C(0, i) * x[7 + i];
    dx[0] = omega_b * x[1];
    dx[1] = (pm - pe) / p.M;
    dx[2] = (efd - eq1 - (p.xd - p.xd1) * id) / p.td01;
    dx[3] = ((p.xq - p.xq1) * iq - ed1) / p.tq01;
    dx[4] = (eq1 - eq2 - (p.xd1 - p.xd2) * id) / p.td02;
    dx[5] = (ed1 - ed2 + (p.xq1 - p.xq2) * iq) / p.tq02;
    dx[6] = (p.ka * (vref - vmag) - efd) / p.ta;
    for (int i = 0; i < 4; ++i) {
      T acc = gov.B(i, 0) * ug;
      for (int j = 0; j < 4; ++j) acc = acc + gov.A(i, j) * x[7 + j];
      dx[7 + i] = acc;
    }
    const T ID = (id * c - iq * s) * p.rating;
    const T IQ = (id * s + iq * c) * p.rating;
    y[0] = ID;
    y[1] = IQ;
    y[2] = u[0] * ID + u[1] * IQ;
    y[3] = pm * p.rating;
    y[4] = pe * p.rating;
  }
};

struct IgModel {
  IgParams p;
  double omega_b = 0.0, z_base = 1.0, p0 = 0.0, q0 = 0.0, vmag0 = 0.0;

  template <class T>
  void operator()(const T* x, const T* u, T* dx, T* y) const {
    using std::atan2, std::cos, std::sin, std::sqrt;
    using detail::atan2, detail::cos, detail::sin, detail::sqrt;
    const double L = p.l_f / z_base, R = p.r_f / z_base, Kp = p.p_i / z_base, Ki = p.i_i / z_base;
    const T th = x[0], F = x[1], pref = x[2], qref = x[3], ild = x[4], ilq = x[5];
    const T phi = atan2(u[1], u[0]);
    const T thdot = (phi - th) / p.t_pll;
    const T wm = thdot / omega_b;
    const T pcmd = p0 + u[2] - p.rating * (wm / p.n + p.k * (wm - F) / p.t_f);
    const T vmag = sqrt(u[0] * u[0] + u[1] * u[1]);
    const T c = cos(th), s = sin(th);
    const T vld = u[0] * c + u[1] * s;
    const T vlq = u[1] * c - u[0] * s;
    const T v2 = vld * vld + vlq * vlq;
    const T ird = (pref * vld + qref * vlq) / v2;
    const T irq = (pref * vlq - qref * vld) / v2;
    const T ed = ird - ild, eq = irq - ilq;
    dx[0] = thdot;
    dx[1] = (wm - F) / p.t_f;
    dx[2] = (pcmd - pref) / p.t_e;
    dx[3] = (q0 - p.k_v * p.rating * (vmag - vmag0) - qref) / p.t_e;
    dx[4] = (Kp * ed + Ki * x[6] - R * ild + thdot * L * ilq) / L;
    dx[5] = (Kp * eq + Ki * x[7] - R * ilq - thdot * L * ild) / L;
    dx[6] = ed;
    dx[7] = eq;
    const T ID = ild * c - ilq * s;
    const T IQ = ild * s + ilq * c;
    y[0] = ID;
    y[1] = IQ;
    y[2] = u[0] * ID + u[1] * IQ;
    y[3] = pref;
    y[4] = y[2];
  }
};

}  // namespace

void SgParams::validate() const {
  require_positive(rating, "SG rating");
  require_positive(M, "SG M");
  if (!(xd > xd1 && xd1 > xd2 && xd2 > 0.0)) throw InputError("SG reactances must satisfy X_d > X'_d > X''_d > 0");
  if (!(xq > xq1 && xq1 > xq2 && xq2 > 0.0)) throw InputError("SG reactances must satisfy X_q > X'_q > X''_q > 0");
  if (!(rs >= 0.0)) throw InputError("SG R_s must be nonnegative");
  for (double t : {td01, td02, tq01, tq02, ta}) require_positive(t, "SG time constant");
  for (double t : gov) require_positive(t, "SG governor time constant");
  require_positive(ka, "SG K_a");
  require_positive(m, "SG droop m");
}

void IgParams::validate() const {
  require_positive(rating, "IG rating");
  for (double v : {r_f, l_f, p_i, i_i, t_e, t_f, n, t_pll}) require_positive(v, "IG parameter");
  if (!(k >= 0.0) || !(k_v >= 0.0)) throw InputError("IG gains K and K_v must be nonnegative");
}

RationalTF governor_tf(const SgParams& p) {
  const auto& T = p.gov;
  const RationalTF a(Polynomial({1.0, T[2]}), Polynomial({1.0, T[0], T[0] * T[1]}));
  const RationalTF b(Polynomial({1.0, T[3]}), Polynomial({1.0, T[4]}) * Polynomial({1.0, T[5]}));
  return tf_arith(a, b, TfOp::Mul, 0.0);
}

RationalTF inverter_tf(const IgParams& p) {
  require_positive(p.t_e, "IG T_E");
  return RationalTF::lag(p.t_e);
}

DgBlock sg_block(const SgParams& p, cd v0, cd i0, const Bases& bases, std::string id, std::string node) {
  p.validate();
  if (std::abs(v0) < 1e-6) throw InputError("SG '" + id + "' terminal is not energized");
  SgModel m;
  m.p = p;
  m.gov = tf_to_ss(governor_tf(p));
  m.omega_b = bases.omega_b();

  const cd im = i0 / p.rating;  // machine base
  const cd eq_phasor = v0 + cd(p.rs, p.xq) * im;
  const double delta = std::arg(eq_phasor);
  const cd rot = std::polar(1.0, -(delta - M_PI / 2.0));
  const cd vm = v0 * rot, imm = im * rot;
  const double vd = vm.real(), vq = vm.imag(), i_d = imm.real(), i_q = imm.imag();
  const double ed2 = vd + p.rs * i_d - p.xq2 * i_q;
  const double eq2 = vq + p.rs * i_q + p.xd2 * i_d;
  const double ed1 = (p.xq - p.xq1) * i_q;
  const double eq1 = eq2 + (p.xd1 - p.xd2) * i_d;
  const double efd = eq1 + (p.xd - p.xd1) * i_d;
  m.pm0 = ed2 * i_d + eq2 * i_q + (p.xq2 - p.xd2) * i_d * i_q;
  m.vref = std::abs(v0) + efd / p.ka;

  Vec x0 = Vec::Zero(kSgStates);
  x0 << delta, 0.0, eq1, ed1, eq2, ed2, efd, 0.0, 0.0, 0.0, 0.0;
  Vec u0(kInputs);
  u0 << v0.real(), v0.imag(), 0.0;
  Mat J;
  Vec f0;
  linearize(m, x0, u0, J, f0);
  DgBlock b = finish_block(J, f0, kSgStates, ("SG '" + id + "'").c_str());
  b.id = std::move(id);
  b.node = std::move(node);
  b.kind = DgKind::Sg;
  b.labels = {"delta", "speed", "eq1", "ed1", "eq2", "ed2", "efd", "gov1", "gov2", "gov3", "gov4"};
  b.freq_state = 1;
  b.angle_state = 0;
  b.inertia = p.M * p.rating;
  b.v0 = v0;
  b.i0 = i0;
  return b;
}

DgBlock ig_block(const IgParams& p, cd v0, cd i0, const Bases& bases, std::string id, std::string node) {
  p.validate();
  if (std::abs(v0) < 1e-6) throw InputError("IG '" + id + "' terminal is not energized");
  IgModel m;
  m.p = p;
  m.omega_b = bases.omega_b();
  m.z_base = bases.z_base();
  const cd s0 = v0 * std::conj(i0);
  m.p0 = s0.real();
  m.q0 = s0.imag();
  m.vmag0 = std::abs(v0);
  const double th0 = std::arg(v0);
  const cd il = i0 * std::polar(1.0, -th0);
  const double R = p.r_f / m.z_base, Ki = p.i_i / m.z_base;

  Vec x0(kIgStates);
  x0 << th0, 0.0, m.p0, m.q0, il.real(), il.imag(), R * il.real() / Ki, R * il.imag() / Ki;
  Vec u0(kInputs);
  u0 << v0.real(), v0.imag(), 0.0;
  Mat J;
  Vec f0;
  linearize(m, x0, u0, J, f0);
  DgBlock b = finish_block(J, f0, kIgStates, ("IG '" + id + "'").c_str());
  b.id = std::move(id);
  b.node = std::move(node);
  b.kind = DgKind::Ig;
  b.labels = {"theta", "freq", "p_ref", "q_ref", "i_d", "i_q", "xi_d", "xi_q"};
  b.freq_state = 1;
  b.angle_state = 0;
  b.inertia = 0.0;
  b.v0 = v0;
  b.i0 = i0;
  return b;
}

Eigen::Matrix2d load_block(const LoadSpec& l, cd v0) {
  if (std::abs(v0) == 0.0) return Eigen::Matrix2d::Zero();
  Eigen::Matrix2d J;
  for (int dir = 0; dir < 2; ++dir) {
    const Dual a(v0.real(), dir == 0 ? 1.0 : 0.0), b(v0.imag(), dir == 1 ? 1.0 : 0.0);
    const Dual m2 = a * a + b * b;
    const Dual m = detail::sqrt(m2);
    const Dual P = l.p0 * (l.zp * m2 + l.ip * m + Dual(l.pp));
    const Dual Q = l.q0 * (l.zq * m2 + l.iq * m + Dual(l.pq));
    const Dual Id = (P * a + Q * b) / m2;
    const Dual Iq = (P * b - Q * a) / m2;
    J(0, dir) = Id.d;
    J(1, dir) = Iq.d;
  }
  return J;
}

}  // namespace gridloop
