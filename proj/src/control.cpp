#include "gridloop/control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace gridloop {

namespace {

RationalTF sfc_tf(const FrConfig& c) {
  // (s P_f + I_f) / (s (s T_L + 1))
  return RationalTF(Polynomial({c.i_f, c.p_f}), Polynomial({0.0, 1.0, c.t_l}));
}

// beta + s T_L gamma / (s T_H + 1)
RationalTF ig_share_tf(const FrConfig& c, double beta, double gamma) {
  return RationalTF(Polynomial({beta, beta * c.t_h + c.t_l * gamma}), Polynomial({1.0, c.t_h}));
}

void require_min_phase(const RationalTF& g, const char* what) {
  for (const cd& z : g.zeros())
    if (z.real() >= 0.0) {
      std::ostringstream os;
      os << what << " estimate is not minimum phase: zero at " << z.real() << (z.imag() < 0 ? "-" : "+") << "j"
         << std::abs(z.imag()) << "; exact inversion refused";
      throw InputError(os.str());
    }
}

RationalTF lag_power(double t_r, int k) {
  RationalTF out = RationalTF::gain(1.0);
  for (int i = 0; i < k; ++i) out = tf_arith(out, RationalTF::lag(t_r), TfOp::Mul, 0.0);
  return out;
}

StateSpace regularize(const RationalTF& g, double t_r, int& k) {
  k = std::max(0, -g.relative_degree());
  if (g.is_zero()) {
    k = 0;
    return StateSpace(Mat::Zero(0, 0), Mat::Zero(0, 1), Mat::Zero(1, 0), Mat::Zero(1, 1));
  }
  return tf_to_ss(tf_arith(g, lag_power(t_r, k), TfOp::Mul, 0.0));
}

std::vector<double> band_grid(double lo, double hi, int per_decade) {
  const double decades = std::log10(hi / lo);
  const auto n = static_cast<std::size_t>(std::max(2.0, std::ceil(decades * per_decade) + 1));
  return logspace(std::log10(lo), std::log10(hi), n);
}

}  // namespace

void FrConfig::validate() const {
  for (double v : {t_l, t_h, t_s, M}) {
    if (!(v > 0.0)) throw InputError("frequency-regulation time constants and inertia must be positive");
  }
  if (!(p_f >= 0.0 && i_f >= 0.0 && D >= 0.0)) throw InputError("SFC gains and load damping must be nonnegative");
  if (!(t_h < t_l)) throw InputError("T_H must be smaller than T_L");
}

void FleetShares::validate() const {
  double ab = 0.0, g = 0.0;
  for (double a : alpha) ab += a;
  for (double b : beta) ab += b;
  for (double c : gamma) g += c;
  if (gamma.size() != beta.size()) throw InputError("one gamma share is required per IG");
  if (std::abs(ab - 1.0) > 1e-12) throw InputError("participation shares alpha and beta must sum to 1");
  if (!gamma.empty() && std::abs(g - 1.0) > 1e-12) throw InputError("participation shares gamma must sum to 1");
}

LoopSpec aggregate_spec(const FrConfig& cfg, const SgParams& sg, const IgParams& ig, double alpha, double beta,
                        double gamma, double e_g, double e_i) {
  cfg.validate();
  if (!(1.0 + e_g > 0.0) || !(1.0 + e_i > 0.0)) throw InputError("parameter errors must satisfy 1 + e > 0");
  LoopSpec s;
  s.cfg = cfg;
  SgParams sg_hat = sg;
  sg_hat.gov[0] *= 1.0 + e_g;
  IgParams ig_hat = ig;
  ig_hat.t_e *= 1.0 + e_i;
  s.sgs.push_back({governor_tf(sg), governor_tf(sg_hat), sg.m, alpha});
  s.igs.push_back({inverter_tf(ig), inverter_tf(ig_hat), ig.n, ig.k, ig.t_f, beta, gamma});
  return s;
}

LoopSpec reference_aggregate(double e_g, double e_i) {
  return aggregate_spec(FrConfig{}, SgParams{}, IgParams{}, 0.6, 0.4, 1.0, e_g, e_i);
}

FeedbackTfs feedback_tfs(const LoopSpec& spec) {
  const RationalTF sfc = sfc_tf(spec.cfg);
  FeedbackTfs f;
  for (const SgLoop& g : spec.sgs) f.l.push_back(RationalTF::gain(1.0 / g.m) + g.alpha * sfc);
  for (const IgLoop& i : spec.igs) {
    const RationalTF ire(Polynomial({0.0, i.k}), Polynomial({1.0, i.t_f}));
    f.q.push_back(RationalTF::gain(1.0 / i.n) + ire + ig_share_tf(spec.cfg, i.beta, i.gamma) * sfc);
  }
  return f;
}

ControllerSet ffc_synthesize(const LoopSpec& spec, const RationalTF& p, bool ideal, double t_r) {
  const FrConfig& c = spec.cfg;
  ControllerSet out;
  out.ideal = ideal;
  out.t_r = t_r > 0.0 ? t_r : c.t_h / 100.0;
  const RationalTF low = ideal ? RationalTF::gain(1.0) : RationalTF::lag(c.t_l);
  for (const SgLoop& g : spec.sgs) {
    require_min_phase(g.t_hat, "governor");
    const RationalTF inv(g.t_hat.den(), g.t_hat.num());
    const RationalTF S = tf_arith(tf_arith(g.alpha * p, low, TfOp::Mul), inv, TfOp::Mul);
    int k = 0;
    out.S_impl.push_back(regularize(S, out.t_r, k));
    out.S.push_back(S);
    out.k_S.push_back(k);
  }
  for (const IgLoop& i : spec.igs) {
    require_min_phase(i.v_hat, "inverter");
    const RationalTF inv(i.v_hat.den(), i.v_hat.num());
    const RationalTF share = ideal ? RationalTF::gain(i.beta) : ig_share_tf(c, i.beta, i.gamma);
    const RationalTF H = tf_arith(tf_arith(share * p, low, TfOp::Mul), inv, TfOp::Mul);
    int k = 0;
    out.H_impl.push_back(regularize(H, out.t_r, k));
    out.H.push_back(H);
    out.k_H.push_back(k);
  }
  return out;
}

RationalTF g_conv(const LoopSpec& spec) {
  const FeedbackTfs f = feedback_tfs(spec);
  RationalTF den(Polynomial({spec.cfg.D, spec.cfg.M}), Polynomial({1.0}));
  for (std::size_t g = 0; g < spec.sgs.size(); ++g) den = den + spec.sgs[g].t * f.l[g];
  for (std::size_t i = 0; i < spec.igs.size(); ++i) den = den + spec.igs[i].v * f.q[i];
  return tf_arith(RationalTF::gain(-1.0), den, TfOp::Div);
}

RationalTF ffc_factor(const LoopSpec& spec, const ControllerSet& c) {
  RationalTF f;
  for (std::size_t g = 0; g < spec.sgs.size(); ++g) f = f + spec.sgs[g].t * c.S[g];
  for (std::size_t i = 0; i < spec.igs.size(); ++i) f = f + spec.igs[i].v * c.H[i];
  return f;
}

cd ClosedLoop::eval(cd s) const {
  const cd g = conv.eval(s);
  if (mode == LoopMode::Conventional) return g;
  if (delay == 0.0) return g * complement.eval(s);
  return g * (1.0 - std::exp(-s * delay) * factor.eval(s));
}

RationalTF ClosedLoop::rational() const {
  if (mode == LoopMode::Conventional) return conv;
  if (delay > 0.0) throw InputError("closed loop with delay has no rational form");
  return tf_arith(conv, complement, TfOp::Mul);
}

ClosedLoop closed_loop(const LoopSpec& spec, const ControllerSet& c, LoopMode mode, double delay) {
  if (!(delay >= 0.0)) throw InputError("delay must be nonnegative");
  ClosedLoop cl;
  cl.mode = mode;
  cl.conv = g_conv(spec);
  cl.delay = delay;
  cl.poles = cl.conv.poles();
  if (mode == LoopMode::Proposed) {
    cl.factor = ffc_factor(spec, c);
    cl.complement = RationalTF::gain(1.0) - cl.factor;
    for (const cd& p : cl.factor.poles()) cl.poles.push_back(p);
  }
  cl.stable = is_hurwitz(cl.poles);
  return cl;
}

DelayEnvelope delay_envelope(double delay, const std::vector<double>& omegas) {
  if (!(delay >= 0.0)) throw InputError("delay must be nonnegative");
  DelayEnvelope e;
  e.omegas = omegas;
  for (double w : omegas) {
    e.exact.push_back(std::abs(2.0 * std::sin(0.5 * w * delay)));
    const cd s(0.0, w);
    e.pade.push_back(std::abs(delay * s / ((delay * delay / 12.0) * s * s + 0.5 * delay * s + 1.0)));
  }
  return e;
}

double analysis_bandwidth(const LoopSpec& spec) {
  const RationalTF g = g_conv(spec);
  auto mag = [&](double w) { return std::abs(g.eval(cd(0.0, w))); };
  const Peak pk = peak_gain([&](double w) { return g.eval(cd(0.0, w)); }, 1e-3, 1e4);
  const double target = pk.value / std::sqrt(2.0);
  double lo = pk.omega, hi = pk.omega;
  while (mag(hi) >= target) {
    lo = hi;
    hi *= 1.05;
    if (hi > 1e6) throw NumericError("analysis_bandwidth: |G_conv| does not roll off");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mag(mid) >= target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double max_delay(const LoopSpec& spec, const ControllerSet& c, double lo, double hi, double tol,
                 double max_search) {
  const RationalTF f = ffc_factor(spec, c);
  const auto w = band_grid(lo, hi, 1500);
  std::vector<cd> F(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) F[i] = f.eval(cd(0.0, w[i]));
  auto violates = [&](double td) {
    for (std::size_t i = 0; i < w.size(); ++i)
      if (std::abs(1.0 - std::exp(cd(0.0, -w[i] * td)) * F[i]) > 1.0) return true;
    return false;
  };
  if (violates(0.0)) return 0.0;
  if (!violates(max_search)) return std::numeric_limits<double>::infinity();
  double a = 0.0, b = max_search;
  while (b - a > tol) {
    const double mid = 0.5 * (a + b);
    (violates(mid) ? b : a) = mid;
  }
  return a;
}

bool RobustnessReport::all_pass() const {
  for (const auto& c : cells)
    if (c.max_ratio > 1.0 || !c.low_condition || !c.high_condition) return false;
  return true;
}

RobustnessReport error_robustness(const FrConfig& cfg, const SgParams& sg, const IgParams& ig, double alpha,
                                  double beta, double gamma, const std::vector<double>& e_values, double delay) {
  RobustnessReport rep;
  rep.band_hi = 1.0 / cfg.t_h;
  const auto w = band_grid(1e-3, rep.band_hi, 400);
  const auto w_low = band_grid(1e-3, 0.1 / cfg.t_l, 100);
  const auto w_high = band_grid(10.0 / cfg.t_l, rep.band_hi, 100);
  for (double eg : e_values)
    for (double ei : e_values) {
      const LoopSpec spec = aggregate_spec(cfg, sg, ig, alpha, beta, gamma, eg, ei);
      const ControllerSet ctl = ffc_synthesize(spec);
      const RationalTF f = ffc_factor(spec, ctl);
      RobustnessCell cell;
      cell.e_g = eg;
      cell.e_i = ei;
      for (double wi : w) {
        const cd s(0.0, wi);
        const double r = std::abs(1.0 - std::exp(-s * delay) * f.eval(s));
        if (r > cell.max_ratio) {
          cell.max_ratio = r;
          cell.ratio_omega = wi;
        }
      }
      auto dt = [&](cd s) {
        cd acc = 0.0;
        for (const SgLoop& g : spec.sgs) acc += g.alpha * (g.t.eval(s) / g.t_hat.eval(s) - 1.0);
        return acc;
      };
      auto dv = [&](cd s, bool use_gamma) {
        cd acc = 0.0;
        for (const IgLoop& i : spec.igs) acc += (use_gamma ? i.gamma : i.beta) * (i.v.eval(s) / i.v_hat.eval(s) - 1.0);
        return acc;
      };
      cell.low_condition = true;
      for (double wi : w_low) cell.low_condition &= std::abs(dt(cd(0.0, wi)) + dv(cd(0.0, wi), false)) <= 1.0;
      cell.high_condition = true;
      for (double wi : w_high) cell.high_condition &= std::abs(dv(cd(0.0, wi), true)) <= 1.0;
      rep.worst_ratio = std::max(rep.worst_ratio, cell.max_ratio);
      rep.cells.push_back(cell);
    }
  return rep;
}

double ideal_ffc_residual(const LoopSpec& spec, double horizon, double dt) {
  const ControllerSet ctl = ffc_synthesize(spec, RationalTF::gain(1.0), true);
  const RationalTF g = g_conv(spec);
  const RationalTF cancel = tf_arith(g, ffc_factor(spec, ctl), TfOp::Mul);
  const StateSpace a = tf_to_ss(g), b = tf_to_ss(cancel);
  const Eigen::Index na = a.states(), nb = b.states();
  StateSpace sys(Mat::Zero(na + nb, na + nb), Mat::Zero(na + nb, 1), Mat::Zero(1, na + nb), Mat::Zero(1, 1));
  sys.A.topLeftCorner(na, na) = a.A;
  sys.A.bottomRightCorner(nb, nb) = b.A;
  sys.B.topRows(na) = a.B;
  sys.B.bottomRows(nb) = b.B;
  sys.C.leftCols(na) = a.C;
  sys.C.rightCols(nb) = -b.C;
  sys.D(0, 0) = a.D(0, 0) - b.D(0, 0);
  SimOptions opt;
  opt.dt = dt;
  opt.horizon = horizon;
  opt.enforce_dt = false;
  const SimResult r = simulate_lti(sys, [](double, double* u) { u[0] = 1.0; }, opt);
  return r.y.cwiseAbs().maxCoeff();
}

NetworkLoop network_closed_loop(const MgModel& m, const FrConfig& cfg, const FleetShares& shares, double gain_scale) {
  const Eigen::Index n = m.states(), U = static_cast<Eigen::Index>(m.units());
  const auto nsg = static_cast<Eigen::Index>(shares.alpha.size());
  if (nsg + static_cast<Eigen::Index>(shares.beta.size()) != U) throw InputError("share count does not match units");
  Vec a(U), g = Vec::Zero(U);
  for (Eigen::Index u = 0; u < nsg; ++u) a(u) = shares.alpha[static_cast<std::size_t>(u)];
  for (Eigen::Index i = 0; i < U - nsg; ++i) {
    a(nsg + i) = shares.beta[static_cast<std::size_t>(i)];
    g(nsg + i) = shares.gamma[static_cast<std::size_t>(i)];
  }
  const double hp = cfg.t_l / cfg.t_h;
  const Eigen::Index N = n + 3, iz = n, iw = n + 1, ih = n + 2;
  NetworkLoop L;
  L.n_plant = n;
  L.A = Mat::Zero(N, N);
  L.A.topLeftCorner(n, n) = m.A_MG;
  // dFR = -a w - g (T_L/T_H)(w - h)
  L.fr_x = Mat::Zero(U, N);
  L.fr_x.col(iw) = -a - hp * g;
  L.fr_x.col(ih) = hp * g;
  L.A.topRows(n) += m.B_FR * L.fr_x;
  L.A.block(iz, 0, 1, n) = m.c_f;
  L.A.block(iw, 0, 1, n) = gain_scale * cfg.p_f / cfg.t_l * m.c_f;
  L.A(iw, iz) = gain_scale * cfg.i_f / cfg.t_l;
  L.A(iw, iw) = -1.0 / cfg.t_l;
  L.A(ih, iw) = 1.0 / cfg.t_h;
  L.A(ih, ih) = -1.0 / cfg.t_h;
  L.B_i = Mat::Zero(N, m.B_MG.cols());
  L.B_i.topRows(n) = m.B_MG;
  L.B_ffc = Mat::Zero(N, U);
  L.B_ffc.topRows(n) = m.B_FR;
  L.c_f = Mat::Zero(1, N);
  L.c_f.leftCols(n) = m.c_f;
  L.eig = eigenvalues(L.A);
  L.stable = is_hurwitz(L.eig);
  return L;
}

std::vector<RationalTF> ffc_filters(const FrConfig& cfg, const FleetShares& shares,
                                    const std::vector<RationalTF>& t_hat, const std::vector<RationalTF>& v_hat) {
  if (t_hat.size() != shares.alpha.size() || v_hat.size() != shares.beta.size())
    throw InputError("ffc_filters: estimate count does not match shares");
  const RationalTF integ_low(Polynomial({1.0}), Polynomial({0.0, 1.0, cfg.t_l}));  // 1/(s (sT_L+1))
  std::vector<RationalTF> out;
  for (std::size_t g = 0; g < t_hat.size(); ++g) {
    require_min_phase(t_hat[g], "governor");
    const RationalTF inv(t_hat[g].den(), t_hat[g].num());
    out.push_back(tf_arith(shares.alpha[g] * integ_low, inv, TfOp::Mul));
  }
  for (std::size_t i = 0; i < v_hat.size(); ++i) {
    require_min_phase(v_hat[i], "inverter");
    const RationalTF inv(v_hat[i].den(), v_hat[i].num());
    out.push_back(tf_arith(tf_arith(ig_share_tf(cfg, shares.beta[i], shares.gamma[i]), integ_low, TfOp::Mul), inv,
                           TfOp::Mul));
  }
  return out;
}

FfcGenerator network_ffc(const MgModel& m, const Vec& dI_T, double D, const std::vector<RationalTF>& filters) {
  const Eigen::Index n = m.states(), U = static_cast<Eigen::Index>(m.units());
  if (static_cast<Eigen::Index>(filters.size()) != U) throw InputError("network_ffc: one filter per unit required");
  const NrResponse nr = nr_response(m, dI_T, D);
  const Mat& Cp = nr.p.C;
  const double Dp = nr.p.D(0, 0);
  std::vector<StateSpace> q;
  Eigen::Index ng = n;
  for (const RationalTF& f : filters) {
    if (!f.proper()) throw InputError("network_ffc: feedforward filter must be proper");
    q.push_back(tf_to_ss(f));
    ng += q.back().states();
  }
  FfcGenerator g;
  g.A = Mat::Zero(ng, ng);
  g.x0 = Vec::Zero(ng);
  g.C = Mat::Zero(U, ng);
  g.jump = Vec::Zero(n);
  g.final_fr = Vec::Zero(U);
  g.A.topLeftCorner(n, n) = m.A_MG;
  g.x0.head(n) = nr.p.B.col(0);
  const Vec xs = m.A_MG.partialPivLu().solve(nr.p.B.col(0));
  const double p0 = -(Cp * xs)(0) + Dp;
  Eigen::Index o = n;
  Vec dq(U);
  for (Eigen::Index u = 0; u < U; ++u) {
    const StateSpace& s = q[static_cast<std::size_t>(u)];
    const Eigen::Index k = s.states();
    g.A.block(o, o, k, k) = s.A;
    g.A.block(o, 0, k, n) = s.B * Cp;
    g.x0.segment(o, k) = s.B.col(0) * Dp;
    g.C.block(u, 0, 1, n) = s.D(0, 0) * Cp;
    g.C.block(u, o, 1, k) = s.C;
    dq(u) = s.D(0, 0);
    // Residue of the filter at s = 0 times p(0) is the emitted final value.
    const RationalTF& f = filters[static_cast<std::size_t>(u)];
    g.final_fr(u) = f.den()[0] == 0.0 ? p0 * f.num()[0] / f.den()[1] : 0.0;
    o += k;
  }
  g.jump = m.B_FR * (dq * Dp);
  return g;
}

std::string export_controllers_json(const ControllerSet& c) {
  using nlohmann::json;
  auto mat = [](const Mat& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      json r = json::array();
      for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
      rows.push_back(r);
    }
    return rows;
  };
  auto entry = [&](const RationalTF& g, int k, const StateSpace& impl) {
    return json{{"num", g.num().coeffs()},
                {"den", g.den().coeffs()},
                {"proper", g.proper()},
                {"regularization_order", k},
                {"impl", {{"A", mat(impl.A)}, {"B", mat(impl.B)}, {"C", mat(impl.C)}, {"D", mat(impl.D)}}}};
  };
  json j;
  j["coefficient_order"] = "ascending powers of s";
  j["t_r"] = c.t_r;
  j["ideal"] = c.ideal;
  j["S"] = json::array();
  j["H"] = json::array();
  for (std::size_t i = 0; i < c.S.size(); ++i) j["S"].push_back(entry(c.S[i], c.k_S[i], c.S_impl[i]));
  for (std::size_t i = 0; i < c.H.size(); ++i) j["H"].push_back(entry(c.H[i], c.k_H[i], c.H_impl[i]));
  return j.dump(2);
}

}  // namespace gridloop
