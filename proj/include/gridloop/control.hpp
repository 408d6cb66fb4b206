// Frequency-regulation loops (inertia response, primary droop, secondary
// PI), feedforward controller synthesis, conventional / proposed closed
// loops, delay and parameter-error robustness, and the network-mode
// closed-loop and feedforward-generator realizations.
#pragma once

#include <limits>
#include <string>
#include <vector>

#include "gridloop/devices.hpp"
#include "gridloop/reduction.hpp"
#include "gridloop/tfcore.hpp"

namespace gridloop {

struct FrConfig {
  double t_l = 0.58;  // SFC low-pass, s
  double t_h = 0.01;  // IG high-pass, s
  double t_s = 0.5;   // SFC dispatch period, s (validated, unused: the SFC is continuous)
  double p_f = 1.0;   // SFC proportional gain
  double i_f = 2.0;   // SFC integral gain
  double M = 2.0;     // aggregate inertia, s
  double D = 0.1;     // aggregate load damping, pu
  void validate() const;
};

struct FleetShares {
  std::vector<double> alpha;  // per SG
  std::vector<double> beta;   // per IG
  std::vector<double> gamma;  // per IG
  void validate() const;
};

// Per-unit loop data for the scalar (aggregated) analysis.
struct SgLoop {
  RationalTF t, t_hat;  // true and estimated prime mover
  double m = 0.4;
  double alpha = 0.0;
};
struct IgLoop {
  RationalTF v, v_hat;  // true and estimated power tracking
  double n = 0.1, k = 5.0, t_f = 0.05;
  double beta = 0.0, gamma = 0.0;
};
struct LoopSpec {
  FrConfig cfg;
  std::vector<SgLoop> sgs;
  std::vector<IgLoop> igs;
};

// Single-SG / single-IG aggregate: t_1 and v_1 stand for the whole fleet.
// Errors scale T1 of the governor estimate and T_E of the inverter estimate.
LoopSpec aggregate_spec(const FrConfig& cfg, const SgParams& sg, const IgParams& ig, double alpha, double beta,
                        double gamma, double e_g = 0.0, double e_i = 0.0);
// Aggregate with the reference parameter set (alpha 0.6, beta 0.4, gamma 1).
LoopSpec reference_aggregate(double e_g = 0.0, double e_i = 0.0);

struct FeedbackTfs {
  std::vector<RationalTF> l;  // per SG
  std::vector<RationalTF> q;  // per IG
};
FeedbackTfs feedback_tfs(const LoopSpec& spec);

struct ControllerSet {
  std::vector<RationalTF> S;  // per SG (may be improper)
  std::vector<RationalTF> H;  // per IG
  std::vector<int> k_S, k_H;  // regularization orders
  std::vector<StateSpace> S_impl, H_impl;
  double t_r = 0.0;
  bool ideal = false;
};

// S_g = alpha_g p / ((sT_L+1) t_hat_g), H_i = (beta_i + sT_L gamma_i/(sT_H+1)) p / ((sT_L+1) v_hat_i).
// ideal = true drops the low-pass and high-pass filters (S = alpha p / t_hat, H = beta p / v_hat).
// Throws InputError when an estimate has a right-half-plane zero.
ControllerSet ffc_synthesize(const LoopSpec& spec, const RationalTF& p = RationalTF::gain(1.0), bool ideal = false,
                             double t_r = -1.0);

RationalTF g_conv(const LoopSpec& spec);
// Feedforward cancellation factor: sum t_g S_g + sum v_i H_i with the true plants.
RationalTF ffc_factor(const LoopSpec& spec, const ControllerSet& c);

enum class LoopMode { Conventional, Proposed };

struct ClosedLoop {
  LoopMode mode = LoopMode::Conventional;
  RationalTF conv;    // G_conv
  RationalTF factor;  // feedforward factor (zero in conventional mode)
  RationalTF complement;  // 1 - factor, formed symbolically
  double delay = 0.0;
  std::vector<cd> poles;
  bool stable = false;
  // G_conv(s) (1 - e^{-s delay} factor(s)).
  cd eval(cd s) const;
  // Delay-free rational form (throws InputError when delay > 0).
  RationalTF rational() const;
};
ClosedLoop closed_loop(const LoopSpec& spec, const ControllerSet& c, LoopMode mode, double delay = 0.0);

struct DelayEnvelope {
  std::vector<double> omegas;
  std::vector<double> exact;  // |1 - e^{-jw Td}|
  std::vector<double> pade;   // |Td s / ((Td^2/12) s^2 + (Td/2) s + 1)|
};
DelayEnvelope delay_envelope(double delay, const std::vector<double>& omegas);

// Upper half-power frequency of |G_conv|.
double analysis_bandwidth(const LoopSpec& spec);

// Largest delay with |G_prop| <= |G_conv| on [lo, hi]; bisection to tol.
// Returns +infinity when no delay up to max_search violates.
double max_delay(const LoopSpec& spec, const ControllerSet& c, double lo, double hi, double tol = 1e-4,
                 double max_search = 5.0);

struct RobustnessCell {
  double e_g = 0.0, e_i = 0.0;
  double max_ratio = 0.0;  // max over w of |G_prop| / |G_conv|
  double ratio_omega = 0.0;
  bool low_condition = false;   // |sum alpha dt + sum beta dv| <= 1 for w <= 0.1/T_L
  bool high_condition = false;  // |sum gamma dv| <= 1 for 10/T_L <= w <= 1/T_H
};
struct RobustnessReport {
  std::vector<RobustnessCell> cells;
  double band_hi = 0.0;
  double worst_ratio = 0.0;
  bool all_pass() const;
};
RobustnessReport error_robustness(const FrConfig& cfg, const SgParams& sg, const IgParams& ig, double alpha,
                                  double beta, double gamma, const std::vector<double>& e_values,
                                  double delay = 0.0);

// Max |df| over a unit load step for the ideal (filter-free, exact-inverse)
// feedforward, simulated as plant response minus cancellation path.
double ideal_ffc_residual(const LoopSpec& spec, double horizon = 10.0, double dt = 1e-3);

// --- Network mode -----------------------------------------------------------

// Closed loop of the reduced model with the central secondary controller:
// states [z, integral, w, h]; inputs [dI_T (2N) | dFR_ffc (units)].
struct NetworkLoop {
  Mat A;
  Mat B_i;    // states x 2N
  Mat B_ffc;  // states x units
  Mat c_f;    // 1 x states, frequency (pu)
  Mat fr_x;   // units x states, dFR from the secondary loop
  Eigen::Index n_plant = 0;
  std::vector<cd> eig;
  bool stable = false;
};
NetworkLoop network_closed_loop(const MgModel& m, const FrConfig& cfg, const FleetShares& shares, double gain_scale);

// Per-unit filters Q_u(s) = S_u(s)/(s p(s)) so that dFR_ffc = p(s) Q_u(s) on an impulse.
std::vector<RationalTF> ffc_filters(const FrConfig& cfg, const FleetShares& shares,
                                    const std::vector<RationalTF>& t_hat, const std::vector<RationalTF>& v_hat);

// Autonomous feedforward generator for one reconfiguration event: state
// starts at x0 at activation, emits dFR = C x, and the plant receives the
// instantaneous jump `jump` (reduced coordinates) at activation.
struct FfcGenerator {
  Mat A;
  Vec x0;
  Mat C;           // units x gen states
  Vec jump;        // plant state jump
  Vec final_fr;    // limit of the emitted dFR
};
FfcGenerator network_ffc(const MgModel& m, const Vec& dI_T, double D, const std::vector<RationalTF>& filters);

std::string export_controllers_json(const ControllerSet& c);

}  // namespace gridloop
