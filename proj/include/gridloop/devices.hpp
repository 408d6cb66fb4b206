// Linearized device blocks: synchronous generators with governor and
// exciter, inverter-interfaced generators with power and current control,
// ZIP load Jacobians, and the scalar governor / inverter transfer functions.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "gridloop/netmodel.hpp"
#include "gridloop/tfcore.hpp"

namespace gridloop {

struct SgParams {
  double rating = 0.42;  // pu of S_base
  double M = 2.0;        // inertia, s, machine base
  double xd = 2.24, xd1 = 0.17, xd2 = 0.12;
  double xq = 1.02, xq1 = 0.15, xq2 = 0.13;
  double rs = 0.04;
  double td01 = 4.49, td02 = 0.0681, tq01 = 0.85, tq02 = 0.034;
  double ta = 0.02, ka = 200.0;  // exciter
  std::array<double, 6> gov = {0.16, 0.03, 0.017, 0.13, 0.08, 0.031};
  double m = 0.4;    // droop, pu
  double r_f = 0.0;  // ramp limit, pu/s (not used in the linear model)
  void validate() const;
};

struct IgParams {
  double rating = 0.31;  // pu of S_base
  double v_dc = 0.0;     // V (informational)
  double r_f = 1.22;     // filter resistance, ohm
  double l_f = 0.05;     // filter inductance, H
  double p_i = 20.0;     // current PI proportional gain, ohm
  double i_i = 30.0;     // current PI integral gain, ohm/s
  double t_e = 0.03;     // power tracking lag, s
  double t_f = 0.05;     // frequency measurement lag, s
  double k = 5.0;        // inertia-response gain
  double n = 0.1;        // droop, pu
  double t_pll = 0.01;   // angle tracker, s
  double k_v = 20.0;     // reactive voltage droop, pu Q per pu V
  void validate() const;
};

// Prime mover t_g(s) = (sT3+1)/(s^2 T1 T2 + s T1 + 1) * (sT4+1)/((sT5+1)(sT6+1)).
RationalTF governor_tf(const SgParams& p);
// Power tracking v_i(s) = 1/(s T_E + 1).
RationalTF inverter_tf(const IgParams& p);

// Inputs: [dV_d, dV_q, dFR] (network dq voltage deviation, power reference
// deviation on the system base). Outputs of `ss`: injected [dI_d, dI_q].
// `aux` shares A/B and reports [dP_terminal, dP_drive, dP_airgap], where
// drive is mechanical power (SG) or the tracked power reference (IG).
struct DgBlock {
  std::string id;
  std::string node;
  DgKind kind = DgKind::Sg;
  StateSpace ss;
  StateSpace aux;
  std::vector<std::string> labels;
  std::size_t freq_state = 0;   // speed (SG) or measured frequency (IG), pu
  std::size_t angle_state = 0;  // rotor angle (SG) or tracker angle (IG), rad
  double inertia = 0.0;         // M * rating on the system base (0 for IG)
  cd v0, i0;                    // operating point (injected current)

  Eigen::Index states() const { return ss.A.rows(); }
};

DgBlock sg_block(const SgParams& p, cd v0, cd i0, const Bases& bases = {}, std::string id = {},
                 std::string node = {});
DgBlock ig_block(const IgParams& p, cd v0, cd i0, const Bases& bases = {}, std::string id = {},
                 std::string node = {});

// 2x2 Jacobian of the drawn ZIP current with respect to the dq voltage.
Eigen::Matrix2d load_block(const LoadSpec& l, cd v0);

}  // namespace gridloop
