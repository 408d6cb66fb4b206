// Reduced network-coupled microgrid model: network gain, output gains,
// closed state matrix with the rotational reference removed, center-of-inertia
// frequency and the reconfiguration response transfer functions.
#pragma once

#include <string>
#include <vector>

#include "gridloop/devices.hpp"
#include "gridloop/netmodel.hpp"
#include "gridloop/tfcore.hpp"

namespace gridloop {

struct NetworkGain {
  Mat Z;
  double cond = 0.0;
};

// Z = (Y + D_DG - D_L)^-1; throws NumericError when cond > 1e12.
NetworkGain network_gain(const Mat& Y, const Mat& D_DG, const Mat& D_L);

struct OutputGains {
  Mat K_X;  // 1 x n
  Mat K_I;  // 1 x 2N
};

// dP_DG = K_X x + K_I dI_T with
// K_X = V0' C - (V0' D_DG + I0') Z C and K_I = -(V0' D_DG + I0') Z.
OutputGains output_gains(const Vec& V0, const Vec& I_DG0, const Mat& Z, const Mat& C_DG, const Mat& D_DG);

struct AssemblyInput {
  Mat Y;                                // 2N x 2N over the model nodes
  std::vector<Eigen::Matrix2d> D_L;     // per model node
  std::vector<DgBlock> blocks;          // fleet order: SGs then IGs
  std::vector<std::size_t> block_node;  // model-node position of each block
  Vec V0;                               // 2N stacked dq
  bool allow_unstable = false;
};

struct MgModel {
  std::size_t n_nodes = 0;
  Mat Y, D_DG, D_L, Z;
  double cond_z = 0.0;

  // Full-coordinate block-diagonal device matrices.
  Mat A_DG, B_V, B_FR_full, C_DG;
  std::vector<Eigen::Index> block_offset;

  // Reduced coordinates z = P x (reference rotor angle removed), x = T z.
  Mat P, T;
  Mat A_MG;  // n x n
  Mat B_MG;  // n x 2N  (network step injection)
  Mat B_FR;  // n x units (power reference deviation per unit)
  Mat K_X;   // 1 x n
  Mat K_I;   // 1 x 2N
  Mat S_F;   // units x n, frequency-labeled state per unit
  std::vector<double> Mbar;  // center-of-inertia weights per unit (SG only)
  double M_total = 0.0;
  Mat c_f;  // 1 x n, center-of-inertia frequency (pu)

  // dV = V_x z + V_i dI_T + V_fr dFR (V_fr is zero: dFR does not enter currents directly).
  Mat V_x, V_i;
  // Per-unit terminal and drive power: rows = units.
  Mat Pt_x, Pt_i, Pt_fr, Pd_x, Pd_i, Pd_fr;
  Vec V0, I_DG0;
  std::vector<cd> eig;
  bool stable = false;

  Eigen::Index states() const { return A_MG.rows(); }
  std::size_t units() const { return Mbar.size(); }
};

MgModel assemble(const AssemblyInput& in);

// Single-input responses to the unit reconfiguration step along dI_T.
struct NrResponse {
  StateSpace a;  // dP_DG
  StateSpace b;  // df (pu)
  StateSpace p;  // dP_L = a + D b
};

NrResponse nr_response(const MgModel& m, const Vec& dI_T, double D);

}  // namespace gridloop
