// Reconfigurable network: nodes, dq line admittances, switches, admittance
// matrices, Newton-Raphson operating point and the topology-change step
// injection.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridloop/tfcore.hpp"

namespace gridloop {

struct Bases {
  double s_base = 1e6;    // VA
  double v_base = 4.8e3;  // V line-to-line
  double f0 = 60.0;       // Hz
  double z_base() const { return v_base * v_base / s_base; }
  double omega_b() const { return 2.0 * M_PI * f0; }
};

// y = G + jB rendered as [[G, -B], [B, G]].
struct AdmittanceBlock {
  double G = 0.0;
  double B = 0.0;
  cd y() const { return {G, B}; }
  Eigen::Matrix2d block() const {
    Eigen::Matrix2d m;
    m << G, -B, B, G;
    return m;
  }
  static AdmittanceBlock from_impedance(double r, double x);
};

struct Line {
  std::string from, to;
  AdmittanceBlock y;
  std::string switch_id;  // empty = not switchable
};

struct NetworkTopology {
  std::vector<std::string> nodes;
  std::vector<Line> lines;
  Bases bases;

  std::size_t size() const { return nodes.size(); }
  std::size_t index(const std::string& node) const;  // throws InputError
  std::vector<std::string> switch_ids() const;
  void validate() const;
};

// switch_id -> closed?
using SwitchState = std::map<std::string, bool>;

void validate_switch_state(const NetworkTopology& topo, const SwitchState& sw);
bool line_closed(const Line& l, const SwitchState& sw);

// 2N x 2N block form: Y_jj = -sum y_jk, Y_jk = +y_jk.
Mat build_admittance(const NetworkTopology& topo, const SwitchState& sw);
// Same matrix in complex N x N form.
CMat build_admittance_complex(const NetworkTopology& topo, const SwitchState& sw);

struct LoadSpec {
  std::string id;
  std::string node;
  double p0 = 0.0;  // pu
  double q0 = 0.0;  // pu
  // ZIP fractions (constant impedance, current, power); each set sums to 1.
  double zp = 1.0, ip = 0.0, pp = 0.0;
  double zq = 1.0, iq = 0.0, pq = 0.0;
  void validate() const;
  // Drawn complex power and current at complex voltage v (pu).
  cd power(cd v) const;
  cd current(cd v) const;
};

enum class DgKind { Sg, Ig };

struct DgSetpoint {
  std::string id;
  std::string node;
  DgKind kind = DgKind::Sg;
  double p_sched = 0.0;  // pu, before slack share
  double v_set = 1.0;    // pu terminal magnitude
  double participation = 0.0;  // distributed-slack share
  double rating = 0.0;   // pu of S_base
};

struct PowerFlowOptions {
  int max_iter = 50;
  double tol = 1e-10;
  bool distributed_slack = true;  // else the angle-reference DG takes all imbalance
  // When true only the reference bus holds its voltage; every DG supplies a
  // rating-proportional share of the total reactive demand.
  bool reactive_sharing = false;
};

struct OperatingPoint {
  CVec V;                       // per node; 0 on de-energized nodes
  std::vector<bool> energized;  // per node
  CVec I_node;                  // Y V (current drawn from the network per node)
  std::vector<cd> S_dg;         // per DG, injected
  std::vector<cd> I_dg;         // per DG, injected current
  std::vector<cd> S_load;       // per load, drawn
  double losses = 0.0;          // line losses, pu
  int iterations = 0;
  double residual = 0.0;
  std::size_t ref_dg = 0;

  // Stacked dq real vector of node voltages.
  Vec v_dq() const;
};

struct CapacityShortfall : InputError {
  using InputError::InputError;
};

// Nodes with a closed path to at least one DG node.
std::vector<bool> energized_nodes(const NetworkTopology& topo, const SwitchState& sw,
                                  const std::vector<DgSetpoint>& dgs);

OperatingPoint solve_operating_point(const NetworkTopology& topo, const SwitchState& sw,
                                     const std::vector<LoadSpec>& loads, const std::vector<DgSetpoint>& dgs,
                                     const PowerFlowOptions& opt = {});

struct DeltaInjection {
  Vec dI_T;             // 2N stacked dq
  std::string cause;    // e.g. "TSW4 -> closed"
  std::vector<std::size_t> touched_nodes;
};

// Step injection: dI_T = (Y_A - Y_B) V0.
DeltaInjection delta_injection(const Mat& Y_B, const Mat& Y_A, const Vec& V0, std::string cause = {});

// Complex <-> stacked dq helpers.
Vec to_dq(const CVec& v);
CVec from_dq(const Vec& v);

}  // namespace gridloop
