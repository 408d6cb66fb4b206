// Scenario engine: per-event linearization of the feeder, piecewise-LTI
// closed-loop simulation with feedforward activation, disturbance traces,
// regulation metrics, the aggregated step study and sensitivity sweeps.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridloop/control.hpp"
#include "gridloop/fixture.hpp"
#include "gridloop/reduction.hpp"

namespace gridloop {

// --- Strategy cases ------------------------------------------------------------

struct CaseGains {
  int id = 1;
  bool ffc = false;          // feedforward enabled
  double sfc_scale = 1.0;    // multiplies P_f and I_f
  double droop_scale = 1.0;  // multiplies the droop reciprocals 1/m and 1/n
  double ire_scale = 1.0;    // multiplies the inertia-response gain K
  std::string label;
};
// 1: proposed; 2: conventional baseline; 3: SFC gains tripled;
// 4: droop reciprocals and inertia-response gain doubled.
CaseGains case_gains(int id);

// --- Linearization -------------------------------------------------------------

struct LinearModel {
  MgModel mg;
  SwitchState sw;
  std::vector<std::size_t> nodes;  // topology index per model node
  std::vector<long> model_index;   // per topology node; -1 when de-energized
  CVec V;                          // operating voltages per topology node (0 when de-energized)
  std::vector<cd> S_dg;            // operating injected power per unit
  Mat Y_full;                      // admittance over all topology nodes
};

// Linear model of the energized part of `sw` around voltages V and unit currents I_dg.
LinearModel linearize(const Fixture& fx, const SwitchState& sw, const CVec& V, const std::vector<cd>& I_dg,
                      const CaseGains& gains, bool allow_unstable = false);

struct EventModel {
  std::string cause;
  OperatingPoint pre;               // power flow of the pre-event topology
  LinearModel model;                // post-event topology at the pre-event point
  Vec dI_T;                         // model rows (2 per model node)
  std::vector<std::size_t> new_nodes;  // newly energized topology nodes
  std::vector<std::size_t> lost_nodes; // de-energized topology nodes
  double restored_p = 0.0;          // load power of newly energized nodes at the assumed voltages, pu
};

EventModel linearize_event(const Fixture& fx, const SwitchState& before, const SwitchState& after,
                           const CaseGains& gains, const std::string& cause = {});

// Injection vector of a 1 pu total load step spread over the energized loads
// in proportion to their nominal power (model rows).
Vec load_step_injection(const Fixture& fx, const LinearModel& lm);

// Single-SG / single-IG aggregate of the fixture fleet: shares summed, first
// SG and first IG stand for their kinds.
LoopSpec fleet_aggregate(const Fixture& fx, double e_g = 0.0, double e_i = 0.0);

// --- Scenario description ------------------------------------------------------

struct SwitchEvent {
  double t = 0.0;
  std::string switch_id;
  bool close = true;
};

struct TraceSpec {
  std::string kind = "load";  // "load" (added demand) or "pv" (added generation)
  double rms = 0.0;           // pu
  double cutoff_hz = 0.05;    // band edge of the synthetic trace
  int components = 64;        // sinusoids in the synthetic trace
  double sample = 0.1;        // knot spacing of the synthetic trace, s
  std::uint64_t seed = 1;
  // Inline (time s, value pu) samples; when present they replace the generator.
  std::vector<std::pair<double, double>> samples;
};

// Piecewise-linear trace through (t, v) knots, held constant outside them.
struct DisturbanceTrace {
  std::string kind;
  std::vector<double> t, v;
  double at(double time) const;
  void validate() const;  // strictly increasing finite times, finite values
};
// Synthetic traces are a seeded sum of sinusoids with frequencies below the
// cutoff, so the band limit holds by construction. A slow raised-cosine
// correction makes the trace start at zero (the initial equilibrium is exact)
// with zero mean over the horizon; the result is scaled to the requested rms
// and PV traces are clamped to +-2 rms.
DisturbanceTrace make_trace(const TraceSpec& spec, double horizon);

struct Scenario {
  std::string name = "scenario";
  std::vector<SwitchEvent> events;  // strictly increasing times
  std::vector<TraceSpec> traces;
  double horizon = 110.0;
  double dt = 2e-4;
  int strategy = 1;
  double delay = 0.0;
  double e_g = 0.0, e_i = 0.0;  // relative errors in the feedforward plant estimates
  bool use_traces = true;
  int output_stride = 50;      // record every n-th step
  double settle_band_hz = 0.02;
  void validate() const;
};

Scenario parse_scenario(const std::string& json_text, const std::string& origin = "scenario");
Scenario load_scenario(const std::string& path);
std::string default_scenario_path();

// --- Results -------------------------------------------------------------------

struct Profiles {
  std::vector<double> t;
  std::vector<double> df_hz;    // center-of-inertia frequency deviation
  std::vector<double> v_min;    // lowest energized node voltage, pu
  std::vector<double> v_mean;   // mean energized node voltage, pu
  std::vector<double> p_m;      // total SG mechanical power, pu
  std::vector<double> p_ig;     // total IG terminal power, pu
  std::vector<double> p_dg;     // total DG terminal power, pu
  std::vector<double> p_trace;  // net trace disturbance (load minus PV), pu
  std::vector<std::vector<double>> v_node;  // per sample, |V| per topology node (0 when de-energized)
};

struct Metrics {
  double df_pk_hz = 0.0;   // largest |df|
  double df_rms_hz = 0.0;  // rms frequency deviation
  double t_set_s = 0.0;    // longest settling time over the event windows
  double dp_m_rms = 0.0;   // rms of total SG mechanical power about its initial value
  double dp_ig_rms = 0.0;  // rms of total IG power about its initial value
};

struct WindowStat {
  double t_event = 0.0;
  std::string cause;
  double df_end_hz = 0.0;   // frequency deviation at the end of the window
  double df_peak_hz = 0.0;  // largest |df| in the window
  double t_set_s = 0.0;
  double restored_p = 0.0;
  std::size_t nodes_changed = 0;  // nodes energized or de-energized by the event
  double p0_model = 0.0;    // DC gain of the reconfiguration response, pu
  double dp_flow = 0.0;     // power-flow change of load plus losses, pu
  bool stable = true;
  double spectral_abscissa = 0.0;
};

struct RunResult {
  Profiles prof;
  std::vector<WindowStat> windows;
  Metrics metrics;
  double max_network_residual = 0.0;  // reconstructed network equation residual
  std::vector<std::string> warnings;
  std::size_t steps = 0;
};

RunResult run_scenario(const Fixture& fx, const Scenario& sc);

// Settling: time from each event until df stays within the band around the
// window's final value. Windows run from each event to the next.
Metrics compute_metrics(const Profiles& p, const std::vector<double>& event_times, double band_hz = 0.02);

// --- Aggregated step study -----------------------------------------------------

struct StepStudy {
  Profiles prof;  // only t and df_hz are filled
  Metrics metrics;
};
// Step of size dp (pu) applied to the aggregated loop with the case gains.
StepStudy aggregated_step(const FrConfig& cfg, const SgParams& sg, const IgParams& ig, double alpha, double beta,
                          double gamma, int case_id, double dp, double horizon = 10.0, double dt = 1e-3,
                          double delay = 0.0, double f0 = 60.0);

// --- Sensitivity sweep ---------------------------------------------------------

struct SweepCell {
  double e = 0.0, delay = 0.0;
  Metrics m;
  double pk_ratio = 0.0, rms_ratio = 0.0;
};
struct SweepResult {
  Metrics baseline;  // conventional case (independent of e and delay)
  std::vector<SweepCell> cells;
  bool all_below_one() const;
};
SweepResult sensitivity_sweep(const Fixture& fx, const Scenario& sc, const std::vector<double>& errors,
                              const std::vector<double>& delays, int jobs = 1);

}  // namespace gridloop
