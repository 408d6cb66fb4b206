#include "gridloop/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <queue>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace gridloop {

namespace {

bool on_grid(double t, double dt) {
  const double k = std::round(t / dt);
  return std::abs(k * dt - t) <= 1e-9 * std::max(1.0, t);
}

cd load_current_at(const Fixture& fx, std::size_t node, cd v) {
  cd i = 0.0;
  for (const LoadSpec& l : fx.loads)
    if (fx.topo.index(l.node) == node) i += l.current(v);
  return i;
}

Mat restrict_rows(const Mat& m, const std::vector<std::size_t>& nodes) {
  Mat out(2 * static_cast<Eigen::Index>(nodes.size()), m.cols());
  for (std::size_t k = 0; k < nodes.size(); ++k)
    out.middleRows(2 * static_cast<Eigen::Index>(k), 2) = m.middleRows(2 * static_cast<Eigen::Index>(nodes[k]), 2);
  return out;
}

double rms(const std::vector<double>& v, double offset) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - offset) * (x - offset);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

// Unit-power trace injection vectors over the model nodes: drawn current per pu of load trace / PV trace.
void trace_vectors(const Fixture& fx, const LinearModel& lm, Vec& b_load, Vec& b_pv) {
  const auto n2 = static_cast<Eigen::Index>(2 * lm.nodes.size());
  b_load = Vec::Zero(n2);
  b_pv = Vec::Zero(n2);
  double p_total = 0.0;
  for (const LoadSpec& l : fx.loads)
    if (lm.model_index[fx.topo.index(l.node)] >= 0) p_total += l.p0;
  if (p_total > 0.0)
    for (const LoadSpec& l : fx.loads) {
      const std::size_t j = fx.topo.index(l.node);
      const long m = lm.model_index[j];
      if (m < 0) continue;
      const cd i = (l.p0 / p_total) / std::conj(lm.V(static_cast<Eigen::Index>(j)));
      b_load(2 * m) += i.real();
      b_load(2 * m + 1) += i.imag();
    }
  std::vector<std::size_t> pv;
  for (const std::string& s : fx.pv_nodes) {
    const std::size_t j = fx.topo.index(s);
    if (lm.model_index[j] >= 0) pv.push_back(j);
  }
  for (std::size_t j : pv) {
    const long m = lm.model_index[j];
    const cd i = -(1.0 / static_cast<double>(pv.size())) / std::conj(lm.V(static_cast<Eigen::Index>(j)));
    b_pv(2 * m) += i.real();
    b_pv(2 * m + 1) += i.imag();
  }
}

std::vector<RationalTF> estimate_filters(const Fixture& fx, const FrConfig& cfg, double e_g, double e_i) {
  std::vector<RationalTF> t_hat, v_hat;
  for (const DgUnit& d : fx.dgs) {
    if (d.kind == DgKind::Sg) {
      SgParams p = d.sg;
      p.gov[0] *= 1.0 + e_g;
      t_hat.push_back(governor_tf(p));
    } else {
      IgParams p = d.ig;
      p.t_e *= 1.0 + e_i;
      v_hat.push_back(inverter_tf(p));
    }
  }
  return ffc_filters(cfg, fx.shares(), t_hat, v_hat);
}

double total_dg_power(const OperatingPoint& op) {
  double p = 0.0;
  for (const cd& s : op.S_dg) p += s.real();
  return p;
}

}  // namespace

CaseGains case_gains(int id) {
  CaseGains g;
  g.id = id;
  switch (id) {
    case 1:
      g.ffc = true;
      g.label = "proposed (feedforward + feedback)";
      break;
    case 2:
      g.label = "conventional baseline";
      break;
    case 3:
      g.sfc_scale = 3.0;
      g.label = "conventional, secondary gains x3";
      break;
    case 4:
      g.droop_scale = 2.0;
      g.ire_scale = 2.0;
      g.label = "conventional, droop reciprocals and inertia gain x2";
      break;
    default:
      throw InputError("strategy case must be 1, 2, 3 or 4 (got " + std::to_string(id) + ")");
  }
  return g;
}

// ---------------------------------------------------------------- linearization

LinearModel linearize(const Fixture& fx, const SwitchState& sw, const CVec& V, const std::vector<cd>& I_dg,
                      const CaseGains& gains, bool allow_unstable) {
  const NetworkTopology& topo = fx.topo;
  const std::size_t N = topo.size();
  if (static_cast<std::size_t>(V.size()) != N) throw InputError("linearize: voltage vector size mismatch");
  if (I_dg.size() != fx.dgs.size()) throw InputError("linearize: unit current count mismatch");
  const std::vector<bool> on = energized_nodes(topo, sw, fx.setpoints());

  LinearModel lm;
  lm.sw = sw;
  lm.V = V;
  lm.model_index.assign(N, -1);
  for (std::size_t i = 0; i < N; ++i)
    if (on[i]) {
      lm.model_index[i] = static_cast<long>(lm.nodes.size());
      lm.nodes.push_back(i);
      if (std::abs(V(static_cast<Eigen::Index>(i))) < 1e-6)
        throw InputError("linearize: energized node '" + topo.nodes[i] + "' has no operating voltage");
    } else {
      lm.V(static_cast<Eigen::Index>(i)) = 0.0;
    }
  lm.Y_full = build_admittance(topo, sw);
  const auto n = static_cast<Eigen::Index>(lm.nodes.size());

  AssemblyInput in;
  in.Y = Mat(2 * n, 2 * n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      in.Y.block(2 * a, 2 * b, 2, 2) = lm.Y_full.block(2 * static_cast<Eigen::Index>(lm.nodes[static_cast<std::size_t>(a)]),
                                                       2 * static_cast<Eigen::Index>(lm.nodes[static_cast<std::size_t>(b)]), 2, 2);
  in.D_L.assign(static_cast<std::size_t>(n), Eigen::Matrix2d::Zero());
  for (const LoadSpec& l : fx.loads) {
    const std::size_t j = topo.index(l.node);
    const long m = lm.model_index[j];
    if (m >= 0) in.D_L[static_cast<std::size_t>(m)] += load_block(l, V(static_cast<Eigen::Index>(j)));
  }
  in.V0 = Vec(2 * n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const cd v = V(static_cast<Eigen::Index>(lm.nodes[static_cast<std::size_t>(a)]));
    in.V0(2 * a) = v.real();
    in.V0(2 * a + 1) = v.imag();
  }
  for (std::size_t u = 0; u < fx.dgs.size(); ++u) {
    const DgUnit& d = fx.dgs[u];
    const std::size_t j = topo.index(d.node);
    if (lm.model_index[j] < 0) throw InputError("linearize: unit '" + d.id + "' is not energized");
    const cd v0 = V(static_cast<Eigen::Index>(j));
    if (d.kind == DgKind::Sg) {
      SgParams p = d.sg;
      p.m /= gains.droop_scale;
      in.blocks.push_back(sg_block(p, v0, I_dg[u], topo.bases, d.id, d.node));
    } else {
      IgParams p = d.ig;
      p.n /= gains.droop_scale;
      p.k *= gains.ire_scale;
      in.blocks.push_back(ig_block(p, v0, I_dg[u], topo.bases, d.id, d.node));
    }
    in.block_node.push_back(static_cast<std::size_t>(lm.model_index[j]));
    lm.S_dg.push_back(v0 * std::conj(I_dg[u]));
  }
  in.allow_unstable = allow_unstable;
  lm.mg = assemble(in);
  return lm;
}

EventModel linearize_event(const Fixture& fx, const SwitchState& before, const SwitchState& after,
                           const CaseGains& gains, const std::string& cause) {
  const NetworkTopology& topo = fx.topo;
  const auto dgs = fx.setpoints();
  EventModel em;
  em.cause = cause;
  em.pre = solve_operating_point(topo, before, fx.loads, dgs, fx.pf_options());
  validate_switch_state(topo, after);
  const std::vector<bool>& was = em.pre.energized;
  const std::vector<bool> now = energized_nodes(topo, after, dgs);

  // Newly energized nodes take the voltage of the node they are reached from.
  CVec Vp = em.pre.V;
  std::vector<std::vector<std::size_t>> adj(topo.size());
  for (const Line& l : topo.lines)
    if (line_closed(l, after)) {
      adj[topo.index(l.from)].push_back(topo.index(l.to));
      adj[topo.index(l.to)].push_back(topo.index(l.from));
    }
  std::vector<bool> seen(topo.size(), false);
  std::queue<std::size_t> q;
  for (std::size_t i = 0; i < topo.size(); ++i) {
    if (was[i] && now[i]) {
      seen[i] = true;
      q.push(i);
    }
    if (was[i] && !now[i]) {
      em.lost_nodes.push_back(i);
      Vp(static_cast<Eigen::Index>(i)) = 0.0;
    }
  }
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v : adj[u])
      if (!seen[v] && now[v]) {
        seen[v] = true;
        Vp(static_cast<Eigen::Index>(v)) = Vp(static_cast<Eigen::Index>(u));
        em.new_nodes.push_back(v);
        q.push(v);
      }
  }
  std::sort(em.new_nodes.begin(), em.new_nodes.end());

  em.model = linearize(fx, after, Vp, em.pre.I_dg, gains);
  const Mat Y_B = build_admittance(topo, before);
  // Lost nodes keep their pre-event voltage here so the opened branch carries its pre-event current.
  CVec Vr = em.model.V;
  for (std::size_t j : em.lost_nodes) Vr(static_cast<Eigen::Index>(j)) = em.pre.V(static_cast<Eigen::Index>(j));
  const Vec vd = to_dq(Vr);
  Vec r = (em.model.Y_full - Y_B) * vd;
  const Vec ya = em.model.Y_full * vd;
  for (std::size_t j : em.new_nodes) {
    const cd il = load_current_at(fx, j, Vp(static_cast<Eigen::Index>(j)));
    const auto o = 2 * static_cast<Eigen::Index>(j);
    r(o) = ya(o) - il.real();
    r(o + 1) = ya(o + 1) - il.imag();
    for (const LoadSpec& l : fx.loads)
      if (topo.index(l.node) == j) em.restored_p += l.power(Vp(static_cast<Eigen::Index>(j))).real();
  }
  em.dI_T = restrict_rows(r, em.model.nodes);
  return em;
}

Vec load_step_injection(const Fixture& fx, const LinearModel& lm) {
  Vec b_load, b_pv;
  trace_vectors(fx, lm, b_load, b_pv);
  return b_load;
}

LoopSpec fleet_aggregate(const Fixture& fx, double e_g, double e_i) {
  const FleetShares sh = fx.shares();
  double a = 0.0, b = 0.0, g = 0.0;
  for (double v : sh.alpha) a += v;
  for (double v : sh.beta) b += v;
  for (double v : sh.gamma) g += v;
  const DgUnit* sg = nullptr;
  const DgUnit* ig = nullptr;
  for (const DgUnit& d : fx.dgs) {
    if (d.kind == DgKind::Sg && !sg) sg = &d;
    if (d.kind == DgKind::Ig && !ig) ig = &d;
  }
  if (!sg) throw InputError("fleet aggregate needs at least one SG");
  return aggregate_spec(fx.cfg, sg->sg, ig ? ig->ig : IgParams{}, a, b, g, e_g, e_i);
}

// ---------------------------------------------------------------- scenario I/O

double DisturbanceTrace::at(double time) const {
  if (t.empty()) return 0.0;
  if (time <= t.front()) return v.front();
  if (time >= t.back()) return v.back();
  const auto k = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), time) - t.begin()) - 1;
  const double w = (time - t[k]) / (t[k + 1] - t[k]);
  return (1.0 - w) * v[k] + w * v[k + 1];
}

void DisturbanceTrace::validate() const {
  if (kind != "load" && kind != "pv") throw InputError("trace kind must be \"load\" or \"pv\"");
  if (t.size() != v.size()) throw InputError("trace time and value counts differ");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i]) || !std::isfinite(v[i])) throw InputError("trace samples must be finite");
    if (i > 0 && !(t[i] > t[i - 1])) throw InputError("trace sample times must be strictly increasing");
  }
}

DisturbanceTrace make_trace(const TraceSpec& spec, double horizon) {
  DisturbanceTrace tr;
  tr.kind = spec.kind;
  if (!spec.samples.empty()) {
    for (const auto& [time, value] : spec.samples) {
      tr.t.push_back(time);
      tr.v.push_back(value);
    }
    tr.validate();
    return tr;
  }
  if (spec.kind != "load" && spec.kind != "pv") throw InputError("trace kind must be \"load\" or \"pv\"");
  if (!(spec.rms >= 0.0) || !(spec.cutoff_hz > 0.0) || !(spec.sample > 0.0) || !(horizon > 0.0) ||
      spec.components < 1)
    throw InputError("trace rms must be nonnegative; cutoff, sample, components and horizon positive");
  const auto n = static_cast<std::size_t>(std::ceil(horizon / spec.sample)) + 1;
  tr.t.resize(n);
  tr.v.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) tr.t[i] = static_cast<double>(i) * spec.sample;
  if (spec.rms == 0.0) return tr;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int c = 0; c < spec.components; ++c) {
    const double f = spec.cutoff_hz * (1.0 - unit(rng));  // (0, cutoff]
    const double a = gauss(rng);
    for (std::size_t i = 0; i < n; ++i) tr.v[i] += a * std::sin(2.0 * M_PI * f * tr.t[i]);
  }
  // Raised-cosine ramp over one cutoff period (inside the band) absorbs the mean.
  const double ramp = std::min(1.0 / spec.cutoff_hz, horizon);
  std::vector<double> w(n);
  double mean_v = 0.0, mean_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = tr.t[i] >= ramp ? 1.0 : 0.5 * (1.0 - std::cos(M_PI * tr.t[i] / ramp));
    mean_v += tr.v[i];
    mean_w += w[i];
  }
  const double c = mean_v / mean_w;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tr.v[i] -= c * w[i];
    var += tr.v[i] * tr.v[i];
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  const double scale = sd > 0.0 ? spec.rms / sd : 0.0;
  for (double& x : tr.v) {
    x *= scale;
    if (spec.kind == "pv") x = std::clamp(x, -2.0 * spec.rms, 2.0 * spec.rms);
  }
  return tr;
}

void Scenario::validate() const {
  if (!(dt > 0.0) || !(horizon > 0.0)) throw InputError("scenario dt and horizon must be positive");
  if (horizon / dt > 5e7) throw InputError("scenario needs more than 5e7 steps; increase dt");
  if (!on_grid(horizon, dt)) throw InputError("scenario horizon must be a multiple of dt");
  case_gains(strategy);
  if (!(delay >= 0.0)) throw InputError("feedforward delay must be nonnegative");
  if (!(1.0 + e_g > 0.0) || !(1.0 + e_i > 0.0)) throw InputError("estimate errors must satisfy 1 + e > 0");
  if (output_stride < 1) throw InputError("output stride must be at least 1");
  if (!(settle_band_hz > 0.0)) throw InputError("settling band must be positive");
  double prev = 0.0;
  for (const SwitchEvent& e : events) {
    if (!(e.t > prev) || !(e.t < horizon))
      throw InputError("event times must be strictly increasing inside (0, horizon)");
    if (!on_grid(e.t, dt)) throw InputError("event time " + std::to_string(e.t) + " is not a multiple of dt");
    prev = e.t;
  }
}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(origin + ": malformed JSON: " + e.what());
  }
  auto need_num = [&](const json& o, const char* key, const std::string& path) {
    if (!o.contains(key) || !o[key].is_number()) throw InputError(origin + ": field '" + path + key + "' must be a number");
    return o[key].get<double>();
  };
  Scenario s;
  try {
    s.name = j.value("name", s.name);
    s.horizon = j.value("horizon_s", s.horizon);
    s.dt = j.value("dt_s", s.dt);
    s.strategy = j.value("case", s.strategy);
    s.delay = j.value("delay_s", s.delay);
    s.e_g = j.value("e_g", s.e_g);
    s.e_i = j.value("e_i", s.e_i);
    s.use_traces = j.value("use_traces", s.use_traces);
    s.output_stride = j.value("output_stride", s.output_stride);
    s.settle_band_hz = j.value("settle_band_hz", s.settle_band_hz);
  } catch (const json::exception& e) {
    throw InputError(origin + ": " + e.what());
  }
  if (j.contains("events")) {
    if (!j["events"].is_array()) throw InputError(origin + ": field 'events' must be an array");
    for (std::size_t i = 0; i < j["events"].size(); ++i) {
      const json& e = j["events"][i];
      const std::string p = "events[" + std::to_string(i) + "].";
      SwitchEvent ev;
      ev.t = need_num(e, "t_s", p);
      if (!e.contains("switch") || !e["switch"].is_string())
        throw InputError(origin + ": field '" + p + "switch' must be a string");
      ev.switch_id = e["switch"].get<std::string>();
      const std::string act = e.value("action", std::string());
      if (act != "open" && act != "close") throw InputError(origin + ": field '" + p + "action' must be open or close");
      ev.close = act == "close";
      s.events.push_back(ev);
    }
  }
  if (j.contains("traces")) {
    if (!j["traces"].is_array()) throw InputError(origin + ": field 'traces' must be an array");
    for (std::size_t i = 0; i < j["traces"].size(); ++i) {
      const json& e = j["traces"][i];
      const std::string p = "traces[" + std::to_string(i) + "].";
      TraceSpec t;
      t.kind = e.value("kind", t.kind);
      if (e.contains("samples")) {
        const json& smp = e["samples"];
        if (!smp.is_array()) throw InputError(origin + ": field '" + p + "samples' must be an array of [t, value]");
        for (std::size_t q = 0; q < smp.size(); ++q) {
          if (!smp[q].is_array() || smp[q].size() != 2 || !smp[q][0].is_number() || !smp[q][1].is_number())
            throw InputError(origin + ": field '" + p + "samples[" + std::to_string(q) + "]' must be [t, value]");
          t.samples.emplace_back(smp[q][0].get<double>(), smp[q][1].get<double>());
        }
      } else {
        t.rms = need_num(e, "rms_pu", p);
        t.cutoff_hz = e.value("cutoff_hz", t.cutoff_hz);
        t.components = e.value("components", t.components);
        t.sample = e.value("sample_s", t.sample);
        t.seed = e.value("seed", t.seed);
      }
      try {
        make_trace(t, 1.0);
      } catch (const InputError& ex) {
        throw InputError(origin + ": " + p + " " + ex.what());
      }
      s.traces.push_back(t);
    }
  }
  try {
    s.validate();
  } catch (const InputError& e) {
    throw InputError(origin + ": " + e.what());
  }
  return s;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(read_text_file(path), path); }

std::string default_scenario_path() { return data_dir() + "/restoration_scenario.json"; }

// ---------------------------------------------------------------- simulation

namespace {

struct SegmentOutputs {
  const LinearModel* lm = nullptr;
  const NetworkLoop* loop = nullptr;
  Vec dI, b_load, b_pv;
  std::vector<std::size_t> sg_units, ig_units;
  double p_m_op = 0.0, p_ig_op = 0.0, p_dg_op = 0.0;
  Mat S_net;  // Y + D_DG - D_L
};

}  // namespace

RunResult run_scenario(const Fixture& fx, const Scenario& sc) {
  sc.validate();
  const CaseGains gains = case_gains(sc.strategy);
  const NetworkTopology& topo = fx.topo;
  FrConfig cfg = fx.cfg;
  cfg.p_f *= gains.sfc_scale;
  cfg.i_f *= gains.sfc_scale;
  const FleetShares shares = fx.shares();
  const double f0 = topo.bases.f0;
  const std::vector<RationalTF> filters =
      gains.ffc ? estimate_filters(fx, fx.cfg, sc.e_g, sc.e_i) : std::vector<RationalTF>{};

  std::vector<DisturbanceTrace> loads_tr, pvs_tr;
  if (sc.use_traces)
    for (const TraceSpec& t : sc.traces) (t.kind == "load" ? loads_tr : pvs_tr).push_back(make_trace(t, sc.horizon));
  auto trace_sum = [](const std::vector<DisturbanceTrace>& v, double t) {
    double s = 0.0;
    for (const DisturbanceTrace& d : v) s += d.at(t);
    return s;
  };

  RunResult res;
  std::vector<double> bounds{0.0};
  for (const SwitchEvent& e : sc.events) bounds.push_back(e.t);
  bounds.push_back(sc.horizon);

  SwitchState sw = fx.initial;
  const OperatingPoint op0 = solve_operating_point(topo, sw, fx.loads, fx.setpoints(), fx.pf_options());
  LinearModel lm = linearize(fx, sw, op0.V, op0.I_dg, gains);
  Vec dI = Vec::Zero(lm.mg.B_MG.cols());

  Vec x;                      // closed-loop state (plant + secondary loop)
  Vec x_ss_prev;              // steady state of the previous segment
  std::size_t global_step = 0;
  bool warned_voltage = false;

  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    const double t0 = bounds[k], t1 = bounds[k + 1];
    WindowStat ws;
    ws.t_event = t0;
    ws.cause = "initial";
    if (k > 0) {
      const SwitchEvent& ev = sc.events[k - 1];
      SwitchState after = sw;
      if (!after.count(ev.switch_id)) throw InputError("scenario names unknown switch '" + ev.switch_id + "'");
      after[ev.switch_id] = ev.close;
      ws.cause = ev.switch_id + (ev.close ? " close" : " open");
      x -= x_ss_prev;
      EventModel em = linearize_event(fx, sw, after, gains, ws.cause);
      ws.restored_p = em.restored_p;
      ws.nodes_changed = em.new_nodes.size() + em.lost_nodes.size();
      const NrResponse nr = nr_response(em.model.mg, em.dI_T, cfg.D);
      const Vec xs = em.model.mg.A_MG.partialPivLu().solve(nr.p.B.col(0));
      ws.p0_model = -(nr.p.C * xs)(0) + nr.p.D(0, 0);
      try {
        const OperatingPoint post = solve_operating_point(topo, after, fx.loads, fx.setpoints(), fx.pf_options());
        ws.dp_flow = total_dg_power(post) - total_dg_power(em.pre);
      } catch (const std::exception& e) {
        res.warnings.push_back("post-event power flow for " + ws.cause + " failed: " + e.what());
      }
      lm = std::move(em.model);
      dI = em.dI_T;
      sw = after;
    }

    const NetworkLoop loop = network_closed_loop(lm.mg, cfg, shares, fx.sfc_gain_scale);
    ws.stable = loop.stable;
    ws.spectral_abscissa = spectral_abscissa(loop.eig);
    if (!loop.stable) {
      std::ostringstream os;
      os << "closed loop after '" << ws.cause << "' is unstable (spectral abscissa " << ws.spectral_abscissa << ")";
      throw NumericError(os.str());
    }
    double rho = 0.0;
    for (const cd& l : loop.eig) rho = std::max(rho, std::abs(l));
    if (rho * sc.dt > 2.5) {
      std::ostringstream os;
      os << "time step " << sc.dt << " s exceeds the RK4 stability limit for the fastest mode (|lambda| = " << rho
         << ")";
      throw NumericError(os.str());
    }
    const Eigen::Index N = loop.A.rows(), n = loop.n_plant;
    if (x.size() == 0) x = Vec::Zero(N);
    if (x.size() != N) throw NumericError("closed-loop dimension changed across an event");

    SegmentOutputs so;
    so.lm = &lm;
    so.loop = &loop;
    so.dI = dI;
    trace_vectors(fx, lm, so.b_load, so.b_pv);
    for (std::size_t u = 0; u < fx.dgs.size(); ++u) {
      (fx.dgs[u].kind == DgKind::Sg ? so.sg_units : so.ig_units).push_back(u);
      so.p_dg_op += lm.S_dg[u].real();
    }
    for (std::size_t u : so.sg_units) so.p_m_op += lm.S_dg[u].real();
    for (std::size_t u : so.ig_units) so.p_ig_op += lm.S_dg[u].real();
    so.S_net = lm.mg.Y + lm.mg.D_DG - lm.mg.D_L;

    Mat Bu(N, 3);
    Bu.col(0) = loop.B_i * dI;
    Bu.col(1) = loop.B_i * so.b_load;
    Bu.col(2) = loop.B_i * so.b_pv;
    const double step_on = k > 0 ? 1.0 : 0.0;
    const Rk4Propagator plain(loop.A, Bu, sc.dt);

    const bool with_ffc = gains.ffc && k > 0 && dI.norm() > 0.0;
    FfcGenerator gen;
    Mat Ac, Bc;
    Rk4Propagator comb;
    Eigen::Index ng = 0;
    if (with_ffc) {
      gen = network_ffc(lm.mg, dI, cfg.D, filters);
      ng = gen.A.rows();
      Ac = Mat::Zero(N + ng, N + ng);
      Ac.topLeftCorner(N, N) = loop.A;
      Ac.topRightCorner(N, ng) = loop.B_ffc * gen.C;
      Ac.bottomRightCorner(ng, ng) = gen.A;
      Bc = Mat::Zero(N + ng, 3);
      Bc.topRows(N) = Bu;
      comb = Rk4Propagator(Ac, Bc, sc.dt);
    }
    const double t_act = t0 + sc.delay;
    bool active = false;

    Vec y = x, ybuf;
    auto inputs = [&](double t, double* u) {
      u[0] = step_on;
      u[1] = trace_sum(loads_tr, t);
      u[2] = trace_sum(pvs_tr, t);
    };
    auto activate = [&]() {
      Vec ext = Vec::Zero(N + ng);
      ext.head(N) = y;
      ext.head(n) += gen.jump;
      ext.tail(ng) = gen.x0;
      y = ext;
      active = true;
    };
    auto record = [&](double t) {
      double u[3];
      inputs(t, u);
      const Vec z = y.head(n);
      Vec fr = loop.fr_x * y.head(N);
      if (active) fr += gen.C * y.tail(ng);
      const Vec dIt = so.dI * u[0] + so.b_load * u[1] + so.b_pv * u[2];
      const Vec dV = lm.mg.V_x * z + lm.mg.V_i * dIt;
      const Vec resid = so.S_net * dV + lm.mg.C_DG * (lm.mg.T * z) + dIt;
      res.max_network_residual = std::max(res.max_network_residual, resid.cwiseAbs().maxCoeff());
      double vmin = 1e9, vsum = 0.0;
      std::vector<double> vnode(topo.size(), 0.0);
      for (std::size_t a = 0; a < lm.nodes.size(); ++a) {
        const cd v0 = lm.V(static_cast<Eigen::Index>(lm.nodes[a]));
        const double vm = std::abs(v0 + cd(dV(2 * static_cast<Eigen::Index>(a)), dV(2 * static_cast<Eigen::Index>(a) + 1)));
        vnode[lm.nodes[a]] = vm;
        vmin = std::min(vmin, vm);
        vsum += vm;
      }
      double pm = so.p_m_op, pig = so.p_ig_op;
      for (std::size_t u2 : so.sg_units) {
        const auto r = static_cast<Eigen::Index>(u2);
        pm += (lm.mg.Pd_x.row(r) * z)(0) + (lm.mg.Pd_i.row(r) * dIt)(0) + lm.mg.Pd_fr(r, r) * fr(r);
      }
      for (std::size_t u2 : so.ig_units) {
        const auto r = static_cast<Eigen::Index>(u2);
        pig += (lm.mg.Pt_x.row(r) * z)(0) + (lm.mg.Pt_i.row(r) * dIt)(0) + lm.mg.Pt_fr(r, r) * fr(r);
      }
      const double pdg = so.p_dg_op + (lm.mg.K_X * z)(0) + (lm.mg.K_I * dIt)(0);
      Profiles& p = res.prof;
      p.t.push_back(t);
      p.df_hz.push_back((lm.mg.c_f * z)(0) * f0);
      p.v_min.push_back(vmin);
      p.v_mean.push_back(vsum / static_cast<double>(lm.nodes.size()));
      p.p_m.push_back(pm);
      p.p_ig.push_back(pig);
      p.p_dg.push_back(pdg);
      p.p_trace.push_back(u[1] - u[2]);
      p.v_node.push_back(std::move(vnode));
      if (!warned_voltage && (vmin < 0.95 || vmin > 1.05)) {
        std::ostringstream os;
        os << "voltage " << vmin << " pu outside [0.95, 1.05] at t = " << t << " s";
        res.warnings.push_back(os.str());
        warned_voltage = true;
      }
    };

    const auto steps = static_cast<std::size_t>(std::llround((t1 - t0) / sc.dt));
    const std::size_t first_sample = res.prof.t.size();
    if (with_ffc && sc.delay == 0.0) activate();
    if (k == 0) record(t0);
    double u0[3], um[3], u1[3];
    for (std::size_t i = 0; i < steps; ++i) {
      const double t = t0 + static_cast<double>(i) * sc.dt;
      const double tn = t + sc.dt;
      if (with_ffc && !active && t_act < tn - 1e-12) {
        // Activation falls inside this step: split it.
        const double h1 = t_act - t;
        if (h1 > 1e-12) {
          inputs(t, u0);
          inputs(t + 0.5 * h1, um);
          inputs(t_act, u1);
          y = rk4_step(loop.A, Bu, y, Eigen::Map<Vec>(u0, 3), Eigen::Map<Vec>(um, 3), Eigen::Map<Vec>(u1, 3), h1);
        }
        activate();
        const double h2 = tn - t_act;
        if (h2 > 1e-12) {
          inputs(t_act, u0);
          inputs(t_act + 0.5 * h2, um);
          inputs(tn, u1);
          y = rk4_step(Ac, Bc, y, Eigen::Map<Vec>(u0, 3), Eigen::Map<Vec>(um, 3), Eigen::Map<Vec>(u1, 3), h2);
        }
      } else {
        inputs(t, u0);
        inputs(t + 0.5 * sc.dt, um);
        inputs(tn, u1);
        ybuf.resize(y.size());
        (active ? comb : plain).step(y.data(), u0, um, u1, ybuf.data());
        std::swap(y, ybuf);
      }
      ++global_step;
      if (global_step % static_cast<std::size_t>(sc.output_stride) == 0 || i + 1 == steps) record(tn);
      if (!y.allFinite()) throw NumericError("simulation diverged at t = " + std::to_string(tn) + " s");
    }
    res.steps = global_step;

    // Window statistics.
    ws.df_end_hz = res.prof.df_hz.back();
    for (std::size_t s = first_sample; s < res.prof.t.size(); ++s)
      ws.df_peak_hz = std::max(ws.df_peak_hz, std::abs(res.prof.df_hz[s]));
    ws.t_set_s = 0.0;
    for (std::size_t s = res.prof.t.size(); s-- > first_sample;)
      if (std::abs(res.prof.df_hz[s] - ws.df_end_hz) > sc.settle_band_hz) {
        ws.t_set_s = res.prof.t[std::min(s + 1, res.prof.t.size() - 1)] - t0;
        break;
      }
    res.windows.push_back(ws);

    // Steady state of this segment for the step and the held feedforward value.
    Vec rhs = Bu.col(0) * step_on;
    if (with_ffc) rhs += loop.B_ffc * gen.final_fr;
    x_ss_prev = -loop.A.partialPivLu().solve(rhs);
    x = y.head(N);
  }
  std::vector<double> ev;
  for (const SwitchEvent& e : sc.events) ev.push_back(e.t);
  res.metrics = compute_metrics(res.prof, ev, sc.settle_band_hz);
  return res;
}

Metrics compute_metrics(const Profiles& p, const std::vector<double>& event_times, double band_hz) {
  if (!(band_hz > 0.0)) throw InputError("settling band must be positive");
  Metrics m;
  if (p.t.empty()) return m;
  for (double v : p.df_hz) m.df_pk_hz = std::max(m.df_pk_hz, std::abs(v));
  m.df_rms_hz = rms(p.df_hz, 0.0);
  if (!p.p_m.empty()) m.dp_m_rms = rms(p.p_m, p.p_m.front());
  if (!p.p_ig.empty()) m.dp_ig_rms = rms(p.p_ig, p.p_ig.front());
  for (std::size_t e = 0; e < event_times.size(); ++e) {
    const double te = event_times[e];
    if (te < p.t.front() || te > p.t.back()) throw InputError("event window lies outside the profile");
    const double tn = e + 1 < event_times.size() ? event_times[e + 1] : std::numeric_limits<double>::infinity();
    std::size_t first = p.t.size(), last = 0;
    for (std::size_t s = 0; s < p.t.size(); ++s)
      if (p.t[s] >= te && p.t[s] < tn) {
        first = std::min(first, s);
        last = s;
      }
    if (first == p.t.size()) continue;
    const double final_value = p.df_hz[last];
    for (std::size_t s = last + 1; s-- > first;)
      if (std::abs(p.df_hz[s] - final_value) > band_hz) {
        m.t_set_s = std::max(m.t_set_s, p.t[std::min(s + 1, last)] - te);
        break;
      }
  }
  return m;
}

// ---------------------------------------------------------------- aggregated step

StepStudy aggregated_step(const FrConfig& cfg0, const SgParams& sg0, const IgParams& ig0, double alpha, double beta,
                          double gamma, int case_id, double dp, double horizon, double dt, double delay, double f0) {
  const CaseGains g = case_gains(case_id);
  FrConfig cfg = cfg0;
  cfg.p_f *= g.sfc_scale;
  cfg.i_f *= g.sfc_scale;
  SgParams sg = sg0;
  sg.m /= g.droop_scale;
  IgParams ig = ig0;
  ig.n /= g.droop_scale;
  ig.k *= g.ire_scale;
  const LoopSpec spec = aggregate_spec(cfg, sg, ig, alpha, beta, gamma);
  const RationalTF conv = g_conv(spec);
  SimOptions opt;
  opt.dt = dt;
  opt.horizon = horizon;
  opt.enforce_dt = false;
  const SimResult rc = simulate_lti(tf_to_ss(conv), [dp](double, double* u) { u[0] = dp; }, opt);
  StepStudy out;
  out.prof.t = rc.t;
  out.prof.df_hz.resize(rc.t.size());
  for (std::size_t i = 0; i < rc.t.size(); ++i) out.prof.df_hz[i] = rc.y(static_cast<Eigen::Index>(i), 0) * f0;
  if (g.ffc) {
    const ControllerSet c = ffc_synthesize(spec);
    const RationalTF cancel = tf_arith(conv, ffc_factor(spec, c), TfOp::Mul);
    const SimResult rf = simulate_lti(
        tf_to_ss(cancel), [dp, delay](double t, double* u) { u[0] = t >= delay - 1e-12 ? dp : 0.0; }, opt);
    for (std::size_t i = 0; i < rc.t.size(); ++i) out.prof.df_hz[i] -= rf.y(static_cast<Eigen::Index>(i), 0) * f0;
  }
  out.metrics = compute_metrics(out.prof, {0.0});
  return out;
}

// ---------------------------------------------------------------- sweep

bool SweepResult::all_below_one() const {
  for (const SweepCell& c : cells)
    if (!(c.pk_ratio < 1.0) || !(c.rms_ratio < 1.0)) return false;
  return !cells.empty();
}

SweepResult sensitivity_sweep(const Fixture& fx, const Scenario& sc, const std::vector<double>& errors,
                              const std::vector<double>& delays, int jobs) {
  if (errors.empty() || delays.empty()) throw InputError("sweep grids must be nonempty");
  SweepResult out;
  Scenario base = sc;
  base.strategy = 2;
  base.delay = 0.0;
  base.e_g = base.e_i = 0.0;
  out.baseline = run_scenario(fx, base).metrics;
  for (double e : errors)
    for (double d : delays) {
      SweepCell c;
      c.e = e;
      c.delay = d;
      out.cells.push_back(c);
    }
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(out.cells.size())));
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errs(out.cells.size());
  auto work = [&]() {
    for (std::size_t i = next++; i < out.cells.size(); i = next++) {
      SweepCell& c = out.cells[i];
      Scenario s = sc;
      s.strategy = 1;
      s.e_g = s.e_i = c.e;
      s.delay = c.delay;
      try {
        c.m = run_scenario(fx, s).metrics;
        c.pk_ratio = c.m.df_pk_hz / out.baseline.df_pk_hz;
        c.rms_ratio = c.m.df_rms_hz / out.baseline.df_rms_hz;
      } catch (const std::exception& ex) {
        errs[i] = ex.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  for (const std::string& e : errs)
    if (!e.empty()) throw NumericError("sweep cell failed: " + e);
  return out;
}

}  // namespace gridloop
