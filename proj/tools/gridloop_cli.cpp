// gridloop: command-line front end for model reports, Bode data, scenario
// simulation and sensitivity sweeps. Outputs are CSV and JSON only.

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gridloop/output.hpp"
#include "gridloop/scenario.hpp"
#include "json.hpp"

using namespace gridloop;
using nlohmann::ordered_json;

namespace {

struct Options {
  std::string fixture, scenario, out_dir;
  int strategy = 0;  // 0 = keep the scenario's case
  double dt = 0.0, horizon = 0.0, delay = 0.0, e_g = 0.0, e_i = 0.0;
  std::uint64_t seed = 0;
  std::string grid;
  int jobs = 0;
  std::vector<std::string> switches;
  std::string mode = "both";
  std::string e_range = "-0.8:0.8", delay_range = "0:0.5";
  bool no_traces = false;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InputError(what + ": '" + s + "' is not a number");
}

std::pair<double, double> parse_range(const std::string& s, const std::string& flag) {
  const auto p = split(s, ':');
  if (p.size() != 2) throw InputError(flag + " must be lo:hi");
  const double lo = to_double(p[0], flag), hi = to_double(p[1], flag);
  if (!(lo <= hi)) throw InputError(flag + " needs lo <= hi");
  return {lo, hi};
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

std::string out_dir(const Options& o) {
  if (!o.out_dir.empty()) return o.out_dir;
  if (const char* env = std::getenv("GRIDLOOP_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "gridloop_out";
}

std::string fixture_path(const Options& o) { return o.fixture.empty() ? default_fixture_path() : o.fixture; }
std::string scenario_path(const Options& o) { return o.scenario.empty() ? default_scenario_path() : o.scenario; }

RunManifest make_manifest(const std::string& command, const CLI::App& sub, const CLI::App& app) {
  RunManifest m;
  m.command = command;
  m.timestamp = utc_timestamp();
  for (const CLI::App* a : {&app, &sub})
    for (const CLI::Option* opt : a->get_options()) {
      if (opt->count() == 0 || opt->get_name() == "--help" || opt->get_name() == "--out-dir") continue;
      std::string v;
      for (const std::string& r : opt->results()) v += (v.empty() ? "" : ";") + r;
      m.overrides[opt->get_name()] = v;
    }
  return m;
}

bool given(const CLI::App& sub, const std::string& name) {
  const CLI::Option* opt = sub.get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

void emit(const std::string& dir, const std::string& name, const std::string& bytes) {
  write_text_file(dir + "/" + name, bytes);
  std::cout << "wrote " << dir << "/" << name << "\n";
}

std::string metrics_json(const Metrics& m) {
  ordered_json j;
  j["df_pk_hz"] = m.df_pk_hz;
  j["df_rms_hz"] = m.df_rms_hz;
  j["t_set_s"] = m.t_set_s;
  j["dp_m_rms_pu"] = m.dp_m_rms;
  j["dp_ig_rms_pu"] = m.dp_ig_rms;
  return j.dump();
}

// --- model ---------------------------------------------------------------------

int cmd_model(const Options& o, const CLI::App& sub, const CLI::App& app) {
  const std::string fpath = fixture_path(o);
  const std::string ftext = read_text_file(fpath);
  const Fixture fx = parse_fixture(ftext, fpath);
  SwitchState sw = fx.initial;
  for (const std::string& s : o.switches) {
    const auto p = split(s, '=');
    if (p.size() != 2 || (p[1] != "open" && p[1] != "closed")) throw InputError("--switch expects ID=open|closed, got '" + s + "'");
    if (!sw.count(p[0])) throw InputError("--switch names unknown switch '" + p[0] + "'");
    sw[p[0]] = p[1] == "closed";
  }
  const CaseGains gains = case_gains(o.strategy == 0 ? 2 : o.strategy);
  const OperatingPoint op = solve_operating_point(fx.topo, sw, fx.loads, fx.setpoints(), fx.pf_options());
  const LinearModel lm = linearize(fx, sw, op.V, op.I_dg, gains, true);
  FrConfig cfg = fx.cfg;
  cfg.p_f *= gains.sfc_scale;
  cfg.i_f *= gains.sfc_scale;
  const NetworkLoop loop = network_closed_loop(lm.mg, cfg, fx.shares(), fx.sfc_gain_scale);
  const Vec step = load_step_injection(fx, lm);
  const NrResponse nr = nr_response(lm.mg, step, cfg.D);
  const std::vector<double> w = logspace(-3.0, 3.0, 121);
  const FrequencyResponse pr = freq_response(nr.p, w);
  const Vec xs = lm.mg.A_MG.partialPivLu().solve(nr.p.B.col(0));
  const double p0 = -(nr.p.C * xs)(0) + nr.p.D(0, 0);

  RunManifest man = make_manifest("model", sub, app);
  man.inputs["fixture"] = content_hash(ftext);
  const std::string h = man.hash();
  const std::string dir = out_dir(o);

  CsvTable poles{{"kind", "re", "im"}, {}};
  for (const cd& l : lm.mg.eig) poles.add_row({0.0, l.real(), l.imag()});
  for (const cd& l : loop.eig) poles.add_row({1.0, l.real(), l.imag()});
  CsvTable pcsv{{"omega_rad_s", "p_mag", "p_phase_deg"}, {}};
  for (std::size_t i = 0; i < w.size(); ++i)
    pcsv.add_row({w[i], std::abs(pr.values[i]), std::arg(pr.values[i]) * 180.0 / M_PI});

  ordered_json rep;
  rep["run_hash"] = h;
  rep["stable"] = lm.mg.stable && loop.stable;
  rep["plant_stable"] = lm.mg.stable;
  rep["closed_loop_stable"] = loop.stable;
  rep["energized_nodes"] = lm.nodes.size();
  rep["plant_states"] = lm.mg.states();
  rep["closed_loop_states"] = loop.A.rows();
  rep["cond_z"] = lm.mg.cond_z;
  rep["plant_spectral_abscissa"] = spectral_abscissa(lm.mg.eig);
  rep["closed_loop_spectral_abscissa"] = spectral_abscissa(loop.eig);
  rep["p0_unit_load_step"] = p0;
  rep["power_flow_losses_pu"] = op.losses;
  rep["pole_kinds"] = "0 = plant A_MG, 1 = closed loop";

  std::cout << "stable: " << (lm.mg.stable && loop.stable ? "true" : "false") << "\n"
            << "cond(Z): " << format_number(lm.mg.cond_z) << "\n"
            << "p(0) for a 1 pu load step: " << format_number(p0) << "\n"
            << "run hash: " << h << "\n";
  emit(dir, "model_poles.csv", to_csv(poles, h));
  emit(dir, "model_p_response.csv", to_csv(pcsv, h));
  emit(dir, "model_report.json", rep.dump(2) + "\n");
  emit(dir, "model_manifest.json", man.to_json());
  return 0;
}

// --- bode ----------------------------------------------------------------------

std::vector<double> parse_grid(const std::string& g) {
  if (g.empty()) return logspace(-3.0, 3.0, 400);
  const auto p = split(g, ':');
  if (p.size() != 3) throw InputError("--grid for bode must be wmin:wmax:points");
  const double lo = to_double(p[0], "--grid"), hi = to_double(p[1], "--grid");
  const double n = to_double(p[2], "--grid");
  if (!(lo > 0.0) || !(hi >= lo) || !(n >= 1.0) || n != std::floor(n))
    throw InputError("--grid needs 0 < wmin <= wmax and a positive integer point count");
  return logspace(std::log10(lo), std::log10(hi), static_cast<std::size_t>(n));
}

int cmd_bode(const Options& o, const CLI::App& sub, const CLI::App& app) {
  if (o.mode != "conv" && o.mode != "prop" && o.mode != "both") throw InputError("--mode must be conv, prop or both");
  if (!(o.delay >= 0.0)) throw InputError("--delay must be nonnegative");
  const std::string fpath = fixture_path(o);
  const std::string ftext = read_text_file(fpath);
  const Fixture fx = parse_fixture(ftext, fpath);
  if (given(sub, "--grid") && o.grid.empty()) throw InputError("--grid is empty");
  const std::vector<double> w = parse_grid(o.grid);
  validate_grid(w);
  // The plant uses the true parameters; the errors enter the feedforward estimates.
  const LoopSpec spec = fleet_aggregate(fx, o.e_g, o.e_i);
  const ControllerSet c = ffc_synthesize(spec);
  const ClosedLoop conv = closed_loop(spec, c, LoopMode::Conventional);
  const ClosedLoop prop = closed_loop(spec, c, LoopMode::Proposed, o.delay);

  std::vector<std::string> cols{"omega_rad_s"};
  const bool want_c = o.mode != "prop", want_p = o.mode != "conv";
  if (want_c) cols.insert(cols.end(), {"conv_mag", "conv_phase_deg"});
  if (want_p) cols.insert(cols.end(), {"prop_mag", "prop_phase_deg"});
  CsvTable t{cols, {}};
  double prev_c = 0.0, prev_p = 0.0;
  double off_c = 0.0, off_p = 0.0;
  // Phase is unwrapped along the grid.
  auto unwrap = [](double ph, double& prev, double& off, bool first) {
    if (!first) {
      while (ph + off - prev > 180.0) off -= 360.0;
      while (ph + off - prev < -180.0) off += 360.0;
    }
    prev = ph + off;
    return prev;
  };
  for (std::size_t i = 0; i < w.size(); ++i) {
    const cd s(0.0, w[i]);
    std::vector<double> row{w[i]};
    if (want_c) {
      const cd g = conv.eval(s);
      row.push_back(std::abs(g));
      row.push_back(unwrap(std::arg(g) * 180.0 / M_PI, prev_c, off_c, i == 0));
    }
    if (want_p) {
      const cd g = prop.eval(s);
      row.push_back(std::abs(g));
      row.push_back(unwrap(std::arg(g) * 180.0 / M_PI, prev_p, off_p, i == 0));
    }
    t.add_row(std::move(row));
  }
  RunManifest man = make_manifest("bode", sub, app);
  man.inputs["fixture"] = content_hash(ftext);
  const std::string h = man.hash();
  const std::string dir = out_dir(o);
  std::cout << "conventional stable: " << (conv.stable ? "true" : "false") << "\n"
            << "run hash: " << h << "\n";
  emit(dir, "bode.csv", to_csv(t, h));
  emit(dir, "bode_manifest.json", man.to_json());
  return 0;
}

// --- simulate / sweep ----------------------------------------------------------

Scenario scenario_with_overrides(const Options& o, const std::string& text, const std::string& path,
                                 const CLI::App& sub) {
  Scenario sc = parse_scenario(text, path);
  if (o.strategy != 0) sc.strategy = o.strategy;
  if (given(sub, "--dt")) sc.dt = o.dt;
  if (given(sub, "--horizon")) {
    sc.horizon = o.horizon;
    // Events at or after a shortened horizon are dropped.
    std::erase_if(sc.events, [&](const SwitchEvent& e) { return e.t >= sc.horizon; });
  }
  if (given(sub, "--delay")) sc.delay = o.delay;
  if (given(sub, "--error-g")) sc.e_g = o.e_g;
  if (given(sub, "--error-i")) sc.e_i = o.e_i;
  if (given(sub, "--seed"))
    for (std::size_t i = 0; i < sc.traces.size(); ++i) sc.traces[i].seed = o.seed + i;
  if (o.no_traces) sc.use_traces = false;
  sc.validate();
  return sc;
}

int cmd_simulate(const Options& o, const CLI::App& sub, const CLI::App& app) {
  const std::string fpath = fixture_path(o), spath = scenario_path(o);
  const std::string ftext = read_text_file(fpath), stext = read_text_file(spath);
  const Fixture fx = parse_fixture(ftext, fpath);
  const Scenario sc = scenario_with_overrides(o, stext, spath, sub);
  const RunResult r = run_scenario(fx, sc);

  RunManifest man = make_manifest("simulate", sub, app);
  man.inputs["fixture"] = content_hash(ftext);
  man.inputs["scenario"] = content_hash(stext);
  const std::string h = man.hash();
  const std::string dir = out_dir(o);
  const std::string stem = "simulate_case" + std::to_string(sc.strategy);

  const Profiles& p = r.prof;
  CsvTable prof{{"t_s", "df_hz", "v_min_pu", "v_mean_pu", "p_m_pu", "p_ig_pu", "p_dg_pu", "p_trace_pu"}, {}};
  for (std::size_t i = 0; i < p.t.size(); ++i)
    prof.add_row({p.t[i], p.df_hz[i], p.v_min[i], p.v_mean[i], p.p_m[i], p.p_ig[i], p.p_dg[i], p.p_trace[i]});
  CsvTable volt{{"t_s"}, {}};
  for (const std::string& n : fx.topo.nodes) volt.columns.push_back("v_" + n + "_pu");
  for (std::size_t i = 0; i < p.t.size(); ++i) {
    std::vector<double> row{p.t[i]};
    row.insert(row.end(), p.v_node[i].begin(), p.v_node[i].end());
    volt.add_row(std::move(row));
  }
  CsvTable win{{"t_event_s", "df_end_hz", "df_peak_hz", "t_set_s", "restored_p_pu", "p0_model_pu", "dp_flow_pu",
                "spectral_abscissa"},
               {}};
  for (const WindowStat& w : r.windows)
    win.add_row({w.t_event, w.df_end_hz, w.df_peak_hz, w.t_set_s, w.restored_p, w.p0_model, w.dp_flow,
                 w.spectral_abscissa});

  ordered_json mj;
  mj["run_hash"] = h;
  mj["case"] = sc.strategy;
  mj["case_label"] = case_gains(sc.strategy).label;
  mj["metrics"] = ordered_json::parse(metrics_json(r.metrics));
  mj["settle_band_hz"] = sc.settle_band_hz;
  mj["max_network_residual"] = r.max_network_residual;
  mj["steps"] = r.steps;
  ordered_json wj = ordered_json::array();
  for (const WindowStat& w : r.windows) wj.push_back({{"t_event_s", w.t_event}, {"cause", w.cause}});
  mj["windows"] = wj;
  mj["warnings"] = r.warnings;

  std::cout << "case " << sc.strategy << ": df_pk " << format_number(r.metrics.df_pk_hz) << " Hz, df_rms "
            << format_number(r.metrics.df_rms_hz) << " Hz, t_set " << format_number(r.metrics.t_set_s) << " s\n";
  for (const std::string& w : r.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "run hash: " << h << "\n";
  emit(dir, stem + "_profiles.csv", to_csv(prof, h));
  emit(dir, stem + "_voltages.csv", to_csv(volt, h));
  emit(dir, stem + "_windows.csv", to_csv(win, h));
  emit(dir, stem + "_metrics.json", mj.dump(2) + "\n");
  emit(dir, stem + "_manifest.json", man.to_json());
  return 0;
}

int cmd_sweep(const Options& o, const CLI::App& sub, const CLI::App& app) {
  const std::string fpath = fixture_path(o), spath = scenario_path(o);
  const std::string ftext = read_text_file(fpath), stext = read_text_file(spath);
  const Fixture fx = parse_fixture(ftext, fpath);
  const Scenario sc = scenario_with_overrides(o, stext, spath, sub);
  const auto [elo, ehi] = parse_range(o.e_range, "--e-range");
  const auto [dlo, dhi] = parse_range(o.delay_range, "--delay-range");
  if (given(sub, "--grid") && o.grid.empty()) throw InputError("--grid is empty");
  const std::string g = o.grid.empty() ? "9x6" : o.grid;
  const auto p = split(g, 'x');
  if (p.size() != 2) throw InputError("--grid for sweep must be NExND (e.g. 9x6)");
  const double ne = to_double(p[0], "--grid"), nd = to_double(p[1], "--grid");
  if (!(ne >= 1.0) || !(nd >= 1.0) || ne != std::floor(ne) || nd != std::floor(nd))
    throw InputError("--grid needs positive integer cell counts");
  const int jobs = o.jobs > 0 ? o.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const SweepResult r = sensitivity_sweep(fx, sc, linspace(elo, ehi, static_cast<std::size_t>(ne)),
                                          linspace(dlo, dhi, static_cast<std::size_t>(nd)), jobs);

  RunManifest man = make_manifest("sweep", sub, app);
  man.overrides.erase("--jobs");  // parallelism does not change results
  man.inputs["fixture"] = content_hash(ftext);
  man.inputs["scenario"] = content_hash(stext);
  const std::string h = man.hash();
  CsvTable t{{"e", "delay_s", "df_pk_hz", "df_rms_hz", "pk_ratio", "rms_ratio"}, {}};
  for (const SweepCell& c : r.cells) t.add_row({c.e, c.delay, c.m.df_pk_hz, c.m.df_rms_hz, c.pk_ratio, c.rms_ratio});
  ordered_json bj;
  bj["run_hash"] = h;
  bj["baseline_case2"] = ordered_json::parse(metrics_json(r.baseline));
  bj["all_ratios_below_one"] = r.all_below_one();
  const std::string dir = out_dir(o);
  std::cout << "cells: " << r.cells.size() << ", all ratios below one: " << (r.all_below_one() ? "true" : "false")
            << "\nrun hash: " << h << "\n";
  emit(dir, "sweep.csv", to_csv(t, h));
  emit(dir, "sweep_baseline.json", bj.dump(2) + "\n");
  emit(dir, "sweep_manifest.json", man.to_json());
  return 0;
}

void print_error(const std::string& kind, const std::string& msg) {
  ordered_json j;
  j["error"] = {{"kind", kind}, {"message", msg}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridloop: microgrid small-signal analysis and feedforward frequency-control studies"};
  app.require_subcommand(1, 1);
  app.fallthrough();  // global flags are accepted after the subcommand too
  Options o;
  app.add_option("--fixture", o.fixture, "Feeder fixture JSON (default: bundled 37-node fixture)");
  app.add_option("--out-dir", o.out_dir, "Output directory (default: $GRIDLOOP_OUT_DIR or ./gridloop_out)");

  CLI::App* model = app.add_subcommand("model", "Linearize the feeder and report stability, cond(Z) and p(s)");
  model->add_option("--switch", o.switches, "Switch override ID=open|closed (repeatable)");
  model->add_option("--case", o.strategy, "Strategy case 1..4 (gains used for the closed loop)")->check(CLI::Range(1, 4));

  CLI::App* bode = app.add_subcommand("bode", "Frequency response of the conventional and proposed loops");
  bode->add_option("--mode", o.mode, "conv, prop or both");
  bode->add_option("--delay", o.delay, "Feedforward delay, s");
  bode->add_option("--error-g", o.e_g, "Relative error in the governor estimate");
  bode->add_option("--error-i", o.e_i, "Relative error in the inverter estimate");
  bode->add_option("--grid", o.grid, "wmin:wmax:points (log spaced, rad/s)");

  CLI::App* sim = app.add_subcommand("simulate", "Run a switching scenario and export profiles and metrics");
  CLI::App* sweep = app.add_subcommand("sweep", "Case 1 / Case 2 ratio surfaces over estimate error and delay");
  for (CLI::App* a : {sim, sweep}) {
    a->add_option("--scenario", o.scenario, "Scenario JSON (default: bundled switching sequence)");
    a->add_option("--dt", o.dt, "Integration step, s");
    a->add_option("--horizon", o.horizon, "Simulated time, s");
    a->add_option("--seed", o.seed, "Base seed for the synthetic traces");
    a->add_flag("--no-traces", o.no_traces, "Disable the load and PV traces");
  }
  sim->add_option("--case", o.strategy, "Strategy case 1..4")->check(CLI::Range(1, 4));
  sim->add_option("--delay", o.delay, "Feedforward delay, s");
  sim->add_option("--error-g", o.e_g, "Relative error in the governor estimate");
  sim->add_option("--error-i", o.e_i, "Relative error in the inverter estimate");
  sweep->add_option("--e-range", o.e_range, "Estimate error range lo:hi (default -0.8:0.8)");
  sweep->add_option("--delay-range", o.delay_range, "Delay range lo:hi in s (default 0:0.5)");
  sweep->add_option("--grid", o.grid, "Cells NExND (default 9x6)");
  sweep->add_option("--jobs", o.jobs, "Worker threads (default: hardware concurrency)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }
  try {
    if (model->parsed()) return cmd_model(o, *model, app);
    if (bode->parsed()) return cmd_bode(o, *bode, app);
    if (sim->parsed()) return cmd_simulate(o, *sim, app);
    return cmd_sweep(o, *sweep, app);
  } catch (const InputError& e) {
    print_error("input", e.what());
    return 2;
  } catch (const NumericError& e) {
    print_error("numeric", e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
