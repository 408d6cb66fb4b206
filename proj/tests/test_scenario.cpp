#include <cmath>
#include <complex>

#include "doctest.h"
#include "gridloop/scenario.hpp"

using namespace gridloop;

namespace {

const Fixture& fixture() {
  static const Fixture fx = load_fixture();
  return fx;
}

// Two restorations on a short horizon, coarse step, no traces.
Scenario short_scenario(int strategy) {
  Scenario s;
  s.events = {{10.0, "SSW2", true}, {20.0, "TSW4", true}};
  s.horizon = 30.0;
  s.dt = 1e-3;
  s.strategy = strategy;
  s.use_traces = false;
  s.output_stride = 10;
  return s;
}

// Fraction of signal energy at DFT bins above the cutoff.
double energy_above(const std::vector<double>& x, double dt, double cutoff_hz) {
  const std::size_t n = x.size();
  double above = 0.0, total = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::polar(1.0, -2.0 * M_PI * double(k * i % n) / double(n));
    const double e = std::norm(acc);
    total += e;
    if (double(k) / (double(n) * dt) > cutoff_hz) above += e;
  }
  return above / total;
}

}  // namespace

TEST_SUITE("scenario") {
  TEST_CASE("trace generator: flat at zero amplitude, seeded, band limited, zero start and mean") {
    TraceSpec spec;
    spec.rms = 0.0;
    const DisturbanceTrace flat = make_trace(spec, 50.0);
    for (double v : flat.v) CHECK(v == 0.0);

    spec.rms = 0.02;
    spec.cutoff_hz = 0.05;
    spec.seed = 7;
    const DisturbanceTrace a = make_trace(spec, 200.0), b = make_trace(spec, 200.0);
    CHECK(a.v == b.v);
    spec.seed = 8;
    CHECK(make_trace(spec, 200.0).v != a.v);

    CHECK(a.v.front() == 0.0);
    double mean = 0.0, sq = 0.0;
    for (double v : a.v) {
      mean += v;
      sq += v * v;
    }
    mean /= double(a.v.size());
    CHECK(std::abs(mean) < 1e-15);
    CHECK(std::sqrt(sq / double(a.v.size())) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(energy_above(a.v, spec.sample, spec.cutoff_hz) < 0.05);

    spec.kind = "pv";
    for (double v : make_trace(spec, 200.0).v) CHECK(std::abs(v) <= 0.04 + 1e-15);
  }

  TEST_CASE("inline trace samples are interpolated and validated") {
    TraceSpec spec;
    spec.samples = {{0.0, 0.0}, {1.0, 0.2}, {3.0, -0.2}};
    const DisturbanceTrace t = make_trace(spec, 10.0);
    CHECK(t.at(-1.0) == 0.0);
    CHECK(t.at(0.5) == doctest::Approx(0.1));
    CHECK(t.at(2.0) == doctest::Approx(0.0));
    CHECK(t.at(9.0) == doctest::Approx(-0.2));
    spec.samples = {{0.0, 0.0}, {0.0, 0.1}};
    CHECK_THROWS_AS(make_trace(spec, 10.0), InputError);
  }

  TEST_CASE("metrics: constant frequency gives zeros") {
    Profiles p;
    for (int i = 0; i <= 100; ++i) {
      p.t.push_back(i * 0.1);
      p.df_hz.push_back(0.0);
    }
    const Metrics m = compute_metrics(p, {0.0});
    CHECK(m.df_pk_hz == 0.0);
    CHECK(m.df_rms_hz == 0.0);
    CHECK(m.t_set_s == 0.0);
    CHECK_THROWS_AS(compute_metrics(p, {20.0}), InputError);
  }

  TEST_CASE("metrics: decaying exponential against closed forms") {
    Profiles p;
    const double h = 1e-4;
    for (int i = 0; i <= 100000; ++i) {
      p.t.push_back(i * h);
      p.df_hz.push_back(0.5 * std::exp(-p.t.back()));
    }
    const Metrics m = compute_metrics(p, {0.0}, 0.02);
    CHECK(m.df_pk_hz == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.df_rms_hz == doctest::Approx(0.5 * std::sqrt((1.0 - std::exp(-20.0)) / 20.0)).epsilon(1e-3));
    // Band around the final value 0.5 e^-10.
    const double ts = -std::log((0.02 + 0.5 * std::exp(-10.0)) / 0.5);
    CHECK(m.t_set_s == doctest::Approx(ts).epsilon(1e-3));
  }

  TEST_CASE("scenario file errors name the field") {
    auto msg = [](const std::string& text) {
      try {
        parse_scenario(text, "sc.json");
      } catch (const InputError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(msg(R"({"events":[{"t_s":1,"action":"close"}]})").find("events[0].switch") != std::string::npos);
    CHECK(msg(R"({"events":[{"t_s":1,"switch":"S","action":"toggle"}]})").find("events[0].action") != std::string::npos);
    CHECK(msg(R"({"horizon_s":10,"events":[{"t_s":5,"switch":"S","action":"close"},{"t_s":2,"switch":"S","action":"open"}]})")
              .find("increasing") != std::string::npos);
    CHECK(msg(R"({"traces":[{"kind":"wind","rms_pu":0.1}]})").find("traces[0]") != std::string::npos);
    CHECK(msg("{bad").find("malformed") != std::string::npos);
    CHECK(msg(R"({"case":5})").find("case") != std::string::npos);
  }

  TEST_CASE("no events and no traces keeps the frequency at nominal") {
    Scenario s;
    s.horizon = 5.0;
    s.dt = 1e-3;
    s.use_traces = false;
    const RunResult r = run_scenario(fixture(), s);
    for (double v : r.prof.df_hz) CHECK(v == 0.0);
    CHECK(r.metrics.df_pk_hz == 0.0);
  }

  TEST_CASE("restoration events: zero steady-state error, power-flow oracle, network residual") {
    const RunResult r = run_scenario(fixture(), short_scenario(2));
    REQUIRE(r.windows.size() == 3);
    for (std::size_t k = 1; k < r.windows.size(); ++k) {
      const WindowStat& w = r.windows[k];
      CHECK(std::abs(w.df_end_hz) < 1e-3);
      CHECK(w.restored_p > 0.1);
      CHECK(w.p0_model == doctest::Approx(w.dp_flow).epsilon(0.02));
      CHECK(w.df_peak_hz > 0.05);
    }
    CHECK(r.max_network_residual < 1e-8);
    CHECK(r.warnings.empty());
  }

  TEST_CASE("frequency is continuous across events") {
    // A bounded derivative makes the largest per-sample change scale with dt.
    auto max_jump = [](double dt) {
      Scenario s = short_scenario(2);
      s.dt = dt;
      s.output_stride = 1;
      const RunResult r = run_scenario(fixture(), s);
      double jump = 0.0;
      for (std::size_t i = 1; i < r.prof.t.size(); ++i)
        jump = std::max(jump, std::abs(r.prof.df_hz[i] - r.prof.df_hz[i - 1]));
      return jump;
    };
    const double ratio = max_jump(1e-3) / max_jump(5e-4);
    CHECK(ratio > 1.8);
    CHECK(ratio < 2.2);
  }

  TEST_CASE("feedforward beats every conventional variant and runs are deterministic") {
    const RunResult c1 = run_scenario(fixture(), short_scenario(1));
    for (int c : {2, 3, 4}) {
      const RunResult cc = run_scenario(fixture(), short_scenario(c));
      CHECK(c1.metrics.df_pk_hz < cc.metrics.df_pk_hz);
      CHECK(c1.metrics.df_rms_hz < cc.metrics.df_rms_hz);
    }
    const RunResult again = run_scenario(fixture(), short_scenario(1));
    CHECK(again.prof.df_hz == c1.prof.df_hz);
    CHECK(again.prof.p_m == c1.prof.p_m);
  }

  TEST_CASE("feedforward delay is honored off the time grid") {
    Scenario s = short_scenario(1);
    s.delay = 0.0505;  // between grid points
    const RunResult r = run_scenario(fixture(), s);
    const RunResult r0 = run_scenario(fixture(), short_scenario(1));
    CHECK(r.metrics.df_pk_hz > r0.metrics.df_pk_hz);
    CHECK(r.metrics.df_pk_hz < run_scenario(fixture(), short_scenario(2)).metrics.df_pk_hz);
  }

  TEST_CASE("time step convergence") {
    Scenario fine = short_scenario(2);
    fine.dt = 2e-4;
    fine.output_stride = 50;
    const Metrics a = run_scenario(fixture(), short_scenario(2)).metrics;
    const Metrics b = run_scenario(fixture(), fine).metrics;
    CHECK(a.df_pk_hz == doctest::Approx(b.df_pk_hz).epsilon(0.01));
    CHECK(a.df_rms_hz == doctest::Approx(b.df_rms_hz).epsilon(0.01));
  }

  TEST_CASE("run-time errors") {
    Scenario s = short_scenario(2);
    s.events.push_back({25.0, "NOPE", true});
    CHECK_THROWS_AS(run_scenario(fixture(), s), InputError);
    Scenario big = short_scenario(2);
    big.dt = 0.05;
    CHECK_THROWS_AS(run_scenario(fixture(), big), NumericError);
  }

  TEST_CASE("aggregated step: conventional case matches the closed-loop step response") {
    const Fixture& fx = fixture();
    const SgParams& sg = fx.dgs.front().sg;
    const IgParams& ig = fx.dgs.back().ig;
    const double dp = 0.2;
    const StepStudy c2 = aggregated_step(fx.cfg, sg, ig, 0.6, 0.4, 1.0, 2, dp);
    SimOptions opt;
    opt.dt = 1e-3;
    opt.horizon = 10.0;
    opt.enforce_dt = false;
    const SimResult ref = simulate_lti(tf_to_ss(g_conv(aggregate_spec(fx.cfg, sg, ig, 0.6, 0.4, 1.0))),
                                       [dp](double, double* u) { u[0] = dp; }, opt);
    double pk = 0.0;
    for (Eigen::Index i = 0; i < ref.y.rows(); ++i) pk = std::max(pk, std::abs(ref.y(i, 0)) * 60.0);
    CHECK(c2.metrics.df_pk_hz == doctest::Approx(pk).epsilon(1e-12));
    const StepStudy c1 = aggregated_step(fx.cfg, sg, ig, 0.6, 0.4, 1.0, 1, dp);
    CHECK(c1.metrics.df_pk_hz < 0.25 * c2.metrics.df_pk_hz);
  }

  TEST_CASE("sweep: degenerate cell equals the direct ratio and cells are reproducible") {
    const Scenario s = short_scenario(1);
    const SweepResult one = sensitivity_sweep(fixture(), s, {0.0}, {0.0});
    REQUIRE(one.cells.size() == 1);
    const double direct = run_scenario(fixture(), s).metrics.df_pk_hz / run_scenario(fixture(), short_scenario(2)).metrics.df_pk_hz;
    CHECK(one.cells[0].pk_ratio == direct);

    const SweepResult grid = sensitivity_sweep(fixture(), s, {-0.5, 0.3}, {0.0, 0.1}, 2);
    Scenario cell = s;
    cell.e_g = cell.e_i = 0.3;
    cell.delay = 0.1;
    const Metrics m = run_scenario(fixture(), cell).metrics;
    CHECK(grid.cells[3].e == 0.3);
    CHECK(grid.cells[3].delay == 0.1);
    CHECK(grid.cells[3].m.df_pk_hz == m.df_pk_hz);
    CHECK(grid.cells[3].m.df_rms_hz == m.df_rms_hz);
    CHECK(grid.all_below_one());
    CHECK_THROWS_AS(sensitivity_sweep(fixture(), s, {}, {0.0}), InputError);
  }
}
