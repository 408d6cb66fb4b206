#include <cmath>
#include <random>

#include "doctest.h"
#include "gridloop/reduction.hpp"

using namespace gridloop;

namespace {

Mat random_dominant(Eigen::Index n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = u(rng);
  m += static_cast<double>(n) * Mat::Identity(n, n);
  return m;
}

// Three nodes: SG at a, IG at b, load at c; lines a-b and b-c.
struct SmallGrid {
  NetworkTopology topo;
  std::vector<LoadSpec> loads;
  std::vector<DgSetpoint> dgs;
  OperatingPoint op;
  std::vector<DgBlock> blocks;
  AssemblyInput in;
  MgModel m;
};

SmallGrid small_grid() {
  SmallGrid g;
  g.topo.nodes = {"a", "b", "c"};
  g.topo.lines = {{"a", "b", AdmittanceBlock::from_impedance(0.02, 0.06), ""},
                  {"b", "c", AdmittanceBlock::from_impedance(0.03, 0.05), ""}};
  LoadSpec l;
  l.id = "L";
  l.node = "c";
  l.p0 = 0.4;
  l.q0 = 0.1;
  l.zp = l.zq = 0.5;
  l.ip = l.iq = 0.0;
  l.pp = l.pq = 0.5;
  g.loads = {l};
  DgSetpoint s;
  s.id = "G";
  s.node = "a";
  s.kind = DgKind::Sg;
  s.participation = 0.6;
  s.rating = 0.42;
  DgSetpoint i;
  i.id = "I";
  i.node = "b";
  i.kind = DgKind::Ig;
  i.participation = 0.4;
  i.rating = 0.31;
  g.dgs = {s, i};
  PowerFlowOptions opt;
  opt.reactive_sharing = true;
  g.op = solve_operating_point(g.topo, {}, g.loads, g.dgs, opt);
  g.blocks = {sg_block(SgParams{}, g.op.V(0), g.op.I_dg[0], g.topo.bases, "G", "a"),
              ig_block(IgParams{}, g.op.V(1), g.op.I_dg[1], g.topo.bases, "I", "b")};
  g.in.Y = build_admittance(g.topo, {});
  g.in.D_L = {Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Zero(), load_block(l, g.op.V(2))};
  g.in.blocks = g.blocks;
  g.in.block_node = {0, 1};
  g.in.V0 = g.op.v_dq();
  g.m = assemble(g.in);
  return g;
}

Vec step_at_c() {
  Vec d = Vec::Zero(6);
  d(4) = 0.1;
  d(5) = -0.03;
  return d;
}

}  // namespace

TEST_SUITE("reduction") {
  TEST_CASE("network gain inverts the combined matrix") {
    const Mat Y = random_dominant(8, 1), Dg = 0.1 * random_dominant(8, 2), Dl = 0.05 * random_dominant(8, 3);
    const NetworkGain g = network_gain(Y, Dg, Dl);
    CHECK((g.Z * (Y + Dg - Dl) - Mat::Identity(8, 8)).norm() < 1e-12);
    const Mat zero = Mat::Zero(8, 8);
    CHECK((network_gain(Y, zero, zero).Z - Y.inverse()).norm() < 1e-12);
    CHECK(g.cond > 1.0);
  }

  TEST_CASE("singular network gain is a numeric error") {
    NetworkTopology t;
    t.nodes = {"a", "b"};
    t.lines = {{"a", "b", AdmittanceBlock::from_impedance(0.01, 0.02), ""}};
    const Mat Y = build_admittance(t, {});
    CHECK_THROWS_AS(network_gain(Y, Mat::Zero(4, 4), Mat::Zero(4, 4)), NumericError);
    CHECK_THROWS_AS(network_gain(Y, Mat::Zero(2, 2), Mat::Zero(4, 4)), InputError);
  }

  TEST_CASE("output gains without device feedthrough") {
    const Mat Z = random_dominant(4, 5).inverse();
    const Vec V0 = Vec::Random(4), I0 = Vec::Random(4);
    const Mat C = Mat::Random(4, 3);
    const OutputGains g = output_gains(V0, I0, Z, C, Mat::Zero(4, 4));
    CHECK((g.K_I + I0.transpose() * Z).norm() < 1e-14);
    CHECK((g.K_X - (V0.transpose() * C - I0.transpose() * Z * C)).norm() < 1e-14);
  }

  TEST_CASE("output gains match the bilinear power perturbation") {
    const SmallGrid g = small_grid();
    const MgModel& m = g.m;
    const Vec z = Vec::Random(m.states()) * 1e-3;
    const Vec dI = step_at_c();
    const Vec x = m.T * z;
    const Vec dV = -m.Z * (m.C_DG * x + dI);
    const Vec dIdg = m.C_DG * x + m.D_DG * dV;
    const double direct = (m.V0.transpose() * dIdg)(0) + (m.I_DG0.transpose() * dV)(0);
    const double model = (m.K_X * z)(0) + (m.K_I * dI)(0);
    CHECK(model == doctest::Approx(direct).epsilon(1e-10));
  }

  TEST_CASE("assembled model: stable, inertia weights, rotational null vector removed") {
    const SmallGrid g = small_grid();
    const MgModel& m = g.m;
    CHECK(m.stable);
    CHECK(m.states() == g.blocks[0].states() + g.blocks[1].states() - 1);
    double s = 0.0;
    for (double w : m.Mbar) s += w;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.Mbar[1] == 0.0);
    // Shifting every angle together leaves the full-coordinate dynamics unchanged.
    const Mat A_full = m.A_DG - m.B_V * m.Z * m.C_DG;
    Vec r = Vec::Zero(A_full.rows());
    for (std::size_t u = 0; u < g.blocks.size(); ++u)
      r(m.block_offset[u] + static_cast<Eigen::Index>(g.blocks[u].angle_state)) = 1.0;
    CHECK((A_full * r).norm() < 1e-9 * A_full.norm());
  }

  TEST_CASE("reconfiguration response: p = a + D b, linear in the step, zero for no step") {
    const SmallGrid g = small_grid();
    const double D = 0.1;
    const NrResponse r = nr_response(g.m, step_at_c(), D);
    const NrResponse r2 = nr_response(g.m, 2.0 * step_at_c(), D);
    for (double w : {0.0, 0.1, 1.0, 10.0, 100.0}) {
      const cd s(0.0, w);
      const cd p = ss_eval(r.p, s), a = ss_eval(r.a, s), b = ss_eval(r.b, s);
      CHECK(std::abs(p - (a + D * b)) < 1e-12 * (1.0 + std::abs(p)));
      CHECK(std::abs(ss_eval(r2.p, s) - 2.0 * p) < 1e-12 * (1.0 + std::abs(p)));
    }
    const NrResponse z = nr_response(g.m, Vec::Zero(6), D);
    CHECK(std::abs(ss_eval(z.p, cd(0.0, 1.0))) == 0.0);
    CHECK_THROWS_AS(nr_response(g.m, Vec::Zero(4), D), InputError);
  }

  TEST_CASE("steady-state power after a load step matches the nonlinear power flow") {
    SmallGrid g = small_grid();
    // Step: the load grows by 5 % at constant operating voltage.
    LoadSpec bigger = g.loads[0];
    bigger.p0 *= 1.05;
    bigger.q0 *= 1.05;
    const cd dI = bigger.current(g.op.V(2)) - g.loads[0].current(g.op.V(2));
    Vec step = Vec::Zero(6);
    step(4) = dI.real();
    step(5) = dI.imag();
    const NrResponse r = nr_response(g.m, step, 0.0);
    const Vec xs = g.m.A_MG.partialPivLu().solve(r.a.B.col(0));
    const double p0 = -(r.a.C * xs)(0) + r.a.D(0, 0);
    PowerFlowOptions opt;
    opt.reactive_sharing = true;
    const OperatingPoint after = solve_operating_point(g.topo, {}, {bigger}, g.dgs, opt);
    const double dp = after.S_dg[0].real() + after.S_dg[1].real() - g.op.S_dg[0].real() - g.op.S_dg[1].real();
    CHECK(p0 == doctest::Approx(dp).epsilon(0.05));
  }

  TEST_CASE("assembly input validation") {
    SmallGrid g = small_grid();
    AssemblyInput bad = g.in;
    bad.block_node = {0};
    CHECK_THROWS_AS(assemble(bad), InputError);
    bad = g.in;
    bad.blocks.clear();
    bad.block_node.clear();
    CHECK_THROWS_AS(assemble(bad), InputError);
  }
}
