#include <cmath>

#include "doctest.h"
#include "gridloop/netmodel.hpp"

using namespace gridloop;

namespace {

NetworkTopology two_node(AdmittanceBlock y, std::string sw = "") {
  NetworkTopology t;
  t.nodes = {"a", "b"};
  t.lines = {{"a", "b", y, sw}};
  return t;
}

// Ring a-b-c-d-a with a switch on the closing line d-a.
NetworkTopology ring() {
  NetworkTopology t;
  t.nodes = {"a", "b", "c", "d"};
  t.lines = {{"a", "b", AdmittanceBlock::from_impedance(0.01, 0.02), ""},
             {"b", "c", AdmittanceBlock::from_impedance(0.02, 0.03), "S1"},
             {"c", "d", AdmittanceBlock::from_impedance(0.015, 0.025), ""},
             {"d", "a", AdmittanceBlock::from_impedance(0.03, 0.04), "S2"}};
  return t;
}

}  // namespace

TEST_SUITE("netmodel") {
  TEST_CASE("two-node admittance blocks") {
    const auto topo = two_node({1.0, -2.0}, "S");
    const Mat Y = build_admittance(topo, {{"S", true}});
    Eigen::Matrix2d blk;
    blk << 1, 2, -2, 1;
    CHECK((Y.block(0, 0, 2, 2) + blk).norm() == 0.0);
    CHECK((Y.block(0, 2, 2, 2) - blk).norm() == 0.0);
    CHECK((Y.block(2, 0, 2, 2) - blk).norm() == 0.0);
    CHECK(build_admittance(topo, {{"S", false}}).norm() == 0.0);
  }

  TEST_CASE("row sums vanish and matrix is block symmetric") {
    const auto topo = ring();
    const Mat Y = build_admittance(topo, {{"S1", true}, {"S2", true}});
    const Eigen::Index n = 4;
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
      for (Eigen::Index k = 0; k < n; ++k) {
        s += Y.block(2 * j, 2 * k, 2, 2);
        CHECK((Y.block(2 * j, 2 * k, 2, 2) - Y.block(2 * k, 2 * j, 2, 2)).norm() == 0.0);
      }
      CHECK(s.norm() < 1e-12);
    }
    CHECK((build_admittance(topo, {{"S1", true}, {"S2", true}}) - Y).norm() == 0.0);
  }

  TEST_CASE("opening a redundant path changes only its four blocks") {
    const auto topo = ring();
    const Mat Ya = build_admittance(topo, {{"S1", true}, {"S2", true}});
    const Mat Yb = build_admittance(topo, {{"S1", true}, {"S2", false}});
    const Mat d = Ya - Yb;
    for (Eigen::Index j = 0; j < 4; ++j)
      for (Eigen::Index k = 0; k < 4; ++k) {
        const bool touched = (j == 0 || j == 3) && (k == 0 || k == 3);
        CHECK((d.block(2 * j, 2 * k, 2, 2).norm() > 0.0) == touched);
      }
  }

  TEST_CASE("switch state must cover every switch") {
    const auto topo = ring();
    CHECK_THROWS_AS(build_admittance(topo, {{"S1", true}}), InputError);
    CHECK_THROWS_AS(build_admittance(topo, {{"S1", true}, {"S2", true}, {"S9", true}}), InputError);
  }

  TEST_CASE("topology validation") {
    auto t = ring();
    CHECK_NOTHROW(t.validate());
    t.lines.push_back({"a", "a", {1, 0}, ""});
    CHECK_THROWS_AS(t.validate(), InputError);
    auto u = ring();
    u.lines[0].switch_id = "S1";
    CHECK_THROWS_AS(u.validate(), InputError);
    auto v = ring();
    v.nodes.push_back("island");
    CHECK_THROWS_AS(v.validate(), InputError);
  }

  TEST_CASE("single node with no load sits at nominal voltage") {
    NetworkTopology t;
    t.nodes = {"a"};
    const std::vector<DgSetpoint> dgs = {{"g", "a", DgKind::Sg, 0.0, 1.0, 1.0, 1.0}};
    const auto op = solve_operating_point(t, {}, {}, dgs);
    CHECK(std::abs(op.V(0) - cd(1.0, 0.0)) < 1e-12);
    CHECK(std::abs(op.I_node(0)) < 1e-12);
  }

  TEST_CASE("lossless two-bus angle spread matches the textbook formula") {
    const double X = 0.2, P = 1.5, V1 = 1.02, V2 = 0.98;
    const auto topo = two_node(AdmittanceBlock::from_impedance(0.0, X));
    // Sending DG at a schedules P; receiving DG at b absorbs via the slack.
    const std::vector<DgSetpoint> dgs = {{"ga", "a", DgKind::Sg, P, V1, 0.0, 10.0},
                                         {"gb", "b", DgKind::Sg, -P, V2, 1.0, 10.0}};
    PowerFlowOptions opt;
    const auto op = solve_operating_point(topo, {}, {}, dgs, opt);
    const double spread = std::arg(op.V(0)) - std::arg(op.V(1));
    CHECK(spread == doctest::Approx(std::asin(P * X / (V1 * V2))).epsilon(1e-9));
    CHECK(std::abs(op.losses) < 1e-9);
    CHECK(op.residual < 1e-8);
  }

  TEST_CASE("operating point satisfies the injection balance with ZIP loads") {
    const auto topo = ring();
    const SwitchState sw = {{"S1", true}, {"S2", false}};
    const std::vector<LoadSpec> loads = {{"l1", "b", 0.3, 0.1, 0.4, 0.3, 0.3, 0.5, 0.2, 0.3},
                                         {"l2", "c", 0.4, 0.15, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0},
                                         {"l3", "d", 0.2, 0.05, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0}};
    const std::vector<DgSetpoint> dgs = {{"g1", "a", DgKind::Sg, 0.3, 1.0, 0.6, 1.0},
                                         {"g2", "c", DgKind::Ig, 0.3, 1.0, 0.4, 1.0}};
    const auto op = solve_operating_point(topo, sw, loads, dgs);
    CHECK(op.residual < 1e-8);
    // Drawn current Y V equals load current minus DG current at each node.
    CVec inj = CVec::Zero(4);
    for (std::size_t j = 0; j < loads.size(); ++j) {
      const auto i = static_cast<Eigen::Index>(topo.index(loads[j].node));
      inj(i) += loads[j].current(op.V(i));
    }
    for (std::size_t g = 0; g < dgs.size(); ++g) inj(static_cast<Eigen::Index>(topo.index(dgs[g].node))) -= op.I_dg[g];
    CHECK((inj - op.I_node).norm() < 1e-8);
    // Slack shares follow participation.
    const double d1 = op.S_dg[0].real() - 0.3, d2 = op.S_dg[1].real() - 0.3;
    CHECK(d1 / d2 == doctest::Approx(0.6 / 0.4).epsilon(1e-9));
    CHECK(std::abs(op.V(0)) == doctest::Approx(1.0));
    CHECK(std::abs(op.V(2)) == doctest::Approx(1.0));
  }

  TEST_CASE("de-energized island gets zero voltage") {
    NetworkTopology t;
    t.nodes = {"a", "b", "c"};
    t.lines = {{"a", "b", AdmittanceBlock::from_impedance(0.01, 0.05), ""},
               {"b", "c", AdmittanceBlock::from_impedance(0.01, 0.05), "S"}};
    const std::vector<LoadSpec> loads = {{"l", "c", 0.2, 0.1}};
    const std::vector<DgSetpoint> dgs = {{"g", "a", DgKind::Sg, 0.0, 1.0, 1.0, 1.0}};
    const auto op = solve_operating_point(t, {{"S", false}}, loads, dgs);
    CHECK(op.V(2) == cd(0.0, 0.0));
    CHECK_FALSE(op.energized[2]);
    CHECK(op.S_load[0] == cd(0.0, 0.0));
    const auto on = solve_operating_point(t, {{"S", true}}, loads, dgs);
    CHECK(std::abs(on.V(2)) > 0.9);
    CHECK(on.S_dg[0].real() == doctest::Approx(on.S_load[0].real() + on.losses));
  }

  TEST_CASE("capacity shortfall is reported distinctly") {
    const auto topo = two_node(AdmittanceBlock::from_impedance(0.01, 0.05));
    const std::vector<LoadSpec> loads = {{"l", "b", 2.0, 0.5}};
    const std::vector<DgSetpoint> dgs = {{"g", "a", DgKind::Sg, 0.0, 1.0, 1.0, 1.0}};
    CHECK_THROWS_AS(solve_operating_point(topo, {}, loads, dgs), CapacityShortfall);
  }

  TEST_CASE("non-convergence is a numeric error") {
    const auto topo = two_node(AdmittanceBlock::from_impedance(0.0, 0.5));
    const std::vector<LoadSpec> loads = {{"l", "b", 3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0}};
    const std::vector<DgSetpoint> dgs = {{"g", "a", DgKind::Sg, 0.0, 1.0, 1.0, 10.0}};
    CHECK_THROWS_AS(solve_operating_point(topo, {}, loads, dgs), NumericError);
  }

  TEST_CASE("step injection: removal oracle, sparsity and linearity") {
    const auto topo = ring();
    const Mat Y0 = build_admittance(topo, {{"S1", true}, {"S2", true}});
    Vec V0(8);
    V0 << 1.0, 0.0, 0.98, -0.02, 0.97, -0.03, 0.99, -0.01;
    CHECK(delta_injection(Y0, Y0, V0).dI_T.norm() == 0.0);

    const Mat Y1 = build_admittance(topo, {{"S1", true}, {"S2", false}});
    const auto d = delta_injection(Y0, Y1, V0, "S2 -> open");
    const cd y = topo.lines[3].y.y();
    const CVec v = from_dq(V0);
    // Removing line d-a at node a: y (V_a - V_d); at node d: y (V_d - V_a).
    CHECK(std::abs(cd(d.dI_T(0), d.dI_T(1)) - y * (v(0) - v(3))) < 1e-14);
    CHECK(std::abs(cd(d.dI_T(6), d.dI_T(7)) - y * (v(3) - v(0))) < 1e-14);
    CHECK(d.dI_T.segment(2, 4).norm() == 0.0);
    CHECK(d.touched_nodes == std::vector<std::size_t>{0, 3});
    CHECK((d.dI_T - (Y1 - Y0) * V0).norm() < 1e-14);

    const Mat Y2 = build_admittance(topo, {{"S1", false}, {"S2", true}});
    const Mat Y12 = build_admittance(topo, {{"S1", false}, {"S2", false}});
    const Vec sum = delta_injection(Y0, Y1, V0).dI_T + delta_injection(Y0, Y2, V0).dI_T;
    CHECK((delta_injection(Y0, Y12, V0).dI_T - sum).norm() < 1e-13);
    CHECK_THROWS_AS(delta_injection(Y0, Y1, Vec::Zero(4)), InputError);
  }

  TEST_CASE("dq helpers round trip") {
    CVec v(2);
    v << cd(1.0, -0.5), cd(0.2, 0.3);
    CHECK((from_dq(to_dq(v)) - v).norm() == 0.0);
  }
  TEST_CASE("reactive sharing: rating-proportional Q, only the reference bus regulated") {
    const auto topo = ring();
    const SwitchState sw = {{"S1", true}, {"S2", true}};
    const std::vector<LoadSpec> loads = {{"l1", "b", 0.3, 0.12}, {"l2", "d", 0.25, 0.08}};
    const std::vector<DgSetpoint> dgs = {{"g1", "a", DgKind::Sg, 0.0, 1.0, 0.6, 0.6},
                                         {"g2", "c", DgKind::Ig, 0.0, 1.0, 0.4, 0.3}};
    PowerFlowOptions opt;
    opt.reactive_sharing = true;
    const auto op = solve_operating_point(topo, sw, loads, dgs, opt);
    CHECK(op.residual < 1e-8);
    CHECK(op.S_dg[0].imag() / op.S_dg[1].imag() == doctest::Approx(0.6 / 0.3).epsilon(1e-9));
    CHECK(std::abs(op.V(0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(std::abs(op.V(2)) - 1.0) > 1e-6);
    // Reactive balance: generation equals load plus the reactive power absorbed by the lines.
    const CMat Y = build_admittance_complex(topo, sw);
    cd s_net = 0.0;
    for (Eigen::Index i = 0; i < 4; ++i) s_net += op.V(i) * std::conj(-(Y * op.V)(i));
    double q_gen = 0.0, q_load = 0.0;
    for (const cd& s : op.S_dg) q_gen += s.imag();
    for (const cd& s : op.S_load) q_load += s.imag();
    CHECK(q_gen == doctest::Approx(q_load + s_net.imag()).epsilon(1e-8));
  }

  TEST_CASE("energized nodes split into two islands are rejected with their names") {
    NetworkTopology t;
    t.nodes = {"a", "b", "c", "d"};
    t.lines = {{"a", "b", AdmittanceBlock::from_impedance(0.01, 0.05), ""},
               {"b", "c", AdmittanceBlock::from_impedance(0.01, 0.05), "S"},
               {"c", "d", AdmittanceBlock::from_impedance(0.01, 0.05), ""}};
    const std::vector<DgSetpoint> dgs = {{"g", "a", DgKind::Sg, 0.0, 1.0, 0.5, 1.0},
                                         {"h", "d", DgKind::Ig, 0.0, 1.0, 0.5, 1.0}};
    try {
      solve_operating_point(t, {{"S", false}}, {}, dgs);
      FAIL("split islands accepted");
    } catch (const InputError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("c, d") != std::string::npos);
    }
    CHECK_NOTHROW(solve_operating_point(t, {{"S", true}}, {}, dgs));
  }
}
