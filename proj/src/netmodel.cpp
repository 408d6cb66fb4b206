#include "gridloop/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

namespace gridloop {

AdmittanceBlock AdmittanceBlock::from_impedance(double r, double x) {
  const cd z(r, x);
  if (std::abs(z) == 0.0) throw InputError("zero line impedance");
  const cd y = 1.0 / z;
  return {y.real(), y.imag()};
}

std::size_t NetworkTopology::index(const std::string& node) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i] == node) return i;
  throw InputError("unknown node '" + node + "'");
}

std::vector<std::string> NetworkTopology::switch_ids() const {
  std::vector<std::string> out;
  for (const Line& l : lines)
    if (!l.switch_id.empty()) out.push_back(l.switch_id);
  return out;
}

void NetworkTopology::validate() const {
  std::set<std::string> names(nodes.begin(), nodes.end());
  if (names.size() != nodes.size()) throw InputError("duplicate node labels");
  std::set<std::string> sws;
  for (const Line& l : lines) {
    if (l.from == l.to) throw InputError("self-loop line at node '" + l.from + "'");
    (void)index(l.from);
    (void)index(l.to);
    if (!std::isfinite(l.y.G) || !std::isfinite(l.y.B)) throw InputError("non-finite line admittance");
    if (!l.switch_id.empty() && !sws.insert(l.switch_id).second)
      throw InputError("duplicate switch id '" + l.switch_id + "'");
  }
  // Connected with all switches closed.
  if (nodes.empty()) return;
  std::vector<std::vector<std::size_t>> adj(nodes.size());
  for (const Line& l : lines) {
    adj[index(l.from)].push_back(index(l.to));
    adj[index(l.to)].push_back(index(l.from));
  }
  std::vector<bool> seen(nodes.size(), false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        q.push(v);
      }
  }
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (!seen[i]) throw InputError("network is not connected with all switches closed: node '" + nodes[i] + "'");
}

void validate_switch_state(const NetworkTopology& topo, const SwitchState& sw) {
  const auto ids = topo.switch_ids();
  for (const auto& id : ids)
    if (!sw.count(id)) throw InputError("switch state does not cover switch '" + id + "'");
  for (const auto& [id, closed] : sw) {
    (void)closed;
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) throw InputError("unknown switch '" + id + "'");
  }
}

bool line_closed(const Line& l, const SwitchState& sw) {
  if (l.switch_id.empty()) return true;
  const auto it = sw.find(l.switch_id);
  if (it == sw.end()) throw InputError("switch state does not cover switch '" + l.switch_id + "'");
  return it->second;
}

CMat build_admittance_complex(const NetworkTopology& topo, const SwitchState& sw) {
  validate_switch_state(topo, sw);
  const auto n = static_cast<Eigen::Index>(topo.size());
  CMat Y = CMat::Zero(n, n);
  for (const Line& l : topo.lines) {
    if (!line_closed(l, sw)) continue;
    const auto j = static_cast<Eigen::Index>(topo.index(l.from));
    const auto k = static_cast<Eigen::Index>(topo.index(l.to));
    const cd y = l.y.y();
    Y(j, j) -= y;
    Y(k, k) -= y;
    Y(j, k) += y;
    Y(k, j) += y;
  }
  return Y;
}

Mat build_admittance(const NetworkTopology& topo, const SwitchState& sw) {
  const CMat Yc = build_admittance_complex(topo, sw);
  const Eigen::Index n = Yc.rows();
  Mat Y = Mat::Zero(2 * n, 2 * n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = 0; k < n; ++k) {
      const cd y = Yc(j, k);
      if (y == cd(0.0, 0.0)) continue;
      Y(2 * j, 2 * k) = y.real();
      Y(2 * j, 2 * k + 1) = -y.imag();
      Y(2 * j + 1, 2 * k) = y.imag();
      Y(2 * j + 1, 2 * k + 1) = y.real();
    }
  return Y;
}

void LoadSpec::validate() const {
  if (std::abs(zp + ip + pp - 1.0) > 1e-9 || std::abs(zq + iq + pq - 1.0) > 1e-9)
    throw InputError("load '" + id + "': ZIP coefficients must sum to 1");
}

cd LoadSpec::power(cd v) const {
  const double m = std::abs(v);
  return {p0 * (zp * m * m + ip * m + pp), q0 * (zq * m * m + iq * m + pq)};
}

cd LoadSpec::current(cd v) const {
  if (std::abs(v) == 0.0) return {0.0, 0.0};
  return std::conj(power(v) / v);
}

Vec OperatingPoint::v_dq() const { return to_dq(V); }

Vec to_dq(const CVec& v) {
  Vec out(2 * v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out(2 * i) = v(i).real();
    out(2 * i + 1) = v(i).imag();
  }
  return out;
}

CVec from_dq(const Vec& v) {
  CVec out(v.size() / 2);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = cd(v(2 * i), v(2 * i + 1));
  return out;
}

std::vector<bool> energized_nodes(const NetworkTopology& topo, const SwitchState& sw,
                                  const std::vector<DgSetpoint>& dgs) {
  std::vector<std::vector<std::size_t>> adj(topo.size());
  for (const Line& l : topo.lines) {
    if (!line_closed(l, sw)) continue;
    adj[topo.index(l.from)].push_back(topo.index(l.to));
    adj[topo.index(l.to)].push_back(topo.index(l.from));
  }
  std::vector<bool> on(topo.size(), false);
  std::queue<std::size_t> q;
  for (const DgSetpoint& d : dgs) {
    const std::size_t i = topo.index(d.node);
    if (!on[i]) {
      on[i] = true;
      q.push(i);
    }
  }
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v : adj[u])
      if (!on[v]) {
        on[v] = true;
        q.push(v);
      }
  }
  return on;
}

OperatingPoint solve_operating_point(const NetworkTopology& topo, const SwitchState& sw,
                                     const std::vector<LoadSpec>& loads, const std::vector<DgSetpoint>& dgs,
                                     const PowerFlowOptions& opt) {
  validate_switch_state(topo, sw);
  if (dgs.empty()) throw InputError("operating point needs at least one DG");
  for (const LoadSpec& l : loads) l.validate();
  const std::size_t N = topo.size();
  const std::vector<bool> on = energized_nodes(topo, sw, dgs);

  // Energized nodes must form one island: a separate island would need its own angle reference.
  {
    std::vector<std::vector<std::size_t>> adj(N);
    for (const Line& l : topo.lines)
      if (line_closed(l, sw)) {
        adj[topo.index(l.from)].push_back(topo.index(l.to));
        adj[topo.index(l.to)].push_back(topo.index(l.from));
      }
    std::size_t root = N;
    for (const DgSetpoint& d : dgs)
      if (d.kind == DgKind::Sg) {
        root = topo.index(d.node);
        break;
      }
    if (root == N) root = topo.index(dgs.front().node);
    std::vector<bool> seen(N, false);
    std::queue<std::size_t> q;
    seen[root] = true;
    q.push(root);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v : adj[u])
        if (!seen[v]) {
          seen[v] = true;
          q.push(v);
        }
    }
    std::string stray;
    for (std::size_t i = 0; i < N; ++i)
      if (on[i] && !seen[i]) stray += (stray.empty() ? "" : ", ") + topo.nodes[i];
    if (!stray.empty())
      throw InputError("switch state splits the network into separate energized islands; nodes not connected to the reference unit: " + stray);
  }

  // Local indexing of energized nodes.
  std::vector<long> loc(N, -1);
  std::vector<std::size_t> glob;
  for (std::size_t i = 0; i < N; ++i)
    if (on[i]) {
      loc[i] = static_cast<long>(glob.size());
      glob.push_back(i);
    }
  const std::size_t n = glob.size();

  // Capacity check against nominal-voltage demand of energized loads.
  cd demand(0.0, 0.0);
  double capacity = 0.0;
  for (const LoadSpec& l : loads)
    if (on[topo.index(l.node)]) demand += l.power(cd(1.0, 0.0));
  for (const DgSetpoint& d : dgs) capacity += d.rating;
  if (capacity > 0.0 && std::abs(demand) > capacity) {
    std::ostringstream os;
    os << "capacity shortfall: energized demand " << std::abs(demand) << " pu exceeds DG capacity " << capacity << " pu";
    throw CapacityShortfall(os.str());
  }

  const CMat Yfull = build_admittance_complex(topo, sw);
  CMat Ybus(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      Ybus(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          -Yfull(static_cast<Eigen::Index>(glob[a]), static_cast<Eigen::Index>(glob[b]));

  // Bus roles.
  std::vector<bool> is_dg(n, false);
  std::vector<double> vset(n, 1.0);
  std::size_t ref_dg = dgs.size();
  for (std::size_t g = 0; g < dgs.size(); ++g) {
    const long li = loc[topo.index(dgs[g].node)];
    is_dg[static_cast<std::size_t>(li)] = true;
    vset[static_cast<std::size_t>(li)] = dgs[g].v_set;
    if (ref_dg == dgs.size() && dgs[g].kind == DgKind::Sg) ref_dg = g;
  }
  if (ref_dg == dgs.size()) ref_dg = 0;
  const auto ref_bus = static_cast<std::size_t>(loc[topo.index(dgs[ref_dg].node)]);

  std::vector<double> k(dgs.size(), 0.0);
  if (opt.distributed_slack) {
    double sum = 0.0;
    for (const DgSetpoint& d : dgs) sum += d.participation;
    if (!(sum > 0.0)) throw InputError("distributed slack needs positive participation factors");
    for (std::size_t g = 0; g < dgs.size(); ++g) k[g] = dgs[g].participation / sum;
  } else {
    k[ref_dg] = 1.0;
  }

  // Voltage-controlled buses: every DG bus, or only the reference bus under reactive sharing.
  std::vector<bool> pv_bus(n, false);
  for (std::size_t i = 0; i < n; ++i) pv_bus[i] = opt.reactive_sharing ? i == ref_bus : is_dg[i];
  std::vector<double> kq(dgs.size(), 0.0);
  if (opt.reactive_sharing) {
    double sum = 0.0;
    for (const DgSetpoint& d : dgs) sum += d.rating;
    if (!(sum > 0.0)) throw InputError("reactive sharing needs positive DG ratings");
    for (std::size_t g = 0; g < dgs.size(); ++g) kq[g] = dgs[g].rating / sum;
  }

  // Unknown layout: theta (all but ref bus), |V| (non-PV buses), lambda, mu (reactive sharing).
  std::vector<long> th_col(n, -1), vm_col(n, -1);
  long ncol = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (i != ref_bus) th_col[i] = ncol++;
  for (std::size_t i = 0; i < n; ++i)
    if (!pv_bus[i]) vm_col[i] = ncol++;
  const long lam_col = ncol++;
  const long mu_col = opt.reactive_sharing ? ncol++ : -1;
  // Equations: P at all buses, Q at non-PV buses (all buses under reactive sharing).
  std::vector<long> q_row(n, -1);
  long nrow = static_cast<long>(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!pv_bus[i] || opt.reactive_sharing) q_row[i] = nrow++;

  std::vector<double> th(n, 0.0), vm(vset);
  double lambda = std::real(demand);
  double mu = std::imag(demand);

  std::vector<std::vector<const LoadSpec*>> bus_loads(n);
  for (const LoadSpec& l : loads) {
    const long li = loc[topo.index(l.node)];
    if (li >= 0) bus_loads[static_cast<std::size_t>(li)].push_back(&l);
  }
  std::vector<std::vector<std::size_t>> bus_dgs(n);
  for (std::size_t g = 0; g < dgs.size(); ++g) bus_dgs[static_cast<std::size_t>(loc[topo.index(dgs[g].node)])].push_back(g);

  auto voltages = [&]() {
    CVec V(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) V(static_cast<Eigen::Index>(i)) = std::polar(vm[i], th[i]);
    return V;
  };

  Vec F(nrow);
  auto residual = [&](const CVec& V) {
    const CVec I = Ybus * V;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const cd S = V(ii) * std::conj(I(ii));
      double pg = 0.0, qg = 0.0;
      for (std::size_t g : bus_dgs[i]) {
        pg += dgs[g].p_sched + k[g] * lambda;
        qg += kq[g] * mu;
      }
      cd sl(0.0, 0.0);
      for (const LoadSpec* l : bus_loads[i]) sl += l->power(V(ii));
      F(static_cast<Eigen::Index>(i)) = S.real() - pg + sl.real();
      if (q_row[i] >= 0) F(q_row[i]) = S.imag() - qg + sl.imag();
    }
  };

  OperatingPoint op;
  int it = 0;
  for (;; ++it) {
    const CVec V = voltages();
    residual(V);
    const double res = F.size() ? F.cwiseAbs().maxCoeff() : 0.0;
    op.residual = res;
    if (res < opt.tol) break;
    if (it >= opt.max_iter) {
      std::ostringstream os;
      os << "power flow did not converge after " << opt.max_iter << " iterations (residual " << res << ")";
      throw NumericError(os.str());
    }
    const CVec I = Ybus * V;
    Mat J = Mat::Zero(nrow, ncol);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t j = 0; j < n; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const cd y = Ybus(ii, jj);
        if (y == cd(0.0, 0.0) && i != j) continue;
        // dS_i/dtheta_j and dS_i/d|V_j|
        cd dth = cd(0.0, 1.0) * V(ii) * std::conj(-y * V(jj));
        cd dvm = V(ii) * std::conj(y * V(jj) / vm[j]);
        if (i == j) {
          dth += cd(0.0, 1.0) * V(ii) * std::conj(I(ii));
          dvm += std::conj(I(ii)) * V(ii) / vm[i];
        }
        if (th_col[j] >= 0) {
          J(ii, th_col[j]) += dth.real();
          if (q_row[i] >= 0) J(q_row[i], th_col[j]) += dth.imag();
        }
        if (vm_col[j] >= 0) {
          J(ii, vm_col[j]) += dvm.real();
          if (q_row[i] >= 0) J(q_row[i], vm_col[j]) += dvm.imag();
        }
      }
      if (vm_col[i] >= 0) {
        for (const LoadSpec* l : bus_loads[i]) {
          J(ii, vm_col[i]) += l->p0 * (2.0 * l->zp * vm[i] + l->ip);
          if (q_row[i] >= 0) J(q_row[i], vm_col[i]) += l->q0 * (2.0 * l->zq * vm[i] + l->iq);
        }
      }
      for (std::size_t g : bus_dgs[i]) {
        J(ii, lam_col) -= k[g];
        if (mu_col >= 0) J(q_row[i], mu_col) -= kq[g];
      }
    }
    Eigen::FullPivLU<Mat> lu(J);
    if (!lu.isInvertible()) throw NumericError("power flow Jacobian is singular");
    const Vec dx = lu.solve(-F);
    for (std::size_t i = 0; i < n; ++i) {
      if (th_col[i] >= 0) th[i] += dx(th_col[i]);
      if (vm_col[i] >= 0) vm[i] += dx(vm_col[i]);
    }
    lambda += dx(lam_col);
    if (mu_col >= 0) mu += dx(mu_col);
  }
  op.iterations = it;
  op.ref_dg = ref_dg;

  const CVec Vl = voltages();
  const CVec Il = Ybus * Vl;
  op.V = CVec::Zero(static_cast<Eigen::Index>(N));
  op.energized = on;
  for (std::size_t i = 0; i < n; ++i) op.V(static_cast<Eigen::Index>(glob[i])) = Vl(static_cast<Eigen::Index>(i));
  op.I_node = Yfull * op.V;

  op.S_load.resize(loads.size());
  double pl = 0.0;
  for (std::size_t j = 0; j < loads.size(); ++j) {
    const std::size_t i = topo.index(loads[j].node);
    op.S_load[j] = on[i] ? loads[j].power(op.V(static_cast<Eigen::Index>(i))) : cd(0.0, 0.0);
    pl += op.S_load[j].real();
  }
  op.S_dg.resize(dgs.size());
  op.I_dg.resize(dgs.size());
  double pg_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (bus_dgs[i].empty()) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    cd sl(0.0, 0.0);
    for (const LoadSpec* l : bus_loads[i]) sl += l->power(Vl(ii));
    const double q_bus = (Vl(ii) * std::conj(Il(ii))).imag() + sl.imag();
    double wsum = 0.0;
    for (std::size_t g : bus_dgs[i]) wsum += std::max(dgs[g].rating, 1e-12);
    for (std::size_t g : bus_dgs[i]) {
      const double p = dgs[g].p_sched + k[g] * lambda;
      const double q = opt.reactive_sharing ? kq[g] * mu : q_bus * std::max(dgs[g].rating, 1e-12) / wsum;
      op.S_dg[g] = cd(p, q);
      op.I_dg[g] = std::conj(op.S_dg[g] / Vl(ii));
      pg_total += p;
    }
  }
  op.losses = pg_total - pl;
  return op;
}

DeltaInjection delta_injection(const Mat& Y_B, const Mat& Y_A, const Vec& V0, std::string cause) {
  if (Y_B.rows() != Y_A.rows() || Y_B.cols() != Y_A.cols() || Y_A.cols() != V0.size())
    throw InputError("delta_injection: dimension mismatch");
  const Mat dY = Y_A - Y_B;
  DeltaInjection d;
  d.cause = std::move(cause);
  d.dI_T = Vec::Zero(V0.size());
  // Only block rows with a nonzero admittance change contribute.
  for (Eigen::Index j = 0; j < V0.size() / 2; ++j) {
    const auto rows = dY.middleRows(2 * j, 2);
    if (rows.cwiseAbs().maxCoeff() == 0.0) continue;
    d.dI_T.segment(2 * j, 2) = rows * V0;
    d.touched_nodes.push_back(static_cast<std::size_t>(j));
  }
  return d;
}

}  // namespace gridloop
