#include "gridloop/reduction.hpp"

#include <limits>
#include <sstream>

namespace gridloop {

NetworkGain network_gain(const Mat& Y, const Mat& D_DG, const Mat& D_L) {
  if (Y.rows() != Y.cols() || D_DG.rows() != Y.rows() || D_L.rows() != Y.rows() || D_DG.cols() != Y.cols() ||
      D_L.cols() != Y.cols())
    throw InputError("network_gain: dimension mismatch");
  const Mat S = Y + D_DG - D_L;
  NetworkGain g;
  if (S.rows() == 0) return g;
  Eigen::JacobiSVD<Mat> svd(S);
  const Vec sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  g.cond = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(g.cond <= 1e12)) {
    std::ostringstream os;
    os << "network gain is singular or ill-conditioned (cond " << g.cond
       << "); likely a floating island without a voltage-forming unit";
    throw NumericError(os.str());
  }
  g.Z = S.partialPivLu().inverse();
  return g;
}

OutputGains output_gains(const Vec& V0, const Vec& I_DG0, const Mat& Z, const Mat& C_DG, const Mat& D_DG) {
  const Mat w = V0.transpose() * D_DG + I_DG0.transpose();
  OutputGains g;
  g.K_I = -w * Z;
  g.K_X = V0.transpose() * C_DG + g.K_I * C_DG;
  return g;
}

MgModel assemble(const AssemblyInput& in) {
  const auto N2 = in.Y.rows();
  if (in.Y.cols() != N2 || N2 % 2 != 0 || in.V0.size() != N2) throw InputError("assemble: network dimension mismatch");
  if (in.block_node.size() != in.blocks.size()) throw InputError("assemble: block/node map size mismatch");
  if (in.D_L.size() * 2 != static_cast<std::size_t>(N2)) throw InputError("assemble: load Jacobian count mismatch");
  if (in.blocks.empty()) throw InputError("assemble: no generating units");

  MgModel m;
  m.n_nodes = static_cast<std::size_t>(N2 / 2);
  const std::size_t U = in.blocks.size();
  Eigen::Index n = 0;
  for (const DgBlock& b : in.blocks) {
    if (b.freq_state >= static_cast<std::size_t>(b.states()) || b.labels.size() != static_cast<std::size_t>(b.states()))
      throw InputError("assemble: unit '" + b.id + "' lacks a labeled frequency state");
    m.block_offset.push_back(n);
    n += b.states();
  }

  m.A_DG = Mat::Zero(n, n);
  m.B_V = Mat::Zero(n, N2);
  m.B_FR_full = Mat::Zero(n, static_cast<Eigen::Index>(U));
  m.C_DG = Mat::Zero(N2, n);
  m.D_DG = Mat::Zero(N2, N2);
  m.D_L = Mat::Zero(N2, N2);
  m.I_DG0 = Vec::Zero(N2);
  for (std::size_t u = 0; u < U; ++u) {
    const DgBlock& b = in.blocks[u];
    const Eigen::Index o = m.block_offset[u], k = b.states();
    if (in.block_node[u] >= m.n_nodes) throw InputError("assemble: unit '" + b.id + "' maps outside the model nodes");
    const auto r = static_cast<Eigen::Index>(2 * in.block_node[u]);
    if (b.ss.D.col(2).norm() != 0.0) throw InputError("assemble: power reference must not feed current directly");
    m.A_DG.block(o, o, k, k) = b.ss.A;
    m.B_V.block(o, r, k, 2) = b.ss.B.leftCols(2);
    m.B_FR_full.block(o, static_cast<Eigen::Index>(u), k, 1) = b.ss.B.col(2);
    m.C_DG.block(r, o, 2, k) = b.ss.C;
    m.D_DG.block(r, r, 2, 2) += b.ss.D.leftCols(2);
    m.I_DG0(r) += b.i0.real();
    m.I_DG0(r + 1) += b.i0.imag();
  }
  for (std::size_t j = 0; j < m.n_nodes; ++j) m.D_L.block(2 * j, 2 * j, 2, 2) = in.D_L[j];
  m.Y = in.Y;
  m.V0 = in.V0;

  const NetworkGain ng = network_gain(m.Y, m.D_DG, m.D_L);
  m.Z = ng.Z;
  m.cond_z = ng.cond;

  const Mat A_full = m.A_DG - m.B_V * m.Z * m.C_DG;
  const Mat B_full = -m.B_V * m.Z;

  // Rotational quotient: r = 1 on every angle state; drop the reference angle.
  std::size_t ref_unit = 0;
  for (std::size_t u = 0; u < U; ++u)
    if (in.blocks[u].kind == DgKind::Sg) {
      ref_unit = u;
      break;
    }
  Vec r = Vec::Zero(n);
  for (std::size_t u = 0; u < U; ++u) r(m.block_offset[u] + static_cast<Eigen::Index>(in.blocks[u].angle_state)) = 1.0;
  const Eigen::Index ref = m.block_offset[ref_unit] + static_cast<Eigen::Index>(in.blocks[ref_unit].angle_state);
  m.T = Mat::Zero(n, n - 1);
  m.P = Mat::Zero(n - 1, n);
  for (Eigen::Index i = 0, c = 0; i < n; ++i) {
    if (i == ref) continue;
    m.T(i, c) = 1.0;
    m.P(c, i) = 1.0;
    m.P(c, ref) = -r(i);
    ++c;
  }
  m.A_MG = m.P * A_full * m.T;
  m.B_MG = m.P * B_full;
  m.B_FR = m.P * m.B_FR_full;

  const OutputGains og = output_gains(m.V0, m.I_DG0, m.Z, m.C_DG, m.D_DG);
  m.K_X = og.K_X * m.T;
  m.K_I = og.K_I;

  m.S_F = Mat::Zero(static_cast<Eigen::Index>(U), n - 1);
  double msum = 0.0;
  for (const DgBlock& b : in.blocks) msum += b.kind == DgKind::Sg ? b.inertia : 0.0;
  if (!(msum > 0.0)) throw InputError("assemble: center-of-inertia weights need at least one SG");
  m.M_total = msum;
  m.c_f = Mat::Zero(1, n - 1);
  for (std::size_t u = 0; u < U; ++u) {
    const DgBlock& b = in.blocks[u];
    m.S_F.row(static_cast<Eigen::Index>(u)) = m.T.row(m.block_offset[u] + static_cast<Eigen::Index>(b.freq_state));
    m.Mbar.push_back(b.kind == DgKind::Sg ? b.inertia / msum : 0.0);
    m.c_f += m.Mbar.back() * m.S_F.row(static_cast<Eigen::Index>(u));
  }

  m.V_x = -m.Z * m.C_DG * m.T;
  m.V_i = -m.Z;
  const auto Ui = static_cast<Eigen::Index>(U);
  m.Pt_x = Mat::Zero(Ui, n - 1);
  m.Pd_x = Mat::Zero(Ui, n - 1);
  m.Pt_i = Mat::Zero(Ui, N2);
  m.Pd_i = Mat::Zero(Ui, N2);
  m.Pt_fr = Mat::Zero(Ui, Ui);
  m.Pd_fr = Mat::Zero(Ui, Ui);
  for (std::size_t u = 0; u < U; ++u) {
    const DgBlock& b = in.blocks[u];
    const Eigen::Index o = m.block_offset[u], k = b.states(), ui = static_cast<Eigen::Index>(u);
    const auto rr = static_cast<Eigen::Index>(2 * in.block_node[u]);
    const Mat Tb = m.T.middleRows(o, k);
    for (int row = 0; row < 2; ++row) {
      const Mat cx = b.aux.C.row(row) * Tb + b.aux.D.block(row, 0, 1, 2) * m.V_x.middleRows(rr, 2);
      const Mat ci = b.aux.D.block(row, 0, 1, 2) * m.V_i.middleRows(rr, 2);
      (row == 0 ? m.Pt_x : m.Pd_x).row(ui) = cx;
      (row == 0 ? m.Pt_i : m.Pd_i).row(ui) = ci;
      (row == 0 ? m.Pt_fr : m.Pd_fr)(ui, ui) = b.aux.D(row, 2);
    }
  }

  m.eig = eigenvalues(m.A_MG);
  m.stable = is_hurwitz(m.eig);
  if (!m.stable && !in.allow_unstable) {
    std::ostringstream os;
    os << "assembled microgrid model is unstable (spectral abscissa " << spectral_abscissa(m.eig) << ")";
    throw NumericError(os.str());
  }
  return m;
}

NrResponse nr_response(const MgModel& m, const Vec& dI_T, double D) {
  if (dI_T.size() != m.B_MG.cols()) throw InputError("nr_response: dI_T dimension mismatch");
  if (!(D >= 0.0)) throw InputError("nr_response: load damping must be nonnegative");
  const Mat B = m.B_MG * dI_T;
  const Mat dk = m.K_I * dI_T;
  NrResponse r;
  r.a = StateSpace(m.A_MG, B, m.K_X, dk);
  r.b = StateSpace(m.A_MG, B, m.c_f, Mat::Zero(1, 1));
  r.p = StateSpace(m.A_MG, B, m.K_X + D * m.c_f, dk);
  return r;
}

}  // namespace gridloop
