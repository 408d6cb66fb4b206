#include "gridloop/fixture.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gridloop {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& path, const std::string& what) {
  throw InputError(origin + ": field '" + path + "' " + what);
}

const json& field(const json& j, const std::string& key, const std::string& path, const std::string& origin) {
  if (!j.is_object()) fail(origin, path, "must be an object");
  const auto it = j.find(key);
  if (it == j.end()) fail(origin, path.empty() ? key : path + "." + key, "is missing");
  return *it;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

double num(const json& j, const std::string& key, const std::string& path, const std::string& origin) {
  const json& v = field(j, key, path, origin);
  if (!v.is_number()) fail(origin, join(path, key), "must be a number");
  return v.get<double>();
}

double num_or(const json& j, const std::string& key, double dflt, const std::string& path, const std::string& origin) {
  if (!j.contains(key)) return dflt;
  return num(j, key, path, origin);
}

std::string str(const json& j, const std::string& key, const std::string& path, const std::string& origin) {
  const json& v = field(j, key, path, origin);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  fail(origin, join(path, key), "must be a string");
}

SgParams parse_sg(const json& j, const std::string& path, const std::string& o, const Bases& b) {
  SgParams p;
  p.rating = num(j, "S_rated_va", path, o) / b.s_base;
  p.M = num(j, "M", path, o);
  p.xd = num(j, "X_d", path, o);
  p.xd1 = num(j, "X_d_tr", path, o);
  p.xd2 = num(j, "X_d_sub", path, o);
  p.xq = num(j, "X_q", path, o);
  p.xq1 = num(j, "X_q_tr", path, o);
  p.xq2 = num(j, "X_q_sub", path, o);
  p.rs = num(j, "R_s", path, o);
  p.td01 = num(j, "T_d0_tr", path, o);
  p.td02 = num(j, "T_d0_sub", path, o);
  p.tq01 = num(j, "T_q0_tr", path, o);
  p.tq02 = num(j, "T_q0_sub", path, o);
  p.ta = num(j, "T_a", path, o);
  p.ka = num(j, "K_a", path, o);
  for (int i = 0; i < 6; ++i) p.gov[static_cast<std::size_t>(i)] = num(j, "T_" + std::to_string(i + 1), path, o);
  p.m = num(j, "m", path, o);
  p.r_f = num_or(j, "r_f", 0.0, path, o);
  return p;
}

IgParams parse_ig(const json& j, const std::string& path, const std::string& o, const Bases& b) {
  IgParams p;
  p.rating = num(j, "S_rated_va", path, o) / b.s_base;
  p.v_dc = num_or(j, "V_DC", 0.0, path, o);
  p.r_f = num(j, "R_f", path, o);
  p.l_f = num(j, "L_f", path, o);
  p.p_i = num(j, "P_i", path, o);
  p.i_i = num(j, "I_i", path, o);
  p.t_e = num(j, "T_E", path, o);
  p.t_f = num(j, "T_f", path, o);
  p.k = num(j, "K", path, o);
  p.n = num(j, "n", path, o);
  p.t_pll = num(j, "T_pll", path, o);
  p.k_v = num(j, "K_v", path, o);
  return p;
}

// Unit entries may override any default key.
json merged(const json& defaults, const json& unit) {
  json out = defaults;
  for (auto it = unit.begin(); it != unit.end(); ++it) out[it.key()] = it.value();
  return out;
}

template <class Fn>
void rethrow_with(const std::string& origin, const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    throw InputError(origin + ": " + path + ": " + e.what());
  }
}

}  // namespace

std::size_t Fixture::sg_count() const {
  std::size_t n = 0;
  for (const DgUnit& d : dgs) n += d.kind == DgKind::Sg ? 1 : 0;
  return n;
}

std::vector<DgSetpoint> Fixture::setpoints() const {
  std::vector<DgSetpoint> out;
  for (const DgUnit& d : dgs) {
    DgSetpoint s;
    s.id = d.id;
    s.node = d.node;
    s.kind = d.kind;
    s.p_sched = 0.0;
    s.v_set = 1.0;
    s.participation = d.share;
    s.rating = d.rating();
    out.push_back(s);
  }
  return out;
}

FleetShares Fixture::shares() const {
  FleetShares s;
  for (const DgUnit& d : dgs) {
    if (d.kind == DgKind::Sg) {
      s.alpha.push_back(d.share);
    } else {
      s.beta.push_back(d.share);
      s.gamma.push_back(d.gamma);
    }
  }
  return s;
}

PowerFlowOptions Fixture::pf_options() const {
  PowerFlowOptions o;
  o.distributed_slack = true;
  o.reactive_sharing = true;
  return o;
}

const DgUnit& Fixture::unit(const std::string& id) const {
  for (const DgUnit& d : dgs)
    if (d.id == id) return d;
  throw InputError("unknown generating unit '" + id + "'");
}

std::string data_dir() {
  if (const char* env = std::getenv("GRIDLOOP_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return GRIDLOOP_DATA_DIR;
}

std::string default_fixture_path() { return data_dir() + "/ieee37_fixture.json"; }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Fixture parse_fixture(const std::string& json_text, const std::string& o) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(o + ": malformed JSON: " + e.what());
  }
  Fixture fx;
  fx.name = j.value("name", std::string("fixture"));

  const json& bases = field(j, "bases", "", o);
  fx.topo.bases.s_base = num(bases, "s_base_va", "bases", o);
  fx.topo.bases.v_base = num(bases, "v_base_v", "bases", o);
  fx.topo.bases.f0 = num(bases, "f0_hz", "bases", o);
  if (!(fx.topo.bases.s_base > 0.0 && fx.topo.bases.v_base > 0.0 && fx.topo.bases.f0 > 0.0))
    fail(o, "bases", "must hold positive values");
  const double zb = fx.topo.bases.z_base();

  const json& nodes = field(j, "nodes", "", o);
  if (!nodes.is_array() || nodes.empty()) fail(o, "nodes", "must be a nonempty array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].is_string()) fail(o, "nodes[" + std::to_string(i) + "]", "must be a string");
    fx.topo.nodes.push_back(nodes[i].get<std::string>());
  }

  const json& cfgs = j.contains("line_configs") ? j["line_configs"] : json::object();
  const json& lines = field(j, "lines", "", o);
  if (!lines.is_array()) fail(o, "lines", "must be an array");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string p = "lines[" + std::to_string(i) + "]";
    const json& l = lines[i];
    Line line;
    line.from = str(l, "from", p, o);
    line.to = str(l, "to", p, o);
    double r = 0.0, x = 0.0;
    if (l.contains("config")) {
      const std::string c = str(l, "config", p, o);
      if (!cfgs.contains(c)) fail(o, p + ".config", "names unknown line configuration '" + c + "'");
      const double miles = num(l, "length_ft", p, o) / 5280.0;
      if (!(miles > 0.0)) fail(o, p + ".length_ft", "must be positive");
      r = num(cfgs[c], "r_ohm_per_mile", "line_configs." + c, o) * miles / zb;
      x = num(cfgs[c], "x_ohm_per_mile", "line_configs." + c, o) * miles / zb;
    } else {
      r = num(l, "r_pu", p, o);
      x = num(l, "x_pu", p, o);
    }
    rethrow_with(o, p, [&] { line.y = AdmittanceBlock::from_impedance(r, x); });
    if (l.contains("switch")) line.switch_id = str(l, "switch", p, o);
    fx.topo.lines.push_back(line);
  }
  rethrow_with(o, "topology", [&] { fx.topo.validate(); });

  const json& sw = field(j, "switches", "", o);
  if (!sw.is_object()) fail(o, "switches", "must be an object");
  for (auto it = sw.begin(); it != sw.end(); ++it) {
    const std::string v = it.value().is_string() ? it.value().get<std::string>() : std::string();
    if (v != "open" && v != "closed") fail(o, "switches." + it.key(), "must be \"open\" or \"closed\"");
    fx.initial[it.key()] = v == "closed";
  }
  rethrow_with(o, "switches", [&] { validate_switch_state(fx.topo, fx.initial); });

  double zip_p[3] = {1.0, 0.0, 0.0}, zip_q[3] = {1.0, 0.0, 0.0};
  if (j.contains("load_model")) {
    for (const char* key : {"zip_p", "zip_q"}) {
      const json& a = field(j["load_model"], key, "load_model", o);
      if (!a.is_array() || a.size() != 3) fail(o, std::string("load_model.") + key, "must be [Z, I, P]");
      double* dst = std::string(key) == "zip_p" ? zip_p : zip_q;
      for (std::size_t k = 0; k < 3; ++k) dst[k] = a[k].get<double>();
    }
  }
  const json& loads = field(j, "loads", "", o);
  if (!loads.is_array()) fail(o, "loads", "must be an array");
  for (std::size_t i = 0; i < loads.size(); ++i) {
    const std::string p = "loads[" + std::to_string(i) + "]";
    LoadSpec l;
    l.id = str(loads[i], "id", p, o);
    l.node = str(loads[i], "node", p, o);
    l.p0 = num(loads[i], "p_kw", p, o) * 1e3 / fx.topo.bases.s_base;
    l.q0 = num(loads[i], "q_kvar", p, o) * 1e3 / fx.topo.bases.s_base;
    l.zp = zip_p[0];
    l.ip = zip_p[1];
    l.pp = zip_p[2];
    l.zq = zip_q[0];
    l.iq = zip_q[1];
    l.pq = zip_q[2];
    rethrow_with(o, p, [&] {
      fx.topo.index(l.node);
      l.validate();
    });
    fx.loads.push_back(l);
  }

  const json& sgd = field(j, "sg_defaults", "", o);
  const json& igd = field(j, "ig_defaults", "", o);
  const json& dgs = field(j, "dgs", "", o);
  if (!dgs.is_array() || dgs.empty()) fail(o, "dgs", "must be a nonempty array");
  std::vector<DgUnit> sgs, igs;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < dgs.size(); ++i) {
    const std::string p = "dgs[" + std::to_string(i) + "]";
    DgUnit u;
    u.id = str(dgs[i], "id", p, o);
    if (!ids.insert(u.id).second) fail(o, p + ".id", "duplicates unit '" + u.id + "'");
    u.node = str(dgs[i], "node", p, o);
    rethrow_with(o, p + ".node", [&] { fx.topo.index(u.node); });
    const std::string kind = str(dgs[i], "kind", p, o);
    if (kind == "sg") {
      u.kind = DgKind::Sg;
      u.sg = parse_sg(merged(sgd, dgs[i]), p, o, fx.topo.bases);
      u.share = num(dgs[i], "alpha", p, o);
      rethrow_with(o, p, [&] { u.sg.validate(); });
      sgs.push_back(u);
    } else if (kind == "ig") {
      u.kind = DgKind::Ig;
      u.ig = parse_ig(merged(igd, dgs[i]), p, o, fx.topo.bases);
      u.share = num(dgs[i], "beta", p, o);
      u.gamma = num(dgs[i], "gamma", p, o);
      rethrow_with(o, p, [&] { u.ig.validate(); });
      igs.push_back(u);
    } else {
      fail(o, p + ".kind", "must be \"sg\" or \"ig\"");
    }
    if (!(u.share >= 0.0 && u.gamma >= 0.0)) fail(o, p, "participation factors must be nonnegative");
  }
  if (sgs.empty()) fail(o, "dgs", "must contain at least one SG (frequency reference)");
  fx.dgs = sgs;
  fx.dgs.insert(fx.dgs.end(), igs.begin(), igs.end());
  {
    // With every switch closed each node must reach a generating unit.
    SwitchState all = fx.initial;
    for (auto& [id, closed] : all) closed = true;
    const std::vector<bool> on = energized_nodes(fx.topo, all, fx.setpoints());
    std::string stray;
    for (std::size_t i = 0; i < on.size(); ++i)
      if (!on[i]) stray += (stray.empty() ? "" : ", ") + fx.topo.nodes[i];
    if (!stray.empty()) fail(o, "lines", "leave a floating island with no generating unit: nodes " + stray);
  }

  const json& c = field(j, "control", "", o);
  fx.cfg.t_l = num(c, "T_L", "control", o);
  fx.cfg.t_h = num(c, "T_H", "control", o);
  fx.cfg.t_s = num(c, "T_S", "control", o);
  fx.cfg.p_f = num(c, "P_f", "control", o);
  fx.cfg.i_f = num(c, "I_f", "control", o);
  fx.cfg.M = num(c, "M", "control", o);
  fx.cfg.D = num(c, "D", "control", o);
  fx.sfc_gain_scale = num_or(c, "sfc_gain_scale", 1.0, "control", o);
  if (!(fx.sfc_gain_scale > 0.0)) fail(o, "control.sfc_gain_scale", "must be positive");
  rethrow_with(o, "control", [&] {
    fx.cfg.validate();
    fx.shares().validate();
  });

  if (j.contains("pv_nodes")) {
    const json& pv = j["pv_nodes"];
    if (!pv.is_array()) fail(o, "pv_nodes", "must be an array");
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (!pv[i].is_string()) fail(o, "pv_nodes[" + std::to_string(i) + "]", "must be a string");
      fx.pv_nodes.push_back(pv[i].get<std::string>());
      rethrow_with(o, "pv_nodes[" + std::to_string(i) + "]", [&] { fx.topo.index(fx.pv_nodes.back()); });
    }
  }
  return fx;
}

Fixture load_fixture(const std::string& path) {
  const std::string p = path.empty() ? default_fixture_path() : path;
  return parse_fixture(read_text_file(p), p);
}

}  // namespace gridloop
