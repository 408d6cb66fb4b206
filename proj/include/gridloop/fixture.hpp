// Feeder fixture: topology, loads, generating units and controller settings
// loaded from the JSON data file.
#pragma once

#include <string>
#include <vector>

#include "gridloop/control.hpp"
#include "gridloop/devices.hpp"
#include "gridloop/netmodel.hpp"

namespace gridloop {

struct DgUnit {
  std::string id;
  std::string node;
  DgKind kind = DgKind::Sg;
  SgParams sg;  // used when kind == Sg
  IgParams ig;  // used when kind == Ig
  double share = 0.0;  // alpha (SG) or beta (IG)
  double gamma = 0.0;  // IG only
  double rating() const { return kind == DgKind::Sg ? sg.rating : ig.rating; }
};

struct Fixture {
  std::string name;
  NetworkTopology topo;
  SwitchState initial;
  std::vector<LoadSpec> loads;
  std::vector<DgUnit> dgs;  // SGs first, then IGs
  FrConfig cfg;
  double sfc_gain_scale = 1.0;
  std::vector<std::string> pv_nodes;

  std::size_t sg_count() const;
  // Dispatch: no fixed schedule, imbalance shared by the participation factors.
  std::vector<DgSetpoint> setpoints() const;
  FleetShares shares() const;
  // Power-flow settings: distributed active slack and rating-shared reactive power.
  PowerFlowOptions pf_options() const;
  const DgUnit& unit(const std::string& id) const;
};

// Directory holding the bundled data files (GRIDLOOP_DATA_DIR overrides).
std::string data_dir();
std::string default_fixture_path();

// Throws InputError naming the offending field path (e.g. "dgs[2].node").
Fixture parse_fixture(const std::string& json_text, const std::string& origin = "fixture");
Fixture load_fixture(const std::string& path = {});

// Reads a whole file; throws InputError when it cannot be opened.
std::string read_text_file(const std::string& path);

}  // namespace gridloop
