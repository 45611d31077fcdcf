#include "dysim/topology.hpp"

#include <algorithm>

#include "dysim/errors.hpp"

namespace dysim {

void SystemConfig::validate() const {
  if (n_gpu < 2) throw ConfigError("n_gpu must be >= 2 (got " + std::to_string(n_gpu) + ")");
  if (n_switch < 1) throw ConfigError("n_switch must be >= 1");
  if (flit_bytes <= 0) throw ConfigError("flit_bytes must be > 0");
  if (link_bw_per_dir <= 0) throw ConfigError("link_bw_per_dir must be > 0");
  if (link_latency_ns < 0) throw ConfigError("link_latency_ns must be >= 0");
  if (vc_count < 2 || vc_count % 2 != 0) throw ConfigError("vc_count must be even and >= 2");
  if (vc_depth < 1) throw ConfigError("vc_depth must be >= 1");
  if (reduction_buffer_bytes <= 0) throw ConfigError("reduction_buffer_bytes must be > 0");
  if (multimemq_entries < 1) throw ConfigError("multimemq_entries must be >= 1");
  if (al_tlb_entries < 1) throw ConfigError("al_tlb_entries must be >= 1");
  if (ts_table_entries < 1 || or_table_entries < 1) throw ConfigError("tracker tables need >= 1 entry");
}

SystemConfig system_preset(const std::string& name) {
  SystemConfig cfg;
  cfg.preset = name;
  if (name == "nvl32") {
    cfg.n_gpu = 32;
  } else if (name == "dgx-h100") {
    cfg.n_gpu = 8;
  } else if (name == "nvl64") {
    cfg.n_gpu = 64;
    cfg.link_bw_per_dir = 2 * 450e9;
  } else {
    throw ConfigError("unknown system preset '" + name + "'");
  }
  return cfg;
}

SimTime LinkEndpoint::transmit(std::int64_t n_flits, SimTime ready_at) {
  if (n_flits < 1) throw EngineError("transmit requires at least one flit");
  const SimTime start = std::max(ready_at, busy_until_);
  const SimTime ser = n_flits * flit_time_;
  busy_until_ = start + ser;
  busy_time_ += ser;
  flits_ += n_flits;
  return busy_until_ + latency_;
}

Topology build_topology(const SystemConfig& cfg) {
  cfg.validate();
  Topology topo;
  topo.cfg = cfg;
  for (Direction d : {Direction::kUp, Direction::kDown}) {
    for (int g = 0; g < cfg.n_gpu; ++g) {
      for (int p = 0; p < cfg.n_switch; ++p) topo.links.push_back(LinkId{g, d, p});
    }
  }
  return topo;
}

}  // namespace dysim
