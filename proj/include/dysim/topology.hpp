#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dysim/sim_time.hpp"

namespace dysim {

struct SystemConfig {
  std::string preset = "nvl32";
  int n_gpu = 32;
  // Physical switches. 1 = one logical switch with aggregate-bandwidth ports;
  // >1 sprays packets round-robin over that many planes of bw/n_switch each.
  int n_switch = 1;
  double link_bw_per_dir = 450e9;  // bytes/s
  double link_latency_ns = 250.0;
  int flit_bytes = 16;
  int vc_count = 16;  // split evenly between request and response classes
  int vc_depth = 256;
  std::int64_t reduction_buffer_bytes = 64 * 1024;
  int multimemq_entries = 32;
  int al_tlb_entries = 512;
  int ts_table_entries = 1024;
  int or_table_entries = 1024;
  double switch_latency_ns = 50.0;

  SimTime flit_time() const {
    return serialization_time(flit_bytes, link_bw_per_dir / n_switch);
  }
  SimTime link_latency() const { return from_ns(link_latency_ns); }
  int vcs_per_class() const { return vc_count / 2; }

  void validate() const;
};

// "nvl32" (32 GPUs), "dgx-h100" (8 GPUs), "nvl64" (64 GPUs, doubled switch
// count modeled as doubled per-port bandwidth).
SystemConfig system_preset(const std::string& name);

enum class Direction : std::uint8_t { kUp, kDown };  // up = GPU->switch

// One direction of one GPU<->switch link under store-and-forward FIFO
// serialization. The event-driven simulator uses the same arithmetic through
// Channel; this type is the closed-form model.
class LinkEndpoint {
 public:
  LinkEndpoint(SimTime flit_time, SimTime latency) : flit_time_(flit_time), latency_(latency) {}

  // Returns the arrival time of the last flit at the far end.
  SimTime transmit(std::int64_t n_flits, SimTime ready_at);

  SimTime busy_until() const { return busy_until_; }
  std::int64_t flits_sent() const { return flits_; }
  SimTime busy_time() const { return busy_time_; }

 private:
  SimTime flit_time_;
  SimTime latency_;
  SimTime busy_until_ = 0;
  SimTime busy_time_ = 0;
  std::int64_t flits_ = 0;
};

struct LinkId {
  int gpu = 0;
  Direction dir = Direction::kUp;
  int plane = 0;
};

struct Topology {
  SystemConfig cfg;
  std::vector<LinkId> links;  // n_gpu*n_switch up-links followed by down-links

  int n_gpu() const { return cfg.n_gpu; }
  std::size_t up_link_count() const { return links.size() / 2; }
};

Topology build_topology(const SystemConfig& cfg);

}  // namespace dysim
