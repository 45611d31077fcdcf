#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "dysim/addressing.hpp"
#include "dysim/baselines.hpp"
#include "dysim/fusion.hpp"
#include "dysim/gpu_node.hpp"
#include "dysim/metrics.hpp"
#include "dysim/topology.hpp"
#include "dysim/workload.hpp"

namespace dysim {

enum class PartitionMode : std::uint8_t { kFixed, kProportional };

struct RunConfig {
  SystemConfig sys;
  ModelConfig model;
  Distribution dist;
  std::uint64_t seed = 1;
  Method method = Method::kDySharpFull;

  ComputeModel compute;
  HubLatency hub;
  int tsize = 128;
  std::int64_t fragment_bytes = 256;
  bool target_list_in_shared = true;

  // Compute disabled; Dispatch and Combine run concurrently on independent
  // data (Combine reads the previous layer's mapping).
  bool pure_comm = false;

  PartitionMode partition = PartitionMode::kFixed;
  int comm_sms = 16;  // per communication group under the fixed partition
  bool share_gemm = true;
  double poll_ns = 100.0;
  // Unfinished ld_reduce fragments per Combine SM, pooled per GPU. Fixed
  // unless adaptive_window, which starts at combine_window, grows by one per
  // clean completion until the first congestion feedback (a marked or
  // evicted response), then halves on feedback at most once per round trip,
  // never below combine_window, and grows by one per window of completions up
  // to combine_window_max.
  int combine_window = 24;
  int combine_window_max = 256;
  bool adaptive_window = false;
  // The switch marks a reduction response when the source port's buffer holds
  // at least this fraction of its capacity.
  double window_mark_fraction = 0.5;

  TlbPolicy tlb_policy = TlbPolicy::kLru;
  double explicit_compute_tax = 0.15;
  double explicit_comm_overhead = 0.05;
  std::int64_t metadata_bytes_per_expert = 4;

  std::uint64_t max_events = 2'000'000'000ULL;
  std::ostream* flit_dump = nullptr;  // one line per injected packet when set

  void validate() const;
};

// Per-stage standalone times (Dispatch, GEMM-1, GEMM-2, Combine) of the
// unicast baseline, from link and compute arithmetic alone.
std::array<double, 4> standalone_stage_times(const RunConfig& cfg, const RoutingTable& routing);
SMPartition resolve_partition(const RunConfig& cfg, const RoutingTable& routing);

// Simulates one MoE layer end to end. Invariant failures are reported in
// RunMetrics::violations rather than thrown.
RunMetrics run_method(const RunConfig& cfg, const RoutingTable& routing);
RunMetrics run_method(const RunConfig& cfg);

}  // namespace dysim
