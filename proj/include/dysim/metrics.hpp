#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dysim/sim_time.hpp"

namespace dysim {

enum class FlitCategory : std::uint8_t { kData, kHeader, kTargetExt, kByteEnable, kMetadata, kAck };
inline constexpr int kFlitCategories = 6;
const char* to_string(FlitCategory c);

struct FlitCounts {
  std::array<std::int64_t, kFlitCategories> by_cat{};

  std::int64_t& operator[](FlitCategory c) { return by_cat[static_cast<int>(c)]; }
  std::int64_t operator[](FlitCategory c) const { return by_cat[static_cast<int>(c)]; }
  std::int64_t total() const;
  FlitCounts& operator+=(const FlitCounts& o);
  bool operator==(const FlitCounts&) const = default;
};

enum class StageId : std::uint8_t { kDispatch = 0, kGemm1 = 1, kGemm2 = 2, kCombine = 3 };
inline constexpr int kStages = 4;
const char* to_string(StageId s);

struct Interval {
  SimTime start = 0;
  SimTime end = 0;
  bool operator==(const Interval&) const = default;
};

struct TimelineRow {
  StageId stage;
  int gpu;
  std::string group;  // SM group that executed the stage
  SimTime start;
  SimTime end;
};

// Per link direction: flits by category, merged busy intervals and the
// number of flits actually delivered at the far end.
struct LinkStats {
  FlitCounts flits;
  std::int64_t delivered = 0;
  std::vector<Interval> busy;  // disjoint, sorted
};

struct RunMetrics {
  std::string method;
  int n_gpu = 0;
  int n_planes = 1;
  SimTime flit_time = 0;  // per plane
  SimTime completion = 0;
  bool pure_comm = false;
  std::uint64_t workload_hash = 0;  // routing table, GPU count and token size; method excluded

  // Index gpu * n_planes + plane.
  std::vector<LinkStats> up;
  std::vector<LinkStats> down;
  std::array<Interval, kStages> stage{};  // global first start / last end
  std::array<bool, kStages> stage_active{};
  std::vector<TimelineRow> timeline;

  std::uint64_t tlb_hits = 0;
  std::uint64_t tlb_misses = 0;
  std::uint64_t rb_inserts = 0;
  std::uint64_t rb_hits = 0;
  std::uint64_t rb_evictions = 0;
  std::uint64_t replicas_created = 0;
  std::uint64_t slots_opened = 0;
  std::uint64_t flush_packets = 0;

  int multimemq_peak = 0;
  std::uint64_t multimemq_issued = 0;
  std::uint64_t multimemq_retired = 0;
  int ts_peak_live = 0;
  int or_peak_live = 0;
  std::uint64_t table_overflow_accesses = 0;
  std::uint64_t gemm_borrowed_tbs = 0;

  std::int64_t tokens = 0;
  std::int64_t tokens_combined = 0;
  std::int64_t fold_mismatches = 0;
  std::int64_t fanout_needed_data = 0;   // static-collective data flits to GPUs that needed them
  std::int64_t fanout_useless_data = 0;  // ... to GPUs that did not
  std::uint64_t events = 0;

  std::vector<std::string> violations;  // invariant failures with diagnostics

  bool ok() const { return violations.empty(); }
  FlitCounts total(bool up_dir) const;
  std::int64_t data_flits() const;  // both directions
  double tlb_hit_rate() const;
  double rb_eviction_rate() const;
  // Bandwidth-only lower bound: busiest link direction's flits at line rate.
  SimTime ideal_time() const;
  double useless_ratio() const;
};

// Merges overlapping or touching intervals; input need not be sorted.
std::vector<Interval> merge_intervals(std::vector<Interval> v);
// Busy fraction of one link direction over [w0, w1). Throws on an empty window.
double link_utilization(const LinkStats& link, SimTime w0, SimTime w1);
// Mean busy fraction over all GPUs for one direction and window.
double mean_utilization(const RunMetrics& m, bool up_dir, SimTime w0, SimTime w1);
// Fixed-window samples (default 1 us) of the mean utilization.
std::vector<double> utilization_samples(const RunMetrics& m, bool up_dir,
                                        SimTime window = 1000 * kFsPerNs);

}  // namespace dysim
