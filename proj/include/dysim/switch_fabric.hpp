#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dysim/packet.hpp"

namespace dysim {

struct Replica {
  int port = 0;
  Packet packet;
};

// Groups targets by output port (target / experts_per_gpu) and emits one
// trimmed replica per non-empty group, ordered by port.
std::vector<Replica> route_request(const Packet& pkt, int experts_per_gpu, int n_ports);

// Same grouping over bare target lists; returns (port, targets) in port order.
std::vector<std::pair<int, std::vector<std::uint16_t>>> group_targets_by_port(
    std::span<const std::uint16_t> targets, int experts_per_gpu, int n_ports);

struct ReductionSlot {
  std::uint64_t req_id = 0;
  int source_port = 0;
  std::uint32_t remaining = 0;
  std::uint64_t accumulator = 0;
  std::uint32_t folded = 0;  // partials folded into accumulator since the last flush
  std::int64_t bytes_held = 0;
  std::int64_t bytes_needed = 0;
  bool buffered = false;
  bool evicted = false;
};

// Per-port reduction buffer: live slots in insertion order under a byte cap.
class ReductionBuffer {
 public:
  explicit ReductionBuffer(std::int64_t capacity_bytes = 64 * 1024);

  struct InsertResult {
    bool hit = true;
    std::vector<std::uint64_t> evicted;  // req_ids, oldest first
  };

  // Oldest-first eviction until `bytes` fits.
  InsertResult insert(std::uint64_t req_id, std::int64_t bytes);
  void release(std::uint64_t req_id);

  std::int64_t capacity() const { return capacity_; }
  std::int64_t used() const { return used_; }
  std::size_t live() const { return index_.size(); }
  std::uint64_t inserts() const { return inserts_; }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  std::int64_t capacity_;
  std::int64_t used_ = 0;
  std::deque<std::pair<std::uint64_t, std::int64_t>> fifo_;  // may hold released ids lazily
  std::unordered_map<std::uint64_t, std::int64_t> index_;
  std::uint64_t inserts_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t evictions_ = 0;
};

// What the switch must send toward the source after a partial arrives.
struct ReductionOutput {
  std::uint64_t req_id = 0;
  int source_port = 0;
  std::uint64_t value = 0;
  std::uint32_t count = 0;  // partials represented by this packet
  bool final = false;       // true when the reduction is complete
};

struct PartialOutcome {
  enum class Kind : std::uint8_t { kPending, kCompleted, kForwarded };
  Kind kind = Kind::kPending;
  // Completed result or forwarded partial first, then eviction flushes.
  std::vector<ReductionOutput> outputs;
};

// Target-count completion tracking with bounded per-port buffers. Slots take
// buffer space when their first partial arrives; an evicted slot flushes its
// partial accumulator to the source and later partials pass straight through.
class ReductionUnit {
 public:
  ReductionUnit(int n_ports, std::int64_t buffer_bytes);

  const ReductionSlot& open(std::uint64_t req_id, int source_port, std::uint32_t target_count,
                            std::int64_t bytes);
  // `count` is the number of targets the partial covers (a destination GPU
  // pre-sums its local targets into one partial).
  PartialOutcome on_partial(std::uint64_t req_id, std::uint64_t value, std::uint32_t count = 1);
  // True when a partial of `count` targets would emit a packet toward the
  // source (completion or pass-through after eviction), ignoring flushes.
  bool emits_output(std::uint64_t req_id, std::uint32_t count) const;

  std::size_t live_slots() const { return slots_.size(); }
  bool has_slot(std::uint64_t req_id) const { return slots_.count(req_id) != 0; }
  const ReductionBuffer& buffer(int port) const { return buffers_[port]; }
  std::uint64_t opened() const { return opened_; }
  std::uint64_t completed() const { return completed_; }
  std::uint64_t buffer_inserts() const;
  std::uint64_t buffer_hits() const;
  std::uint64_t buffer_evictions() const;

 private:
  std::vector<ReductionBuffer> buffers_;
  std::unordered_map<std::uint64_t, ReductionSlot> slots_;
  std::uint64_t opened_ = 0;
  std::uint64_t completed_ = 0;
};

// Collects per-replica acks of a multicast store and reports when the last
// one arrives, so the source sees exactly one ack.
class AckCollector {
 public:
  void open(std::uint64_t req_id, int source_port, std::uint32_t replicas);
  // Returns the source port when this was the last outstanding ack.
  std::optional<int> on_ack(std::uint64_t req_id);
  // True when the next ack for req_id would be the last one.
  bool completes_on_next(std::uint64_t req_id) const;
  std::size_t live() const { return pending_.size(); }

 private:
  std::unordered_map<std::uint64_t, std::pair<int, std::uint32_t>> pending_;
};

}  // namespace dysim
