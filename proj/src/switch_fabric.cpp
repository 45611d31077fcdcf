#include "dysim/switch_fabric.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "dysim/errors.hpp"
#include "dysim/workload.hpp"

namespace dysim {

std::vector<std::pair<int, std::vector<std::uint16_t>>> group_targets_by_port(
    std::span<const std::uint16_t> targets, int experts_per_gpu, int n_ports) {
  if (targets.empty()) throw ProtocolError("request without targets");
  std::map<int, std::vector<std::uint16_t>> groups;
  for (std::uint16_t t : targets) {
    const int port = t / experts_per_gpu;
    if (port >= n_ports) {
      throw ProtocolError("target " + std::to_string(t) + " maps to nonexistent port " +
                          std::to_string(port));
    }
    groups[port].push_back(t);
  }
  return {groups.begin(), groups.end()};
}

std::vector<Replica> route_request(const Packet& pkt, int experts_per_gpu, int n_ports) {
  std::vector<Replica> out;
  for (auto& [port, ts] : group_targets_by_port(pkt.targets, experts_per_gpu, n_ports)) {
    out.push_back(Replica{port, trim_targets(pkt, ts)});
  }
  return out;
}

ReductionBuffer::ReductionBuffer(std::int64_t capacity_bytes) : capacity_(capacity_bytes) {
  if (capacity_bytes <= 0) throw ConfigError("reduction buffer capacity must be positive");
}

ReductionBuffer::InsertResult ReductionBuffer::insert(std::uint64_t req_id, std::int64_t bytes) {
  if (bytes > capacity_) {
    throw ConfigError("reduction slot of " + std::to_string(bytes) + " B exceeds buffer capacity " +
                      std::to_string(capacity_) + " B");
  }
  if (index_.count(req_id)) throw ProtocolError("slot inserted twice into reduction buffer");
  InsertResult res;
  ++inserts_;
  while (used_ + bytes > capacity_) {
    auto [victim, vbytes] = fifo_.front();
    fifo_.pop_front();
    auto it = index_.find(victim);
    if (it == index_.end()) continue;  // already released
    used_ -= it->second;
    index_.erase(it);
    res.evicted.push_back(victim);
    ++evictions_;
  }
  res.hit = res.evicted.empty();
  if (res.hit) ++hits_;
  fifo_.emplace_back(req_id, bytes);
  index_.emplace(req_id, bytes);
  used_ += bytes;
  return res;
}

void ReductionBuffer::release(std::uint64_t req_id) {
  auto it = index_.find(req_id);
  if (it == index_.end()) return;
  used_ -= it->second;
  index_.erase(it);
  while (!fifo_.empty() && !index_.count(fifo_.front().first)) fifo_.pop_front();
}

ReductionUnit::ReductionUnit(int n_ports, std::int64_t buffer_bytes)
    : buffers_(n_ports, ReductionBuffer(buffer_bytes)) {}

const ReductionSlot& ReductionUnit::open(std::uint64_t req_id, int source_port,
                                         std::uint32_t target_count, std::int64_t bytes) {
  if (target_count == 0) throw ProtocolError("reduction with zero targets");
  if (source_port < 0 || source_port >= static_cast<int>(buffers_.size())) {
    throw ProtocolError("reduction source port out of range");
  }
  auto [it, fresh] = slots_.try_emplace(req_id);
  if (!fresh) throw ProtocolError("duplicate reduction request id " + std::to_string(req_id));
  ReductionSlot& s = it->second;
  s.req_id = req_id;
  s.source_port = source_port;
  s.remaining = target_count;
  s.bytes_needed = bytes;
  ++opened_;
  return s;
}

bool ReductionUnit::emits_output(std::uint64_t req_id, std::uint32_t count) const {
  auto it = slots_.find(req_id);
  if (it == slots_.end()) return false;
  return it->second.evicted || it->second.remaining <= count;
}

PartialOutcome ReductionUnit::on_partial(std::uint64_t req_id, std::uint64_t value,
                                         std::uint32_t count) {
  auto it = slots_.find(req_id);
  if (it == slots_.end()) {
    throw ProtocolError("partial response for unknown reduction " + std::to_string(req_id));
  }
  ReductionSlot& s = it->second;
  if (count == 0 || count > s.remaining) {
    throw ProtocolError("partial for reduction " + std::to_string(req_id) + " covers " +
                        std::to_string(count) + " targets but only " +
                        std::to_string(s.remaining) + " remain");
  }
  PartialOutcome out;
  s.remaining -= count;
  const bool last = s.remaining == 0;

  if (s.evicted) {
    out.kind = PartialOutcome::Kind::kForwarded;
    out.outputs.push_back({req_id, s.source_port, value, count, last});
    if (last) slots_.erase(it);
    return out;
  }

  if (!s.buffered && !last) {
    auto ins = buffers_[s.source_port].insert(req_id, s.bytes_needed);
    s.buffered = true;
    s.bytes_held = s.bytes_needed;
    for (std::uint64_t victim_id : ins.evicted) {
      ReductionSlot& v = slots_.at(victim_id);
      out.outputs.push_back({victim_id, v.source_port, v.accumulator, v.folded, false});
      v.evicted = true;
      v.buffered = false;
      v.bytes_held = 0;
      v.accumulator = 0;
      v.folded = 0;
    }
  }
  s.accumulator = fold(s.accumulator, value);
  s.folded += count;

  if (last) {
    out.kind = PartialOutcome::Kind::kCompleted;
    out.outputs.insert(out.outputs.begin(),
                       ReductionOutput{req_id, s.source_port, s.accumulator, s.folded, true});
    if (s.buffered) buffers_[s.source_port].release(req_id);
    ++completed_;
    slots_.erase(it);
  }
  return out;
}

std::uint64_t ReductionUnit::buffer_inserts() const {
  std::uint64_t n = 0;
  for (auto& b : buffers_) n += b.inserts();
  return n;
}

std::uint64_t ReductionUnit::buffer_hits() const {
  std::uint64_t n = 0;
  for (auto& b : buffers_) n += b.hits();
  return n;
}

std::uint64_t ReductionUnit::buffer_evictions() const {
  std::uint64_t n = 0;
  for (auto& b : buffers_) n += b.evictions();
  return n;
}

void AckCollector::open(std::uint64_t req_id, int source_port, std::uint32_t replicas) {
  if (replicas == 0) throw ProtocolError("multicast with no replicas");
  if (!pending_.try_emplace(req_id, source_port, replicas).second) {
    throw ProtocolError("duplicate store id " + std::to_string(req_id));
  }
}

bool AckCollector::completes_on_next(std::uint64_t req_id) const {
  auto it = pending_.find(req_id);
  return it != pending_.end() && it->second.second == 1;
}

std::optional<int> AckCollector::on_ack(std::uint64_t req_id) {
  auto it = pending_.find(req_id);
  if (it == pending_.end()) throw ProtocolError("ack for unknown store " + std::to_string(req_id));
  if (--it->second.second > 0) return std::nullopt;
  const int src = it->second.first;
  pending_.erase(it);
  return src;
}

}  // namespace dysim
