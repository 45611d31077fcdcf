#pragma once

#include <cstdint>
#include <list>
#include <optional>
#include <unordered_map>
#include <vector>

#include "dysim/packet.hpp"

namespace dysim {

// 4-byte AL Table entry: bit 31 = valid, bits 0..30 = layout block index.
struct ALTableEntry {
  std::uint32_t raw = 0;

  static constexpr std::uint32_t kValidBit = 1U << 31;
  static constexpr std::uint32_t kMaxLidx = kValidBit - 1;

  static ALTableEntry make(std::uint32_t lidx) { return ALTableEntry{kValidBit | lidx}; }
  bool valid() const { return (raw & kValidBit) != 0; }
  std::uint32_t lidx() const { return raw & kMaxLidx; }
  bool operator==(const ALTableEntry&) const = default;
};
static_assert(sizeof(ALTableEntry) == 4);

enum class TlbPolicy : std::uint8_t { kLru, kFifo };

// Fully associative cache of AL Table entries tagged by (expert, aidx).
class ALTLB {
 public:
  explicit ALTLB(int capacity, TlbPolicy policy = TlbPolicy::kLru);

  std::optional<ALTableEntry> lookup(int expert, std::uint32_t aidx);
  // Inserts or overwrites; evicts per policy when full.
  void fill(int expert, std::uint32_t aidx, ALTableEntry entry);
  void flush();

  int capacity() const { return capacity_; }
  std::size_t size() const { return map_.size(); }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t lookups() const { return hits_ + misses_; }
  double hit_rate() const { return lookups() ? static_cast<double>(hits_) / lookups() : 0.0; }

 private:
  using Tag = std::uint64_t;
  static Tag tag(int expert, std::uint32_t aidx) {
    return (static_cast<Tag>(expert) << 32) | aidx;
  }
  struct Slot {
    ALTableEntry entry;
    std::list<Tag>::iterator pos;
  };

  int capacity_;
  TlbPolicy policy_;
  std::list<Tag> order_;  // front = next victim
  std::unordered_map<Tag, Slot> map_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

struct AidxOffset {
  std::uint64_t aidx = 0;
  std::uint64_t offset = 0;
  bool operator==(const AidxOffset&) const = default;
};

AidxOffset aidx_of(std::uint64_t maddr, std::uint64_t mbase, std::uint64_t bsize);

struct Translation {
  std::uint64_t vaddr = 0;
  std::uint32_t lidx = 0;
  bool allocated = false;  // first touch during Dispatch
  bool tlb_hit = false;
};

struct AlTriplet {
  int expert;
  std::uint32_t aidx;
  std::uint32_t lidx;
};

// Hub memory manager of one destination GPU: per-expert AL sub-tables, the
// layout allocation counters, MV translation, and the AL TLB in front of them.
class ALManager {
 public:
  struct Layout {
    int first_expert = 0;
    int n_local_experts = 1;
    std::uint32_t ntoken = 0;    // algebraic blocks per expert (tokens in the layer)
    std::uint64_t bsize = 0;     // bytes per block (token vector)
    std::uint64_t mbase[2] = {0, 0};  // multimem base per stage, shared across experts
    std::uint64_t vbase_region = 1ULL << 40;  // virtual base of the first (expert, stage) region
  };

  ALManager(const Layout& layout, std::vector<std::uint32_t> nactive, int tlb_entries,
            TlbPolicy policy = TlbPolicy::kLru);

  Translation translate_dispatch(int expert, std::uint64_t maddr);
  Translation translate_combine(int expert, std::uint64_t maddr);

  // Multimem address of algebraic block `aidx` at byte `offset` for a stage.
  std::uint64_t maddr_of(Stage stage, std::uint32_t aidx, std::uint64_t offset = 0) const;
  std::uint64_t vbase(int expert, Stage stage) const;

  std::uint32_t alloc_counter(int expert) const { return sub(expert).counter; }
  std::uint32_t nactive(int expert) const { return sub(expert).nactive; }
  const std::vector<ALTableEntry>& table(int expert) const { return sub(expert).entries; }

  // Requests currently between arrival and completion at the Hub.
  void begin_request() { ++in_flight_; }
  void end_request() { --in_flight_; }
  int in_flight() const { return in_flight_; }

  // Clears every mapping, zeroes the counters, flushes the TLB. Hit/miss
  // counters carry across layers.
  void reset_layer();

  ALTLB& tlb() { return tlb_; }
  const ALTLB& tlb() const { return tlb_; }
  bool tlb_enabled() const { return tlb_enabled_; }
  void set_tlb_enabled(bool on) { tlb_enabled_ = on; }

  std::uint64_t table_bytes() const;
  std::vector<AlTriplet> dump() const;
  const Layout& layout() const { return layout_; }

 private:
  struct SubTable {
    std::vector<ALTableEntry> entries;
    std::uint32_t counter = 0;
    std::uint32_t nactive = 0;
  };

  SubTable& sub(int expert);
  const SubTable& sub(int expert) const;
  Translation lookup(int expert, Stage stage, std::uint64_t maddr, bool allocate);

  Layout layout_;
  std::vector<SubTable> subs_;
  ALTLB tlb_;
  bool tlb_enabled_ = true;
  int in_flight_ = 0;
};

}  // namespace dysim
