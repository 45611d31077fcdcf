#include "dysim/addressing.hpp"

#include <string>

#include "dysim/errors.hpp"

namespace dysim {

ALTLB::ALTLB(int capacity, TlbPolicy policy) : capacity_(capacity), policy_(policy) {
  if (capacity < 1) throw ConfigError("AL TLB capacity must be >= 1");
  map_.reserve(static_cast<std::size_t>(capacity) * 2);
}

std::optional<ALTableEntry> ALTLB::lookup(int expert, std::uint32_t aidx) {
  auto it = map_.find(tag(expert, aidx));
  if (it == map_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  if (policy_ == TlbPolicy::kLru) order_.splice(order_.end(), order_, it->second.pos);
  return it->second.entry;
}

void ALTLB::fill(int expert, std::uint32_t aidx, ALTableEntry entry) {
  const Tag t = tag(expert, aidx);
  auto it = map_.find(t);
  if (it != map_.end()) {
    it->second.entry = entry;
    return;
  }
  if (static_cast<int>(map_.size()) >= capacity_) {
    map_.erase(order_.front());
    order_.pop_front();
  }
  order_.push_back(t);
  map_.emplace(t, Slot{entry, std::prev(order_.end())});
}

void ALTLB::flush() {
  map_.clear();
  order_.clear();
}

AidxOffset aidx_of(std::uint64_t maddr, std::uint64_t mbase, std::uint64_t bsize) {
  if (maddr < mbase) throw ProtocolError("multimem address below the region base");
  if (bsize == 0) throw ConfigError("bsize must be positive");
  const std::uint64_t rel = maddr - mbase;
  return {rel / bsize, rel % bsize};
}

ALManager::ALManager(const Layout& layout, std::vector<std::uint32_t> nactive, int tlb_entries,
                     TlbPolicy policy)
    : layout_(layout), tlb_(tlb_entries, policy) {
  if (layout.bsize == 0) throw ConfigError("bsize must be positive");
  if (static_cast<int>(nactive.size()) != layout.n_local_experts) {
    throw ConfigError("nactive must list every local expert");
  }
  subs_.resize(layout.n_local_experts);
  for (int i = 0; i < layout.n_local_experts; ++i) {
    subs_[i].entries.assign(layout.ntoken, ALTableEntry{});
    subs_[i].nactive = nactive[i];
  }
}

ALManager::SubTable& ALManager::sub(int expert) {
  const int i = expert - layout_.first_expert;
  if (i < 0 || i >= layout_.n_local_experts) {
    throw ProtocolError("expert " + std::to_string(expert) + " is not resident on this GPU");
  }
  return subs_[i];
}

const ALManager::SubTable& ALManager::sub(int expert) const {
  return const_cast<ALManager*>(this)->sub(expert);
}

std::uint64_t ALManager::maddr_of(Stage stage, std::uint32_t aidx, std::uint64_t offset) const {
  return layout_.mbase[static_cast<int>(stage)] + aidx * layout_.bsize + offset;
}

std::uint64_t ALManager::vbase(int expert, Stage stage) const {
  const std::uint64_t stride = std::uint64_t{layout_.ntoken} * layout_.bsize;
  const std::uint64_t region =
      static_cast<std::uint64_t>(expert - layout_.first_expert) * 2 + static_cast<int>(stage);
  return layout_.vbase_region + region * stride;
}

Translation ALManager::lookup(int expert, Stage stage, std::uint64_t maddr, bool allocate) {
  SubTable& st = sub(expert);
  const auto [aidx, offset] = aidx_of(maddr, layout_.mbase[static_cast<int>(stage)], layout_.bsize);
  if (aidx >= layout_.ntoken) {
    throw ProtocolError("algebraic index " + std::to_string(aidx) + " beyond ntoken");
  }
  const auto a = static_cast<std::uint32_t>(aidx);
  Translation tr;
  std::optional<ALTableEntry> hit;
  if (tlb_enabled_) hit = tlb_.lookup(expert, a);
  ALTableEntry entry;
  if (hit) {
    tr.tlb_hit = true;
    entry = *hit;
  } else {
    entry = st.entries[a];
    if (!entry.valid()) {
      if (!allocate) {
        throw ProtocolError("combine addressed expert " + std::to_string(expert) + " aidx " +
                            std::to_string(a) + " which was never dispatched");
      }
      if (st.counter >= st.nactive) {
        throw CapacityError("expert " + std::to_string(expert) + " layout space exhausted (nactive=" +
                            std::to_string(st.nactive) + "): routing and nactive disagree");
      }
      entry = ALTableEntry::make(st.counter++);
      st.entries[a] = entry;
      tr.allocated = true;
    }
    if (tlb_enabled_) tlb_.fill(expert, a, entry);
  }
  tr.lidx = entry.lidx();
  tr.vaddr = vbase(expert, stage) + std::uint64_t{tr.lidx} * layout_.bsize + offset;
  return tr;
}

Translation ALManager::translate_dispatch(int expert, std::uint64_t maddr) {
  return lookup(expert, Stage::kDispatch, maddr, true);
}

Translation ALManager::translate_combine(int expert, std::uint64_t maddr) {
  return lookup(expert, Stage::kCombine, maddr, false);
}

void ALManager::reset_layer() {
  if (in_flight_ != 0) {
    throw ProtocolError("AL table reset with " + std::to_string(in_flight_) + " requests in flight");
  }
  for (auto& st : subs_) {
    std::fill(st.entries.begin(), st.entries.end(), ALTableEntry{});
    st.counter = 0;
  }
  tlb_.flush();
}

std::uint64_t ALManager::table_bytes() const {
  return static_cast<std::uint64_t>(subs_.size()) * layout_.ntoken * sizeof(ALTableEntry);
}

std::vector<AlTriplet> ALManager::dump() const {
  std::vector<AlTriplet> out;
  for (int i = 0; i < layout_.n_local_experts; ++i) {
    const auto& entries = subs_[i].entries;
    for (std::uint32_t a = 0; a < entries.size(); ++a) {
      if (entries[a].valid()) out.push_back({layout_.first_expert + i, a, entries[a].lidx()});
    }
  }
  return out;
}

}  // namespace dysim
