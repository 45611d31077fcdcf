#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "dysim/addressing.hpp"
#include "dysim/errors.hpp"
#include "dysim/rng.hpp"

using namespace dysim;

TEST_CASE("AL table entry packs valid bit and index") {
  const auto e = ALTableEntry::make(12345);
  CHECK(e.valid());
  CHECK(e.lidx() == 12345);
  CHECK_FALSE(ALTableEntry{}.valid());
}

TEST_CASE("TLB LRU keeps the recently used entry") {
  ALTLB t(2, TlbPolicy::kLru);
  t.fill(0, 1, ALTableEntry::make(1));
  t.fill(0, 2, ALTableEntry::make(2));
  CHECK(t.lookup(0, 1).has_value());  // 1 becomes most recent
  t.fill(0, 3, ALTableEntry::make(3));  // evicts 2
  CHECK(t.lookup(0, 1).has_value());
  CHECK_FALSE(t.lookup(0, 2).has_value());
  CHECK(t.lookup(0, 3)->lidx() == 3);
  CHECK(t.hits() == 3);
  CHECK(t.misses() == 1);
}

TEST_CASE("TLB FIFO ignores reuse") {
  ALTLB t(2, TlbPolicy::kFifo);
  t.fill(0, 1, ALTableEntry::make(1));
  t.fill(0, 2, ALTableEntry::make(2));
  CHECK(t.lookup(0, 1).has_value());
  t.fill(0, 3, ALTableEntry::make(3));  // evicts 1, the oldest fill
  CHECK_FALSE(t.lookup(0, 1).has_value());
  CHECK(t.lookup(0, 2).has_value());
  CHECK(t.size() == 2);
  CHECK_THROWS_AS(ALTLB(0), ConfigError);
}

TEST_CASE("aidx/offset split") {
  CHECK(aidx_of(1000 + 3 * 256 + 17, 1000, 256) == AidxOffset{3, 17});
  CHECK_THROWS_AS(aidx_of(10, 11, 256), ProtocolError);
}

namespace {

ALManager::Layout small_layout(int n_local, std::uint32_t ntoken, std::uint64_t bsize) {
  ALManager::Layout l;
  l.first_expert = 4;
  l.n_local_experts = n_local;
  l.ntoken = ntoken;
  l.bsize = bsize;
  l.mbase[0] = 1ULL << 20;
  l.mbase[1] = 1ULL << 30;
  return l;
}

}  // namespace

TEST_CASE("AL map is a dense bijection for randomized arrival orders") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    RngStream rng(seed, "al-property");
    const int n_local = 1 + static_cast<int>(rng.below(4));
    const std::uint32_t ntoken = 8 + static_cast<std::uint32_t>(rng.below(120));
    const std::uint64_t bsize = 256 * (1 + rng.below(8));
    const int frags = static_cast<int>(bsize / 256);
    const auto layout = small_layout(n_local, ntoken, bsize);

    // Each local expert receives a random subset of tokens.
    std::vector<std::vector<std::uint32_t>> chosen(n_local);
    std::vector<std::uint32_t> nactive(n_local);
    for (int e = 0; e < n_local; ++e) {
      for (std::uint32_t a = 0; a < ntoken; ++a) {
        if (rng.uniform() < 0.3) chosen[e].push_back(a);
      }
      nactive[e] = static_cast<std::uint32_t>(chosen[e].size());
    }
    ALManager al(layout, nactive, 1 + static_cast<int>(rng.below(16)));

    // Fragment writes arrive in a random interleaving.
    struct W {
      int e;
      std::uint32_t a;
      int f;
    };
    std::vector<W> writes;
    for (int e = 0; e < n_local; ++e) {
      for (auto a : chosen[e]) {
        for (int f = 0; f < frags; ++f) writes.push_back({e, a, f});
      }
    }
    for (std::size_t i = writes.size(); i > 1; --i) std::swap(writes[i - 1], writes[rng.below(i)]);

    std::vector<std::vector<std::int64_t>> lidx(n_local, std::vector<std::int64_t>(ntoken, -1));
    for (const W& w : writes) {
      const int expert = layout.first_expert + w.e;
      const auto tr = al.translate_dispatch(expert, al.maddr_of(Stage::kDispatch, w.a, 256ULL * w.f));
      if (lidx[w.e][w.a] < 0) {
        CHECK(tr.allocated);
        lidx[w.e][w.a] = tr.lidx;
      } else {
        CHECK_FALSE(tr.allocated);
        CHECK(tr.lidx == lidx[w.e][w.a]);
      }
      CHECK(tr.vaddr == al.vbase(expert, Stage::kDispatch) + std::uint64_t{tr.lidx} * bsize + 256ULL * w.f);
    }

    for (int e = 0; e < n_local; ++e) {
      const int expert = layout.first_expert + e;
      std::set<std::int64_t> seen;
      for (auto a : chosen[e]) seen.insert(lidx[e][a]);
      CAPTURE(seed);
      CHECK(seen.size() == chosen[e].size());  // injective
      if (!seen.empty()) {
        CHECK(*seen.begin() == 0);  // dense from zero
        CHECK(*seen.rbegin() == static_cast<std::int64_t>(chosen[e].size()) - 1);
      }
      CHECK(al.alloc_counter(expert) == nactive[e]);
      for (auto a : chosen[e]) {
        const auto tr = al.translate_combine(expert, al.maddr_of(Stage::kCombine, a));
        CHECK(tr.lidx == lidx[e][a]);
        CHECK_FALSE(tr.allocated);
      }
    }
    CHECK(al.dump().size() == std::accumulate(nactive.begin(), nactive.end(), std::size_t{0}));
  }
}

TEST_CASE("AL manager rejects protocol violations") {
  const auto layout = small_layout(1, 16, 256);
  ALManager al(layout, {2}, 4);
  const int e = layout.first_expert;
  al.translate_dispatch(e, al.maddr_of(Stage::kDispatch, 3));
  al.translate_dispatch(e, al.maddr_of(Stage::kDispatch, 7));
  CHECK_THROWS_AS(al.translate_dispatch(e, al.maddr_of(Stage::kDispatch, 9)), CapacityError);
  CHECK_THROWS_AS(al.translate_combine(e, al.maddr_of(Stage::kCombine, 5)), ProtocolError);
  CHECK_THROWS_AS(al.translate_dispatch(e, al.maddr_of(Stage::kDispatch, 16)), ProtocolError);
  CHECK_THROWS_AS(al.translate_dispatch(e + 1, al.maddr_of(Stage::kDispatch, 1)), ProtocolError);
  CHECK(al.table_bytes() == 16 * 4);

  al.begin_request();
  CHECK_THROWS_AS(al.reset_layer(), ProtocolError);
  al.end_request();
  al.reset_layer();
  CHECK(al.alloc_counter(e) == 0);
  CHECK(al.dump().empty());
  CHECK(al.translate_dispatch(e, al.maddr_of(Stage::kDispatch, 9)).lidx == 0);
}

TEST_CASE("TLB hits on repeated fragments of a block") {
  const auto layout = small_layout(1, 64, 1024);
  ALManager al(layout, {64}, 8);
  const int e = layout.first_expert;
  for (std::uint32_t a = 0; a < 64; ++a) {
    for (int f = 0; f < 4; ++f) al.translate_dispatch(e, al.maddr_of(Stage::kDispatch, a, 256ULL * f));
  }
  CHECK(al.tlb().misses() == 64);
  CHECK(al.tlb().hits() == 192);
  al.set_tlb_enabled(false);
  const auto before = al.tlb().lookups();
  al.translate_combine(e, al.maddr_of(Stage::kCombine, 5));
  CHECK(al.tlb().lookups() == before);
}
