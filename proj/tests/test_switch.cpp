#include <doctest.h>

#include <map>
#include <vector>

#include "dysim/errors.hpp"
#include "dysim/rng.hpp"
#include "dysim/switch_fabric.hpp"

using namespace dysim;

TEST_CASE("route_request groups targets by port and trims each replica") {
  Packet p;
  p.kind = PacketKind::kDymultimemStReq;
  p.maddr = 0x1000;
  p.targets = {13, 2, 9, 3, 15};
  p.payload_bytes = 256;
  const auto reps = route_request(p, 4, 4);
  REQUIRE(reps.size() == 3);
  CHECK(reps[0].port == 0);
  CHECK(reps[0].packet.targets == std::vector<std::uint16_t>{2, 3});
  CHECK(reps[1].port == 2);
  CHECK(reps[1].packet.targets == std::vector<std::uint16_t>{9});
  CHECK(reps[2].port == 3);
  CHECK(reps[2].packet.targets == std::vector<std::uint16_t>{13, 15});
  for (const auto& r : reps) {
    CHECK(r.packet.maddr == p.maddr);
    CHECK(r.packet.payload_bytes == p.payload_bytes);
  }

  p.targets = {16};
  CHECK_THROWS_AS(route_request(p, 4, 4), ProtocolError);
  p.targets.clear();
  CHECK_THROWS_AS(route_request(p, 4, 4), ProtocolError);
}

TEST_CASE("reduction buffer evicts oldest live slots first") {
  ReductionBuffer buf(300);
  CHECK(buf.insert(1, 100).hit);
  CHECK(buf.insert(2, 100).hit);
  CHECK(buf.insert(3, 100).hit);
  buf.release(2);
  CHECK(buf.used() == 200);

  auto r = buf.insert(4, 100);
  CHECK(r.hit);
  r = buf.insert(5, 150);
  CHECK_FALSE(r.hit);
  CHECK(r.evicted == std::vector<std::uint64_t>{1, 3});
  CHECK(buf.live() == 2);
  CHECK(buf.used() == 250);
  CHECK(buf.evictions() == 2);
  CHECK(buf.inserts() == 5);
  CHECK(buf.hits() == 4);

  CHECK_THROWS_AS(buf.insert(4, 10), ProtocolError);
  CHECK_THROWS_AS(buf.insert(9, 301), ConfigError);
  CHECK_THROWS_AS(ReductionBuffer(0), ConfigError);
}

TEST_CASE("reduction unit completes after count-weighted partials") {
  ReductionUnit ru(2, 1024);
  ru.open(7, 1, 5, 256);
  CHECK_FALSE(ru.emits_output(7, 2));
  auto o = ru.on_partial(7, 10, 2);
  CHECK(o.kind == PartialOutcome::Kind::kPending);
  CHECK(o.outputs.empty());
  CHECK(ru.buffer(1).used() == 256);
  o = ru.on_partial(7, 5, 1);
  CHECK(o.outputs.empty());
  CHECK(ru.emits_output(7, 2));
  o = ru.on_partial(7, 1, 2);
  CHECK(o.kind == PartialOutcome::Kind::kCompleted);
  REQUIRE(o.outputs.size() == 1);
  CHECK(o.outputs[0].value == 16);
  CHECK(o.outputs[0].count == 5);
  CHECK(o.outputs[0].final);
  CHECK(o.outputs[0].source_port == 1);
  CHECK(ru.live_slots() == 0);
  CHECK(ru.buffer(1).used() == 0);
  CHECK(ru.completed() == 1);
}

TEST_CASE("single-partial reductions never take buffer space") {
  ReductionUnit ru(1, 64);
  ru.open(1, 0, 3, 64);
  auto o = ru.on_partial(1, 9, 3);
  CHECK(o.kind == PartialOutcome::Kind::kCompleted);
  CHECK(ru.buffer_inserts() == 0);
}

TEST_CASE("reduction unit protocol errors") {
  ReductionUnit ru(2, 1024);
  CHECK_THROWS_AS(ru.open(1, 0, 0, 16), ProtocolError);
  CHECK_THROWS_AS(ru.open(1, 2, 1, 16), ProtocolError);
  ru.open(1, 0, 2, 16);
  CHECK_THROWS_AS(ru.open(1, 0, 2, 16), ProtocolError);
  CHECK_THROWS_AS(ru.on_partial(2, 0), ProtocolError);
  CHECK_THROWS_AS(ru.on_partial(1, 0, 3), ProtocolError);
  CHECK_THROWS_AS(ru.on_partial(1, 0, 0), ProtocolError);
}

TEST_CASE("evicted slots flush and pass later partials through") {
  ReductionUnit ru(1, 100);
  ru.open(1, 0, 3, 60);
  ru.open(2, 0, 3, 60);
  CHECK(ru.on_partial(1, 4).outputs.empty());
  auto o = ru.on_partial(2, 8);
  REQUIRE(o.outputs.size() == 1);
  CHECK(o.outputs[0].req_id == 1);
  CHECK(o.outputs[0].value == 4);
  CHECK(o.outputs[0].count == 1);
  CHECK_FALSE(o.outputs[0].final);

  CHECK(ru.emits_output(1, 1));
  o = ru.on_partial(1, 5);
  CHECK(o.kind == PartialOutcome::Kind::kForwarded);
  REQUIRE(o.outputs.size() == 1);
  CHECK(o.outputs[0].value == 5);
  CHECK_FALSE(o.outputs[0].final);
  o = ru.on_partial(1, 6);
  CHECK(o.outputs[0].final);
  CHECK_FALSE(ru.has_slot(1));
}

TEST_CASE("reduction results are conserved under random interleaving and eviction") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RngStream rng(seed, "reduction-property");
    const int ports = 3;
    ReductionUnit ru(ports, 256);
    struct Pending {
      std::vector<std::uint32_t> counts;
      std::vector<std::uint64_t> values;
    };
    std::map<std::uint64_t, Pending> pending;
    std::map<std::uint64_t, std::uint64_t> expect_sum, got_sum;
    std::map<std::uint64_t, std::uint32_t> expect_n, got_n, finals;
    std::map<std::uint64_t, int> src;

    for (std::uint64_t id = 0; id < 200; ++id) {
      const auto targets = static_cast<std::uint32_t>(1 + rng.below(8));
      src[id] = static_cast<int>(rng.below(ports));
      ru.open(id, src[id], targets, 32 + 32 * static_cast<std::int64_t>(rng.below(4)));
      Pending p;
      for (std::uint32_t left = targets; left > 0;) {
        const auto c = static_cast<std::uint32_t>(1 + rng.below(left));
        p.counts.push_back(c);
        p.values.push_back(rng.below(1000));
        expect_sum[id] += p.values.back();
        left -= c;
      }
      expect_n[id] = targets;
      pending[id] = std::move(p);
    }

    while (!pending.empty()) {
      auto it = pending.begin();
      std::advance(it, static_cast<long>(rng.below(pending.size())));
      Pending& p = it->second;
      const std::uint32_t c = p.counts.back();
      const std::uint64_t v = p.values.back();
      p.counts.pop_back();
      p.values.pop_back();
      for (const auto& out : ru.on_partial(it->first, v, c).outputs) {
        CHECK(out.source_port == src[out.req_id]);
        got_sum[out.req_id] += out.value;
        got_n[out.req_id] += out.count;
        finals[out.req_id] += out.final ? 1 : 0;
      }
      if (p.counts.empty()) pending.erase(it);
      for (int port = 0; port < ports; ++port) CHECK(ru.buffer(port).used() <= 256);
    }

    CHECK(ru.live_slots() == 0);
    CHECK(ru.buffer_evictions() > 0);
    CHECK(got_sum == expect_sum);
    CHECK(got_n == expect_n);
    for (const auto& [id, f] : finals) CHECK(f == 1);
    CHECK(finals.size() == expect_n.size());
  }
}

TEST_CASE("ack collector reports the source once, on the last replica") {
  AckCollector ac;
  ac.open(5, 2, 3);
  CHECK_FALSE(ac.completes_on_next(5));
  CHECK_FALSE(ac.on_ack(5).has_value());
  CHECK_FALSE(ac.on_ack(5).has_value());
  CHECK(ac.completes_on_next(5));
  auto src = ac.on_ack(5);
  REQUIRE(src.has_value());
  CHECK(*src == 2);
  CHECK(ac.live() == 0);
  CHECK_THROWS_AS(ac.on_ack(5), ProtocolError);
  CHECK_THROWS_AS(ac.open(6, 0, 0), ProtocolError);
  ac.open(6, 0, 1);
  CHECK_THROWS_AS(ac.open(6, 0, 1), ProtocolError);
}
