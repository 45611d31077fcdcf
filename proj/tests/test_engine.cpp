#include <doctest.h>

#include <vector>

#include "dysim/errors.hpp"
#include "dysim/event_queue.hpp"
#include "dysim/metrics.hpp"
#include "dysim/rng.hpp"
#include "dysim/topology.hpp"

using namespace dysim;

TEST_CASE("flit time at 450 GB/s") {
  SystemConfig s;
  CHECK(s.flit_time() == 35556);  // 16 B / 450e9 B/s = 35.5556 ps
  s.n_switch = 2;
  CHECK(s.flit_time() == 71111);
  CHECK(s.link_latency() == 250 * kFsPerNs);
  CHECK(from_ns(1.5) == 1'500'000);
  CHECK(to_ns(2'500'000) == doctest::Approx(2.5));
}

TEST_CASE("system presets") {
  CHECK(system_preset("nvl32").n_gpu == 32);
  CHECK(system_preset("dgx-h100").n_gpu == 8);
  CHECK(system_preset("nvl64").n_gpu == 64);
  CHECK_THROWS_AS(system_preset("nvl7"), ConfigError);
  SystemConfig bad;
  bad.vc_count = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("event queue orders by time then insertion") {
  EventQueue<int> q;
  q.schedule(10, 1);
  q.schedule(5, 2);
  q.schedule(10, 3);
  const EventHandle h = q.schedule(7, 4);
  q.schedule(5, 5);
  q.cancel(h);
  std::vector<int> seen;
  const SimTime end = q.run_until_idle([&](const Event<int>& e) { seen.push_back(e.payload); });
  CHECK(seen == std::vector<int>{2, 5, 1, 3});
  CHECK(end == 10);
  CHECK(q.processed() == 4);
}

TEST_CASE("event queue rejects the past and runaway runs") {
  EventQueue<int> q(3);
  q.schedule(10, 0);
  CHECK_THROWS_AS(q.run_until_idle([&](const Event<int>&) { q.schedule(5, 1); }), EngineError);

  EventQueue<int> r(3);
  r.schedule(0, 0);
  CHECK_THROWS_AS(r.run_until_idle([&](const Event<int>& e) { r.schedule(e.time + 1, 0); }), EngineError);
}

TEST_CASE("rng streams are counter based and independent") {
  RngStream a(42, "routing", 3), b(42, "routing", 3), c(42, "routing", 4), d(43, "routing", 3);
  for (int i = 0; i < 16; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
    CHECK(x != d.next_u64());
  }
  RngStream u(1, "u");
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double v = u.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
    sum += v;
  }
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
  for (int i = 0; i < 1000; ++i) CHECK(u.below(7) < 7);
}

TEST_CASE("store-and-forward link endpoint") {
  LinkEndpoint l(100, 1000);
  CHECK(l.transmit(4, 0) == 1400);
  CHECK(l.transmit(2, 0) == 1600);    // queued behind the first packet
  CHECK(l.transmit(1, 5000) == 6100);  // idle gap
  CHECK(l.flits_sent() == 7);
  CHECK(l.busy_time() == 700);
}

TEST_CASE("interval merging and utilization") {
  const auto m = merge_intervals({{5, 8}, {0, 2}, {2, 3}, {7, 10}});
  REQUIRE(m.size() == 2);
  CHECK(m[0] == Interval{0, 3});
  CHECK(m[1] == Interval{5, 10});
  LinkStats s;
  s.busy = m;
  CHECK(link_utilization(s, 0, 10) == doctest::Approx(0.8));
  CHECK(link_utilization(s, 2, 6) == doctest::Approx(0.5));
  CHECK_THROWS(link_utilization(s, 4, 4));
}

TEST_CASE("flit counts accumulate per category") {
  FlitCounts a, b;
  a[FlitCategory::kData] = 10;
  a[FlitCategory::kHeader] = 2;
  b[FlitCategory::kData] = 5;
  b[FlitCategory::kAck] = 1;
  a += b;
  CHECK(a[FlitCategory::kData] == 15);
  CHECK(a.total() == 18);
}

TEST_CASE("topology enumerates one link per GPU, direction and plane") {
  SystemConfig s;
  s.n_gpu = 4;
  s.n_switch = 2;
  const Topology t = build_topology(s);
  CHECK(t.links.size() == 16);
  CHECK(t.up_link_count() == 8);
  CHECK(t.links.front().dir == Direction::kUp);
  CHECK(t.links.back().dir == Direction::kDown);
}
