#include <doctest.h>

#include <vector>

#include "dysim/errors.hpp"
#include "dysim/fusion.hpp"
#include "dysim/rng.hpp"

using namespace dysim;

namespace {

TileStatusTable::Shape shape(int tsize, std::int64_t bsize) {
  TileStatusTable::Shape s;
  s.first_expert = 10;
  s.n_local_experts = 2;
  s.tsize = tsize;
  s.bsize = bsize;
  s.tbs_gemm1 = 3;
  s.tbs_gemm2 = 2;
  return s;
}

}  // namespace

TEST_CASE("tile rows quantize nactive with a partial last row") {
  TileStatusTable ts(shape(4, 100), {10, 0});
  CHECK(ts.rows(10) == 3);
  CHECK(ts.rows(11) == 0);
  CHECK(ts.tokens_in_row(10, 0) == 4);
  CHECK(ts.tokens_in_row(10, 2) == 2);
  CHECK(ts.threshold(10, 2) == 200);
  CHECK_THROWS_AS(ts.rows(12), ProtocolError);
  CHECK_THROWS_AS(ts.tokens_in_row(10, 3), ProtocolError);
}

TEST_CASE("GEMM-1 gate opens exactly when dacc reaches the row threshold") {
  TileStatusTable ts(shape(2, 100), {3, 1});
  CHECK_FALSE(ts.on_store_arrival(10, 0, 60));
  CHECK_FALSE(ts.gemm1_ready(10, 0));
  CHECK_THROWS_AS(ts.on_tb_issue(GemmKind::kGemm1, 10, 0), ProtocolError);
  CHECK_FALSE(ts.on_store_arrival(10, 0, 100));
  CHECK(ts.on_store_arrival(10, 0, 40));
  CHECK(ts.gemm1_ready(10, 0));
  CHECK_THROWS_AS(ts.on_store_arrival(10, 0, 1), ProtocolError);  // overshoot
  CHECK(ts.on_store_arrival(10, 1, 100));                          // partial row of one token
}

TEST_CASE("GEMM-2 gate needs every GEMM-1 thread block of the row") {
  TileStatusTable ts(shape(1, 8), {1, 1});
  ts.on_store_arrival(10, 0, 8);
  for (int i = 0; i < 3; ++i) ts.on_tb_issue(GemmKind::kGemm1, 10, 0);
  CHECK_THROWS_AS(ts.on_tb_issue(GemmKind::kGemm1, 10, 0), ProtocolError);
  CHECK_FALSE(ts.on_tb_complete(GemmKind::kGemm1, 10, 0));
  CHECK_THROWS_AS(ts.on_tb_issue(GemmKind::kGemm2, 10, 0), ProtocolError);
  CHECK_FALSE(ts.on_tb_complete(GemmKind::kGemm1, 10, 0));
  CHECK(ts.on_tb_complete(GemmKind::kGemm1, 10, 0));
  CHECK(ts.row_done(GemmKind::kGemm1, 10, 0));
  CHECK_THROWS_AS(ts.on_tb_complete(GemmKind::kGemm1, 10, 0), ProtocolError);
  ts.on_tb_issue(GemmKind::kGemm2, 10, 0);
  ts.on_tb_issue(GemmKind::kGemm2, 10, 0);
  CHECK_FALSE(ts.on_tb_complete(GemmKind::kGemm2, 10, 0));
  CHECK(ts.on_tb_complete(GemmKind::kGemm2, 10, 0));
  CHECK(ts.row_done(GemmKind::kGemm2, 10, 0));
}

TEST_CASE("TS table counts live entries against capacity") {
  auto s = shape(1, 8);
  s.capacity = 2;
  TileStatusTable ts(s, {3, 0});
  ts.on_store_arrival(10, 0, 8);
  ts.on_store_arrival(10, 1, 8);
  CHECK_FALSE(ts.overflowing());
  ts.on_store_arrival(10, 2, 8);
  CHECK(ts.overflowing());
  CHECK(ts.peak_live() == 3);
  CHECK(ts.overflow_accesses() == 1);
}

TEST_CASE("token id table and notifications grouped by source") {
  TileStatusTable ts(shape(3, 8), {3, 0});
  TokenIdTable tid(ts);
  tid.register_token(10, 0, 7);
  tid.register_token(10, 0, 2);
  tid.register_token(10, 0, 5);
  CHECK_THROWS_AS(tid.register_token(10, 0, 9), ProtocolError);
  const auto row = tid.tids(10, 0);
  CHECK(std::vector<std::int32_t>(row.begin(), row.end()) == std::vector<std::int32_t>{7, 2, 5});
  const auto n = notify_sources(row, [](std::int32_t t) { return t % 2; });
  REQUIRE(n.size() == 2);
  CHECK(n[0].source_gpu == 0);
  CHECK(n[0].tids == std::vector<std::int32_t>{2});
  CHECK(n[1].source_gpu == 1);
  CHECK(n[1].tids == std::vector<std::int32_t>{7, 5});
}

TEST_CASE("Combine gate: a token is ready only after topk notifications") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RngStream rng(seed, "or-table");
    const int topk = 1 + static_cast<int>(rng.below(8));
    const int n_tok = 1 + static_cast<int>(rng.below(50));
    OutputReadinessTable orr(topk, 16);
    std::vector<std::int32_t> events;
    for (int t = 0; t < n_tok; ++t) {
      for (int k = 0; k < topk; ++k) events.push_back(t);
    }
    for (std::size_t i = events.size(); i > 1; --i) std::swap(events[i - 1], events[rng.below(i)]);
    std::vector<int> count(n_tok, 0);
    int ready = 0;
    for (auto t : events) {
      const bool r = orr.on_notification(t);
      ++count[t];
      CHECK(r == (count[t] == topk));
      ready += r;
    }
    CHECK(ready == n_tok);
    CHECK(orr.live_entries() == 0);
    CHECK(orr.peak_live() <= n_tok);
  }
  OutputReadinessTable one(2);
  one.on_notification(3);
  CHECK(one.n_ready(3) == 1);
  one.on_notification(3);
  CHECK(one.n_ready(3) == 0);
}

TEST_CASE("SM partitions") {
  const auto f = SMPartition::fixed(132, 16);
  CHECK(f.dispatch == 16);
  CHECK(f.combine == 16);
  CHECK(f.gemm1 + f.gemm2 == 100);
  CHECK(f.total() == 132);
  f.validate(132);
  CHECK_THROWS_AS(f.validate(100), ConfigError);
  CHECK_THROWS_AS(SMPartition::fixed(40, 20), ConfigError);

  const double t[4] = {1.0, 2.0, 2.0, 1.0};
  const auto p = SMPartition::proportional(132, t);
  CHECK(p.total() == 132);
  CHECK(p.gemm1 > p.dispatch);
  CHECK(p.dispatch == p.combine);
  const double zero[4] = {0, 0, 0, 0};
  CHECK_THROWS_AS(SMPartition::proportional(132, zero), ConfigError);
}

TEST_CASE("GEMM scheduler hands out thread blocks FIFO and borrows when idle") {
  GemmScheduler gs(2, 1, true);
  gs.push_row(GemmKind::kGemm1, 1, 0);
  gs.push_row(GemmKind::kGemm1, 2, 0);
  auto a = gs.next_task(SmGroup::kGemm1);
  auto b = gs.next_task(SmGroup::kGemm1);
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->expert == 1);
  CHECK(b->expert == 1);
  auto c = gs.next_task(SmGroup::kGemm2);  // borrowed from the GEMM-1 queue
  REQUIRE(c);
  CHECK(c->which == GemmKind::kGemm1);
  CHECK(c->expert == 2);
  CHECK(gs.borrowed() == 1);
  CHECK_FALSE(gs.next_task(SmGroup::kDispatch));

  GemmScheduler strict(1, 1, false);
  strict.push_row(GemmKind::kGemm2, 0, 0);
  CHECK_FALSE(strict.next_task(SmGroup::kGemm1));
  CHECK(strict.next_task(SmGroup::kGemm2));
  CHECK(strict.empty());
}
