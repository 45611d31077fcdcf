#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "dysim/errors.hpp"
#include "dysim/workload.hpp"

using namespace dysim;

namespace {

ModelConfig small_model(int seq = 512) {
  ModelConfig m = model_preset("S");
  m.seq_len = seq;
  return m;
}

}  // namespace

TEST_CASE("model presets") {
  const ModelConfig l = model_preset("L");
  CHECK(l.hidden_size == 7168);
  CHECK(l.n_experts == 256);
  CHECK(l.topk == 8);
  CHECK(l.token_bytes() == 7168);

  const ModelConfig l16 = model_preset("L-16");
  CHECK(l16.topk == 16);
  CHECK(l16.name == "L-16");
  CHECK(l16.n_experts == 256);

  CHECK(model_preset("S").n_experts == 64);
  CHECK(model_preset("M").hidden_size == 4096);
  CHECK(model_preset("gpt-oss-120b").topk == 4);
  CHECK_THROWS_AS(model_preset("XL"), ConfigError);
  CHECK_THROWS_AS(model_preset("Q-8"), ConfigError);
}

TEST_CASE("generated routing is valid for every distribution") {
  for (const Distribution& d : {Distribution::uniform(), Distribution::normal(0.032),
                                Distribution::powerlaw(1.2)}) {
    CAPTURE(d.label());
    const RoutingTable r = gen_routing(small_model(), d, 11);
    CHECK_NOTHROW(r.validate());
    CHECK(r.n_tokens() == 512);
    CHECK(r.topk() == 8);
    for (int t = 0; t < r.n_tokens(); ++t) {
      const auto e = r.experts(t);
      CHECK(std::is_sorted(e.begin(), e.end()));
      CHECK(std::adjacent_find(e.begin(), e.end()) == e.end());
      const auto w = r.weights(t);
      CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto loads = r.expert_loads();
    CHECK(std::accumulate(loads.begin(), loads.end(), 0) == 512 * 8);
  }
}

TEST_CASE("parallel and serial routing generation are bit-identical") {
  for (std::uint64_t seed : {1ULL, 2ULL, 99ULL}) {
    const auto a = gen_routing(small_model(2048), Distribution::normal(0.032), seed);
    const auto b = gen_routing_serial(small_model(2048), Distribution::normal(0.032), seed);
    CHECK(a == b);
    CHECK(routing_fingerprint(a) == routing_fingerprint(b));
  }
  const auto a = gen_routing(small_model(), Distribution::uniform(), 1);
  const auto b = gen_routing(small_model(), Distribution::uniform(), 2);
  CHECK(routing_fingerprint(a) != routing_fingerprint(b));
}

TEST_CASE("power-law routing concentrates load") {
  const auto uni = gen_routing(small_model(2048), Distribution::uniform(), 3).expert_loads();
  const auto pl = gen_routing(small_model(2048), Distribution::powerlaw(1.5), 3).expert_loads();
  CHECK(*std::max_element(pl.begin(), pl.end()) > 2 * *std::max_element(uni.begin(), uni.end()));
}

TEST_CASE("routing text round-trips exactly") {
  const auto r = gen_routing(small_model(64), Distribution::normal(0.05), 4);
  std::stringstream ss;
  write_routing(ss, r);
  const auto back = read_routing(ss);
  CHECK(back == r);

  std::istringstream bad("garbage\n");
  CHECK_THROWS(read_routing(bad));
}

TEST_CASE("validate rejects malformed rows") {
  RoutingTable r(1, 2, 4);
  auto e = r.mutable_experts(0);
  auto w = r.mutable_weights(0);
  e[0] = 1;
  e[1] = 1;
  w[0] = w[1] = 0.5;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  e[1] = 4;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  e[1] = 3;
  CHECK_NOTHROW(r.validate());
  w[1] = 0.7;
  CHECK_THROWS_AS(r.validate(), ConfigError);
}

TEST_CASE("placement and distinct destination counting") {
  const Placement p = Placement::block(64, 8);
  CHECK(p.experts_per_gpu == 8);
  CHECK(p.gpu_of(17) == 2);
  CHECK(p.first_expert(3) == 24);
  const std::uint16_t ex[] = {0, 1, 9, 17, 18, 63};
  CHECK(distinct_dest_gpus(ex, p, 0, true) == 4);
  CHECK(distinct_dest_gpus(ex, p, 0, false) == 3);
  CHECK(distinct_dest_gpus(ex, p, 5, false) == 4);
  CHECK(source_gpu_of(0, 1024, 8) == 0);
  CHECK(source_gpu_of(1023, 1024, 8) == 7);
  CHECK(source_gpu_of(128, 1024, 8) == 1);
}

TEST_CASE("combine fold is order independent") {
  const auto r = gen_routing(small_model(16), Distribution::uniform(), 5);
  const auto e = r.experts(3);
  std::uint64_t fwd = 0, rev = 0;
  for (int f = 0; f < 2; ++f) {
    for (std::size_t i = 0; i < e.size(); ++i) fwd = fold(fwd, fragment_checksum(3, e[i], Stage::kCombine, f));
    for (std::size_t i = e.size(); i-- > 0;) rev = fold(rev, fragment_checksum(3, e[i], Stage::kCombine, f));
  }
  CHECK(fwd == rev);
  CHECK(fwd == reference_combine_fold(r, 3, 2));
  CHECK(token_checksum(3, e[0], Stage::kDispatch) != token_checksum(3, e[0], Stage::kCombine));
}
