#include <doctest.h>

#include <sstream>
#include <string>

#include "dysim/config.hpp"
#include "dysim/oracles.hpp"
#include "dysim/report.hpp"
#include "dysim/rng.hpp"
#include "dysim/runner.hpp"
#include "dysim/simulator.hpp"
#include "test_util.hpp"

using namespace dysim;

namespace {

std::string csv_of(const RunConfig& cfg, const RunMetrics& m) {
  RunRecord r;
  r.point.cfg = cfg;
  r.point.method = cfg.method;
  r.point.seed = cfg.seed;
  r.config_hash = run_config_hash(cfg);
  r.metrics = m;
  std::ostringstream os;
  write_runs_csv(os, {r});
  write_timeline_csv(os, {r});
  return os.str();
}

// A random small workload: 4 GPUs, seq_len <= 256, n_experts <= 16.
RunConfig random_small(std::uint64_t seed, Method m) {
  RngStream rng(seed, "sim-property");
  RunConfig c = testing::tiny_run(m, seed);
  c.model.n_experts = 4 * static_cast<int>(1 + rng.below(4));
  c.model.topk = static_cast<int>(1 + rng.below(std::min<std::uint64_t>(c.model.n_experts, 8)));
  c.model.seq_len = 4 * static_cast<int>(8 + rng.below(57));
  c.tsize = 8 << rng.below(3);
  switch (rng.below(3)) {
    case 0: c.dist = Distribution::uniform(); break;
    case 1: c.dist = Distribution::normal(0.01 + 0.04 * rng.uniform()); break;
    default: c.dist = Distribution::powerlaw(0.5 + 2.0 * rng.uniform()); break;
  }
  c.sys.multimemq_entries = 4 << rng.below(3);
  c.sys.reduction_buffer_bytes = 4096 << rng.below(3);
  c.sys.al_tlb_entries = 8 << rng.below(4);
  c.pure_comm = rng.below(4) == 0;
  c.adaptive_window = rng.below(2) == 0;
  c.combine_window = 1 + static_cast<int>(rng.below(32));
  return c;
}

}  // namespace

TEST_CASE("every method produces the reference Combine fold") {
  for (Method m : kAllMethods) {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      CAPTURE(to_string(m));
      CAPTURE(seed);
      const RunConfig c = testing::tiny_run(m, seed);
      const RunMetrics r = run_method(c);
      CHECK(r.violations.empty());
      CHECK(r.fold_mismatches == 0);
      CHECK(r.tokens_combined == c.model.seq_len);
      CHECK(r.completion > 0);
    }
  }
}

TEST_CASE("randomized small workloads keep every invariant") {
  int runs = 0;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    for (Method m : kAllMethods) {
      const RunConfig c = random_small(seed * 31 + static_cast<int>(m), m);
      CAPTURE(to_string(m));
      CAPTURE(seed);
      CAPTURE(c.model.seq_len);
      CAPTURE(c.model.n_experts);
      CAPTURE(c.model.topk);
      const RunMetrics r = run_method(c);
      for (const auto& v : r.violations) CAPTURE(v);
      CHECK(r.ok());
      CHECK(r.fold_mismatches == 0);
      CHECK(r.multimemq_peak <= c.sys.multimemq_entries);
      CHECK(r.multimemq_issued == r.multimemq_retired);
      CHECK(r.ts_peak_live <= c.sys.ts_table_entries);
      CHECK(r.or_peak_live <= c.sys.or_table_entries);
      if (r.rb_evictions == 0) CHECK(r.flush_packets == 0);
      ++runs;
    }
  }
  CHECK(runs == 96);
}

TEST_CASE("two runs of one configuration are byte-identical") {
  for (Method m : {Method::kDeepEP, Method::kCometOverlap, Method::kDySharpFull}) {
    const RunConfig c = random_small(77, m);
    CHECK(csv_of(c, run_method(c)) == csv_of(c, run_method(c)));
  }
}

TEST_CASE("sweep results do not depend on serial or parallel execution") {
  const ExperimentSpec spec = parse_config_string(R"(
[experiment]
methods = [deepep, dysharp_full]
seeds = [1, 2]
[system]
n_gpu = 4
[model]
preset = S
seq_len = 128
hidden_size = 256
moe_hidden_size = 128
n_experts = 16
topk = 4
[sweep]
reduction_buffer = [4096, 65536]
)");
  RunOptions ser, par;
  ser.parallel = false;
  par.parallel = true;
  const auto a = run_experiment(spec, ser);
  const auto b = run_experiment(spec, par);
  std::ostringstream x, y;
  write_runs_csv(x, a);
  write_timeline_csv(x, a);
  write_runs_csv(y, b);
  write_timeline_csv(y, b);
  CHECK(x.str() == y.str());
}

TEST_CASE("methods sharing a routing table report the same workload hash") {
  const RunConfig base = testing::tiny_run(Method::kDeepEP);
  const RoutingTable routing = gen_routing(base.model, base.dist, base.seed);
  std::vector<std::pair<std::string, RunMetrics>> runs;
  for (Method m : kAllMethods) {
    RunConfig c = base;
    c.method = m;
    runs.emplace_back("tiny", run_method(c, routing));
  }
  const SpeedupTable t = speedup_table(runs, "deepep");
  CHECK(t.rows.size() == kAllMethods.size());
  CHECK(t.geomean.at("deepep") == doctest::Approx(1.0));
}

TEST_CASE("flit dump lists injected packets") {
  RunConfig c = testing::tiny_run(Method::kDySharpFull);
  c.model.seq_len = 32;
  std::ostringstream dump;
  c.flit_dump = &dump;
  const RunMetrics r = run_method(c);
  CHECK(r.ok());
  std::istringstream is(dump.str());
  int n = 0, multicast = 0;
  for (std::string line; std::getline(is, line); ++n) {
    CHECK((line.find(" up gpu=") != std::string::npos || line.find(" down gpu=") != std::string::npos));
    if (line.find("targets=[") != std::string::npos) ++multicast;
  }
  CHECK(n > 0);
  CHECK(multicast > 0);
}

TEST_CASE("an adaptive Combine window opens up when the switch has room") {
  RunConfig c = testing::tiny_run(Method::kDySharpFull);
  c.model.seq_len = 1024;
  c.combine_window = 1;
  const RunMetrics fixed = run_method(c);
  c.adaptive_window = true;
  const RunMetrics adaptive = run_method(c);
  REQUIRE(fixed.ok());
  REQUIRE(adaptive.ok());
  CHECK(adaptive.completion < fixed.completion);
}

TEST_CASE("ideal time bounds pure-communication completion") {
  for (Method m : {Method::kDeepEP, Method::kDySharpFull}) {
    RunConfig c = testing::tiny_run(m);
    c.pure_comm = true;
    const RunMetrics r = run_method(c);
    REQUIRE(r.ok());
    CHECK(r.ideal_time() > 0);
    CHECK(r.completion >= r.ideal_time());
  }
}
