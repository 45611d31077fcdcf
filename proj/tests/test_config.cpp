#include <doctest.h>

#include <set>
#include <string>

#include "dysim/config.hpp"
#include "dysim/errors.hpp"

using namespace dysim;

namespace {

int parse_error_line(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST_CASE("an empty config yields the defaults") {
  const ExperimentSpec s = parse_config_string("");
  CHECK(s.methods == std::vector<Method>{Method::kDySharpFull});
  CHECK(s.seeds == std::vector<std::uint64_t>{1});
  CHECK(s.base.sys.n_gpu == 32);
  CHECK(s.base.model.name == "L");
  CHECK(s.points() == 1);
  CHECK(expand(s).size() == 1);
}

TEST_CASE("sections, comments, arrays and presets") {
  const ExperimentSpec s = parse_config_string(R"(
# comment
[experiment]
name = "demo"   # trailing comment
methods = [deepep, dysharp_full]
seeds = [3, 4]
format = json

[system]
n_gpu = 8
reduction_buffer_bytes = 32768

[model]
preset = M
seq_len = 1024

[workload]
distribution = powerlaw
param = 1.2
)");
  CHECK(s.name == "demo");
  CHECK(s.methods == std::vector<Method>{Method::kDeepEP, Method::kDySharpFull});
  CHECK(s.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(s.format == "json");
  CHECK(s.base.sys.n_gpu == 8);
  CHECK(s.base.sys.reduction_buffer_bytes == 32768);
  CHECK(s.base.model.hidden_size == 4096);
  CHECK(s.base.model.seq_len == 1024);
  CHECK(s.base.dist.kind == DistKind::kPowerLaw);
  CHECK(s.base.dist.param == 1.2);
  CHECK(expand(s).size() == 4);
}

TEST_CASE("errors carry the offending line") {
  CHECK(parse_error_line("[system]\nn_gpu = 8\nbogus = 1\n") == 3);
  CHECK(parse_error_line("[nowhere]\n") == 1);
  CHECK(parse_error_line("n_gpu = 8\n") == 1);
  CHECK(parse_error_line("[system]\nn_gpu = eight\n") == 2);
  CHECK(parse_error_line("[system]\nn_gpu = 8\nn_gpu = 9\n") == 3);
  CHECK(parse_error_line("[experiment]\nmethods = [deepep, warp_drive]\n") == 2);
  CHECK(parse_error_line("[experiment]\nname = \"open\n") == 2);
  CHECK(parse_error_line("[sweep]\nvolume = [1, 2]\n") == 2);
  CHECK(parse_error_line("[sweep]\ntopk = []\n") == 2);
  CHECK(parse_error_line("[sweep]\nmodel = [1, 2]\n") == 2);

  try {
    parse_config_string("[system]\n\nlink_bw = 1\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    CHECK(e.message().find("link_bw") != std::string::npos);
  }
}

TEST_CASE("module preconditions are checked after parsing") {
  CHECK_THROWS_AS(parse_config_string("[system]\nn_gpu = 0\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config_string("[compute]\nefficiency = 9\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config_string("[sweep]\nn_gpu = [8, 7]\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_method("nvls"), ConfigError);
  CHECK(parse_method("nvls_workaround") == Method::kNvlsWorkaround);
}

TEST_CASE("sweep expansion is the cartesian product in a fixed order") {
  const ExperimentSpec s = parse_config_string(R"(
[experiment]
methods = [deepep, dysharp_full]
seeds = [1, 2]
[sweep]
topk = [8, 16, 32]
model = [S, L]
)");
  CHECK(s.points() == 6);
  const auto pts = expand(s);
  REQUIRE(pts.size() == 24);
  std::set<std::string> hashes;
  for (const auto& p : pts) hashes.insert(run_config_hash(p.cfg));
  CHECK(hashes.size() == 24);

  CHECK(pts[0].point == 0);
  CHECK(pts[0].coords.size() == 2);
  CHECK(pts.back().point == 5);
  for (const auto& p : pts) {
    // Axes apply in canonical order, model first, so topk survives the preset.
    CHECK(p.coords[0].first == "model");
    const auto topk = static_cast<int>(std::get<double>(p.coords[1].second));
    CHECK(p.cfg.model.topk == topk);
    CHECK(p.cfg.seed == p.seed);
    CHECK(p.cfg.method == p.method);
  }
  // The model axis keeps the base seq_len.
  CHECK(pts[0].cfg.model.seq_len == s.base.model.seq_len);
}

TEST_CASE("rendered text and JSON echoes round-trip") {
  const ExperimentSpec s = parse_config_string(R"(
[experiment]
name = rt
methods = [explicit, fusion_only]
seeds = [5]
[model]
preset = S
[workload]
distribution = normal
param = 0.032
[sweep]
std = [0.01, 0.032]
tlb_entries = [64, 512]
)");
  const std::string text = render_config(s);
  const ExperimentSpec back = parse_config_string(text);
  CHECK(render_config(back) == text);
  CHECK(text.find("param = 0.032\n") != std::string::npos);

  const ExperimentSpec js = parse_config_json(config_json(s));
  CHECK(render_config(js) == text);

  const auto a = expand(s), b = expand(back);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(run_config_hash(a[i].cfg) == run_config_hash(b[i].cfg));
}

TEST_CASE("axis values print compactly") {
  CHECK(axis_value_string(AxisValue{8.0}) == "8");
  CHECK(axis_value_string(AxisValue{0.032}) == "0.032");
  CHECK(axis_value_string(AxisValue{std::string("L-16")}) == "L-16");
}
