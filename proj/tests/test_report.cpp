#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dysim/config.hpp"
#include "dysim/report.hpp"
#include "dysim/runner.hpp"

using namespace dysim;

namespace {

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::size_t fields(const std::string& line) {
  std::size_t n = 1;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) ++n;
  }
  return n;
}

ExperimentSpec tiny_spec() {
  return parse_config_string(R"(
[experiment]
name = report_test
methods = [deepep, dysharp_full]
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
tlb_entries = [64, 512]
)");
}

}  // namespace

TEST_CASE("empty inputs produce header-only CSV") {
  std::ostringstream a, b, c, d;
  write_runs_csv(a, {});
  write_timeline_csv(b, {});
  write_sweep_csv(c, {}, "deepep");
  write_oracle_csv(d, {});
  CHECK(lines(a.str()).size() == 1);
  CHECK(lines(b.str()).size() == 1);
  CHECK(lines(c.str()).size() == 1);
  CHECK(lines(d.str()).size() == 1);
  CHECK(fields(lines(a.str())[0]) == runs_csv_columns().size());
  CHECK(fields(lines(d.str())[0]) == oracle_csv_columns().size());
}

TEST_CASE("every CSV row has the header's column count") {
  const ExperimentSpec spec = tiny_spec();
  RunOptions opt;
  opt.parallel = false;
  const auto runs = run_experiment(spec, opt);
  REQUIRE(runs.size() == 4);
  for (const auto& r : runs) CHECK(r.ok());

  std::ostringstream rs, ts, ss;
  write_runs_csv(rs, runs);
  write_timeline_csv(ts, runs);
  write_sweep_csv(ss, runs, "deepep");
  for (const auto& [text, cols] : {std::pair{rs.str(), runs_csv_columns().size()},
                                   std::pair{ts.str(), timeline_csv_columns().size()},
                                   std::pair{ss.str(), sweep_csv_columns().size()}}) {
    const auto ls = lines(text);
    CHECK(ls.size() > 1);
    for (const auto& l : ls) CHECK(fields(l) == cols);
  }
  CHECK(lines(rs.str()).size() == 5);
  CHECK(lines(ss.str()).size() == 5);

  // Speedup is filled for every run that has a baseline partner.
  const auto sl = lines(ss.str());
  const auto& hdr = sweep_csv_columns();
  const auto col = std::find(hdr.begin(), hdr.end(), "speedup_vs_baseline") - hdr.begin();
  for (std::size_t i = 1; i < sl.size(); ++i) {
    std::vector<std::string> cells;
    std::istringstream is(sl[i]);
    for (std::string c; std::getline(is, c, ',');) cells.push_back(c);
    if (cells.size() < hdr.size()) cells.resize(hdr.size());
    CHECK_FALSE(cells[col].empty());
  }
}

TEST_CASE("JSON results carry the schema version and a re-parseable config echo") {
  const ExperimentSpec spec = tiny_spec();
  RunOptions opt;
  opt.parallel = false;
  const auto runs = run_experiment(spec, opt);
  const auto j = nlohmann::json::parse(results_json(spec, runs));
  CHECK(j.at("schema_version") == kSchemaVersion);
  CHECK(j.at("experiment") == "report_test");
  CHECK(j.at("runs").size() == runs.size());
  CHECK(j.at("runs")[0].contains("timeline"));
  const ExperimentSpec back = parse_config_json(j.at("config").dump());
  CHECK(render_config(back) == render_config(spec));
}

TEST_CASE("emit writes the files it reports") {
  const ExperimentSpec spec = tiny_spec();
  RunOptions opt;
  opt.parallel = false;
  const auto runs = run_experiment(spec, opt);
  const auto dir = std::filesystem::temp_directory_path() / "dysim_report_test";
  std::filesystem::remove_all(dir);
  const auto csv = emit(spec, runs, dir.string(), "csv");
  CHECK(csv.size() == 3);
  for (const auto& p : csv) CHECK(std::filesystem::exists(p));
  const auto js = emit(spec, runs, dir.string(), "json");
  REQUIRE(js.size() == 1);
  std::ifstream f(js[0]);
  CHECK(nlohmann::json::parse(f).at("runs").size() == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("oracle rows serialize with and without a closed form") {
  OracleRow a;
  a.model = "L-8";
  a.n_gpu = 32;
  a.topk = 8;
  a.distribution = "uniform";
  a.has_closed_form = true;
  a.closed.redundancy = 0.429;
  OracleRow b = a;
  b.distribution = "normal(0.032)";
  b.has_closed_form = false;
  std::ostringstream os;
  write_oracle_csv(os, {a, b});
  const auto ls = lines(os.str());
  REQUIRE(ls.size() == 3);
  for (const auto& l : ls) CHECK(fields(l) == oracle_csv_columns().size());
  CHECK(ls[1].find("0.429") != std::string::npos);

  const auto j = nlohmann::json::parse(oracle_json(parse_config_string(""), {a, b}));
  CHECK(j.at("schema_version") == kSchemaVersion);
  CHECK(j.at("oracle").size() == 2);
}
