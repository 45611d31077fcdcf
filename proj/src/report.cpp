#include "dysim/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace dysim {

using nlohmann::ordered_json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string ns(SimTime t) { return num(to_ns(t)); }

// RFC 4180 quoting when needed.
std::string cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

void row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cell(cells[i]);
  os << '\n';
}

std::string status(const RunRecord& r) {
  if (!r.error.empty()) return "aborted";
  return r.metrics.ok() ? "ok" : "violation";
}

std::string first_problem(const RunRecord& r) {
  if (!r.error.empty()) return r.error;
  return r.metrics.violations.empty() ? "" : r.metrics.violations.front();
}

std::string dist_string(const Distribution& d) { return d.label(); }

ordered_json flits_json(const FlitCounts& f) {
  ordered_json j;
  for (int c = 0; c < kFlitCategories; ++c) j[to_string(static_cast<FlitCategory>(c))] = f.by_cat[c];
  return j;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  return f;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
}

}  // namespace

const std::vector<std::string>& runs_csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"config_hash", "point",     "method",    "seed",   "model",
                                  "n_gpu",       "n_switch",  "seq_len",   "topk",   "distribution",
                                  "pure_comm",   "status",    "completion_ns", "ideal_ns"};
    for (int s = 0; s < kStages; ++s) {
      const std::string n = to_string(static_cast<StageId>(s));
      c.push_back(n + "_start_ns");
      c.push_back(n + "_end_ns");
    }
    for (const char* dir : {"up", "down"}) {
      for (int k = 0; k < kFlitCategories; ++k) {
        c.push_back(std::string(dir) + "_" + to_string(static_cast<FlitCategory>(k)));
      }
    }
    for (const char* x : {"tlb_hits", "tlb_misses", "tlb_hit_rate", "rb_inserts", "rb_evictions",
                          "rb_eviction_rate", "flush_packets", "useless_ratio", "multimemq_peak",
                          "ts_peak", "or_peak", "tokens_combined", "fold_mismatches", "events", "problem"}) {
      c.push_back(x);
    }
    return c;
  }();
  return cols;
}

const std::vector<std::string>& timeline_csv_columns() {
  static const std::vector<std::string> cols = {"config_hash", "method", "seed",   "stage",
                                                "gpu",         "group",  "start_ns", "end_ns"};
  return cols;
}

const std::vector<std::string>& sweep_csv_columns() {
  static const std::vector<std::string> cols = {
      "point",  "method",        "seed",    "model",         "topk",        "n_gpu",
      "seq_len", "std",          "alpha",   "tlb_entries",   "reduction_buffer", "tsize",
      "status", "completion_ns", "speedup_vs_baseline", "data_flits", "tlb_hit_rate", "rb_eviction_rate"};
  return cols;
}

const std::vector<std::string>& oracle_csv_columns() {
  static const std::vector<std::string> cols = {
      "model",          "n_gpu",          "topk",           "distribution",   "closed_mean_d",
      "closed_redundancy", "closed_ideal_speedup", "closed_nvls_useless", "mc_samples", "mc_mean_d",
      "mc_se_d",        "mc_redundancy",  "mc_se_redundancy", "mc_ideal_speedup", "mc_se_ideal_speedup",
      "mc_nvls_useless", "mc_se_nvls_useless"};
  return cols;
}

void write_runs_csv(std::ostream& os, const std::vector<RunRecord>& runs) {
  row(os, runs_csv_columns());
  for (const RunRecord& r : runs) {
    const RunMetrics& m = r.metrics;
    const RunConfig& c = r.point.cfg;
    std::vector<std::string> v = {r.config_hash,
                                  std::to_string(r.point.point),
                                  to_string(c.method),
                                  std::to_string(c.seed),
                                  c.model.name,
                                  std::to_string(c.sys.n_gpu),
                                  std::to_string(c.sys.n_switch),
                                  std::to_string(c.model.seq_len),
                                  std::to_string(c.model.topk),
                                  dist_string(c.dist),
                                  c.pure_comm ? "1" : "0",
                                  status(r),
                                  ns(m.completion),
                                  ns(m.up.empty() ? 0 : m.ideal_time())};
    for (int s = 0; s < kStages; ++s) {
      v.push_back(m.stage_active[s] ? ns(m.stage[s].start) : "");
      v.push_back(m.stage_active[s] ? ns(m.stage[s].end) : "");
    }
    for (bool up : {true, false}) {
      const FlitCounts f = m.total(up);
      for (int k = 0; k < kFlitCategories; ++k) v.push_back(std::to_string(f.by_cat[k]));
    }
    v.push_back(std::to_string(m.tlb_hits));
    v.push_back(std::to_string(m.tlb_misses));
    v.push_back(num(m.tlb_hit_rate()));
    v.push_back(std::to_string(m.rb_inserts));
    v.push_back(std::to_string(m.rb_evictions));
    v.push_back(num(m.rb_eviction_rate()));
    v.push_back(std::to_string(m.flush_packets));
    v.push_back(num(m.useless_ratio()));
    v.push_back(std::to_string(m.multimemq_peak));
    v.push_back(std::to_string(m.ts_peak_live));
    v.push_back(std::to_string(m.or_peak_live));
    v.push_back(std::to_string(m.tokens_combined));
    v.push_back(std::to_string(m.fold_mismatches));
    v.push_back(std::to_string(m.events));
    v.push_back(first_problem(r));
    row(os, v);
  }
}

void write_timeline_csv(std::ostream& os, const std::vector<RunRecord>& runs) {
  row(os, timeline_csv_columns());
  for (const RunRecord& r : runs) {
    for (const TimelineRow& t : r.metrics.timeline) {
      row(os, {r.config_hash, to_string(r.point.cfg.method), std::to_string(r.point.cfg.seed),
               to_string(t.stage), std::to_string(t.gpu), t.group, ns(t.start), ns(t.end)});
    }
  }
}

void write_sweep_csv(std::ostream& os, const std::vector<RunRecord>& runs, const std::string& baseline) {
  row(os, sweep_csv_columns());
  std::map<std::pair<std::size_t, std::uint64_t>, SimTime> base;
  for (const RunRecord& r : runs) {
    if (to_string(r.point.cfg.method) == baseline && r.ok()) {
      base[{r.point.point, r.point.cfg.seed}] = r.metrics.completion;
    }
  }
  for (const RunRecord& r : runs) {
    const RunConfig& c = r.point.cfg;
    const RunMetrics& m = r.metrics;
    std::string speedup;
    if (auto it = base.find({r.point.point, c.seed}); it != base.end() && r.ok() && m.completion > 0) {
      speedup = num(static_cast<double>(it->second) / static_cast<double>(m.completion));
    }
    row(os, {std::to_string(r.point.point),
             to_string(c.method),
             std::to_string(c.seed),
             c.model.name,
             std::to_string(c.model.topk),
             std::to_string(c.sys.n_gpu),
             std::to_string(c.model.seq_len),
             c.dist.kind == DistKind::kNormal ? num(c.dist.param) : "",
             c.dist.kind == DistKind::kPowerLaw ? num(c.dist.param) : "",
             std::to_string(c.sys.al_tlb_entries),
             std::to_string(c.sys.reduction_buffer_bytes),
             std::to_string(c.tsize),
             status(r),
             ns(m.completion),
             speedup,
             std::to_string(m.data_flits()),
             num(m.tlb_hit_rate()),
             num(m.rb_eviction_rate())});
  }
}

void write_oracle_csv(std::ostream& os, const std::vector<OracleRow>& rows) {
  row(os, oracle_csv_columns());
  for (const OracleRow& o : rows) {
    auto closed = [&](double v) { return o.has_closed_form ? num(v) : std::string(); };
    row(os, {o.model, std::to_string(o.n_gpu), std::to_string(o.topk), o.distribution,
             closed(o.closed.mean_d), closed(o.closed.redundancy), closed(o.closed.ideal_speedup),
             closed(o.closed.nvls_useless), std::to_string(o.mc.samples), num(o.mc.mean_d), num(o.mc.se_d),
             num(o.mc.redundancy), num(o.mc.se_redundancy), num(o.mc.ideal_speedup),
             num(o.mc.se_ideal_speedup), num(o.mc.nvls_useless), num(o.mc.se_nvls_useless)});
  }
}

std::string results_json(const ExperimentSpec& spec, const std::vector<RunRecord>& runs) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment"] = spec.name;
  j["config"] = nlohmann::ordered_json::parse(config_json(spec));
  ordered_json arr = ordered_json::array();
  for (const RunRecord& r : runs) {
    const RunMetrics& m = r.metrics;
    const RunConfig& c = r.point.cfg;
    ordered_json x;
    x["config_hash"] = r.config_hash;
    x["point"] = r.point.point;
    ordered_json coords = ordered_json::object();
    for (const auto& [k, v] : r.point.coords) coords[k] = axis_value_string(v);
    x["coords"] = coords;
    x["method"] = to_string(c.method);
    x["seed"] = c.seed;
    x["model"] = c.model.name;
    x["n_gpu"] = c.sys.n_gpu;
    x["seq_len"] = c.model.seq_len;
    x["topk"] = c.model.topk;
    x["distribution"] = dist_string(c.dist);
    x["pure_comm"] = c.pure_comm;
    x["status"] = status(r);
    x["completion_ns"] = to_ns(m.completion);
    x["ideal_ns"] = m.up.empty() ? 0.0 : to_ns(m.ideal_time());
    ordered_json st = ordered_json::object();
    for (int s = 0; s < kStages; ++s) {
      if (m.stage_active[s]) {
        st[to_string(static_cast<StageId>(s))] = {to_ns(m.stage[s].start), to_ns(m.stage[s].end)};
      }
    }
    x["stages"] = st;
    x["flits"] = {{"up", flits_json(m.total(true))}, {"down", flits_json(m.total(false))}};
    x["tlb"] = {{"hits", m.tlb_hits}, {"misses", m.tlb_misses}, {"hit_rate", m.tlb_hit_rate()}};
    x["reduction_buffer"] = {{"inserts", m.rb_inserts},
                             {"hits", m.rb_hits},
                             {"evictions", m.rb_evictions},
                             {"eviction_rate", m.rb_eviction_rate()},
                             {"flush_packets", m.flush_packets}};
    x["useless_ratio"] = m.useless_ratio();
    x["tokens_combined"] = m.tokens_combined;
    x["fold_mismatches"] = m.fold_mismatches;
    x["events"] = m.events;
    x["violations"] = m.violations;
    if (!r.error.empty()) x["error"] = r.error;
    ordered_json tl = ordered_json::array();
    for (const TimelineRow& t : m.timeline) {
      tl.push_back({{"stage", to_string(t.stage)},
                    {"gpu", t.gpu},
                    {"group", t.group},
                    {"start_ns", to_ns(t.start)},
                    {"end_ns", to_ns(t.end)}});
    }
    x["timeline"] = tl;
    arr.push_back(std::move(x));
  }
  j["runs"] = std::move(arr);
  return j.dump(2) + "\n";
}

std::string oracle_json(const ExperimentSpec& spec, const std::vector<OracleRow>& rows) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment"] = spec.name;
  j["config"] = nlohmann::ordered_json::parse(config_json(spec));
  ordered_json arr = ordered_json::array();
  for (const OracleRow& o : rows) {
    ordered_json x;
    x["model"] = o.model;
    x["n_gpu"] = o.n_gpu;
    x["topk"] = o.topk;
    x["distribution"] = o.distribution;
    if (o.has_closed_form) {
      x["closed_form"] = {{"mean_d", o.closed.mean_d},
                          {"redundancy", o.closed.redundancy},
                          {"ideal_speedup", o.closed.ideal_speedup},
                          {"nvls_useless", o.closed.nvls_useless}};
    }
    x["monte_carlo"] = {{"samples", o.mc.samples},
                        {"mean_d", o.mc.mean_d},
                        {"se_d", o.mc.se_d},
                        {"redundancy", o.mc.redundancy},
                        {"se_redundancy", o.mc.se_redundancy},
                        {"ideal_speedup", o.mc.ideal_speedup},
                        {"se_ideal_speedup", o.mc.se_ideal_speedup},
                        {"nvls_useless", o.mc.nvls_useless},
                        {"se_nvls_useless", o.mc.se_nvls_useless}};
    arr.push_back(std::move(x));
  }
  j["oracle"] = std::move(arr);
  return j.dump(2) + "\n";
}

std::vector<std::string> emit(const ExperimentSpec& spec, const std::vector<RunRecord>& runs,
                              const std::string& dir, const std::string& format) {
  make_dir(dir);
  const std::filesystem::path d(dir);
  std::vector<std::string> written;
  if (format == "json") {
    auto f = open_out(d / "results.json");
    f << results_json(spec, runs);
    written.push_back((d / "results.json").string());
  } else if (format == "csv") {
    {
      auto f = open_out(d / "runs.csv");
      write_runs_csv(f, runs);
    }
    {
      auto f = open_out(d / "timeline.csv");
      write_timeline_csv(f, runs);
    }
    {
      auto f = open_out(d / "sweep.csv");
      write_sweep_csv(f, runs, spec.baseline);
    }
    for (const char* n : {"runs.csv", "timeline.csv", "sweep.csv"}) written.push_back((d / n).string());
  } else {
    throw ConfigError("unknown output format '" + format + "'");
  }
  return written;
}

std::vector<std::string> emit_oracle(const ExperimentSpec& spec, const std::vector<OracleRow>& rows,
                                     const std::string& dir, const std::string& format) {
  make_dir(dir);
  const std::filesystem::path d(dir);
  if (format == "json") {
    auto f = open_out(d / "oracle.json");
    f << oracle_json(spec, rows);
    return {(d / "oracle.json").string()};
  }
  if (format != "csv") throw ConfigError("unknown output format '" + format + "'");
  auto f = open_out(d / "oracle.csv");
  write_oracle_csv(f, rows);
  return {(d / "oracle.csv").string()};
}

}  // namespace dysim
