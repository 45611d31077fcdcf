#include "dysim/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "dysim/rng.hpp"

namespace dysim {

using nlohmann::json;

ParseError::ParseError(const std::string& source, int line, const std::string& msg)
    : ConfigError(line > 0 ? source + ":" + std::to_string(line) + ": " + msg : source + ": " + msg),
      line_(line),
      msg_(msg) {}

namespace {

// A value as written: scalar or array of scalars, already typed.
struct Raw {
  json value;
  int line = 0;
};

[[noreturn]] void bad(const Raw& r, const std::string& key, const std::string& want) {
  throw ParseError("", r.line, "key '" + key + "' expects " + want + ", got " + r.value.dump());
}

std::int64_t as_int(const Raw& r, const std::string& key) {
  if (r.value.is_number_integer()) return r.value.get<std::int64_t>();
  if (r.value.is_number_float()) {
    const double d = r.value.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  bad(r, key, "an integer");
}

double as_double(const Raw& r, const std::string& key) {
  if (r.value.is_number()) return r.value.get<double>();
  bad(r, key, "a number");
}

bool as_bool(const Raw& r, const std::string& key) {
  if (r.value.is_boolean()) return r.value.get<bool>();
  bad(r, key, "true or false");
}

std::string as_string(const Raw& r, const std::string& key) {
  if (r.value.is_string()) return r.value.get<std::string>();
  if (r.value.is_number()) return r.value.dump();
  bad(r, key, "a string");
}

std::vector<Raw> as_list(const Raw& r) {
  std::vector<Raw> out;
  if (r.value.is_array()) {
    for (const auto& v : r.value) out.push_back({v, r.line});
  } else {
    out.push_back(r);
  }
  return out;
}

int as_int32(const Raw& r, const std::string& key) {
  const std::int64_t v = as_int(r, key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    bad(r, key, "a 32-bit integer");
  }
  return static_cast<int>(v);
}

const char* tlb_policy_name(TlbPolicy p) { return p == TlbPolicy::kLru ? "lru" : "fifo"; }

const char* dist_name(DistKind k) {
  switch (k) {
    case DistKind::kUniform: return "uniform";
    case DistKind::kNormal: return "normal";
    case DistKind::kPowerLaw: return "powerlaw";
  }
  return "?";
}

struct Key {
  const char* section;
  const char* name;
  std::function<void(ExperimentSpec&, const Raw&)> set;
  std::function<json(const ExperimentSpec&)> get;
};

#define DYSIM_INT(sec, key, field)                                                           \
  Key {                                                                                      \
    sec, key, [](ExperimentSpec& s, const Raw& r) { s.field = as_int32(r, key); },           \
        [](const ExperimentSpec& s) { return json(s.field); }                                \
  }
#define DYSIM_I64(sec, key, field)                                                           \
  Key {                                                                                      \
    sec, key, [](ExperimentSpec& s, const Raw& r) { s.field = as_int(r, key); },             \
        [](const ExperimentSpec& s) { return json(s.field); }                                \
  }
#define DYSIM_DBL(sec, key, field)                                                           \
  Key {                                                                                      \
    sec, key, [](ExperimentSpec& s, const Raw& r) { s.field = as_double(r, key); },          \
        [](const ExperimentSpec& s) { return json(s.field); }                                \
  }
#define DYSIM_BOOL(sec, key, field)                                                          \
  Key {                                                                                      \
    sec, key, [](ExperimentSpec& s, const Raw& r) { s.field = as_bool(r, key); },            \
        [](const ExperimentSpec& s) { return json(s.field); }                                \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      // experiment
      Key{"experiment", "name", [](ExperimentSpec& s, const Raw& r) { s.name = as_string(r, "name"); },
          [](const ExperimentSpec& s) { return json(s.name); }},
      Key{"experiment", "methods",
          [](ExperimentSpec& s, const Raw& r) {
            s.methods.clear();
            for (const Raw& v : as_list(r)) {
              try {
                s.methods.push_back(parse_method(as_string(v, "methods")));
              } catch (const ParseError&) {
                throw;
              } catch (const ConfigError& e) {
                throw ParseError("", r.line, e.what());
              }
            }
            if (s.methods.empty()) throw ParseError("", r.line, "methods must not be empty");
          },
          [](const ExperimentSpec& s) {
            json a = json::array();
            for (Method m : s.methods) a.push_back(to_string(m));
            return a;
          }},
      Key{"experiment", "seeds",
          [](ExperimentSpec& s, const Raw& r) {
            s.seeds.clear();
            for (const Raw& v : as_list(r)) {
              const std::int64_t x = as_int(v, "seeds");
              if (x < 0) throw ParseError("", r.line, "seeds must be non-negative");
              s.seeds.push_back(static_cast<std::uint64_t>(x));
            }
            if (s.seeds.empty()) throw ParseError("", r.line, "seeds must not be empty");
          },
          [](const ExperimentSpec& s) { return json(s.seeds); }},
      Key{"experiment", "out", [](ExperimentSpec& s, const Raw& r) { s.out_dir = as_string(r, "out"); },
          [](const ExperimentSpec& s) { return json(s.out_dir); }},
      Key{"experiment", "format",
          [](ExperimentSpec& s, const Raw& r) {
            s.format = as_string(r, "format");
            if (s.format != "csv" && s.format != "json") {
              throw ParseError("", r.line, "format must be csv or json");
            }
          },
          [](const ExperimentSpec& s) { return json(s.format); }},
      Key{"experiment", "baseline",
          [](ExperimentSpec& s, const Raw& r) {
            try {
              s.baseline = to_string(parse_method(as_string(r, "baseline")));
            } catch (const ParseError&) {
              throw;
            } catch (const ConfigError& e) {
              throw ParseError("", r.line, e.what());
            }
          },
          [](const ExperimentSpec& s) { return json(s.baseline); }},
      // system
      DYSIM_INT("system", "n_gpu", base.sys.n_gpu),
      DYSIM_INT("system", "n_switch", base.sys.n_switch),
      Key{"system", "link_bw_gbps",
          [](ExperimentSpec& s, const Raw& r) { s.base.sys.link_bw_per_dir = as_double(r, "link_bw_gbps") * 1e9; },
          [](const ExperimentSpec& s) { return json(s.base.sys.link_bw_per_dir / 1e9); }},
      DYSIM_DBL("system", "link_latency_ns", base.sys.link_latency_ns),
      DYSIM_INT("system", "flit_bytes", base.sys.flit_bytes),
      DYSIM_INT("system", "vc_count", base.sys.vc_count),
      DYSIM_INT("system", "vc_depth", base.sys.vc_depth),
      DYSIM_I64("system", "reduction_buffer_bytes", base.sys.reduction_buffer_bytes),
      DYSIM_INT("system", "multimemq_entries", base.sys.multimemq_entries),
      DYSIM_INT("system", "al_tlb_entries", base.sys.al_tlb_entries),
      DYSIM_INT("system", "ts_table_entries", base.sys.ts_table_entries),
      DYSIM_INT("system", "or_table_entries", base.sys.or_table_entries),
      DYSIM_DBL("system", "switch_latency_ns", base.sys.switch_latency_ns),
      // model
      Key{"model", "name", [](ExperimentSpec& s, const Raw& r) { s.base.model.name = as_string(r, "name"); },
          [](const ExperimentSpec& s) { return json(s.base.model.name); }},
      DYSIM_INT("model", "hidden_size", base.model.hidden_size),
      DYSIM_INT("model", "moe_hidden_size", base.model.moe_hidden_size),
      DYSIM_INT("model", "seq_len", base.model.seq_len),
      DYSIM_INT("model", "n_experts", base.model.n_experts),
      DYSIM_INT("model", "topk", base.model.topk),
      DYSIM_INT("model", "dtype_bytes", base.model.dtype_bytes),
      // workload
      Key{"workload", "distribution",
          [](ExperimentSpec& s, const Raw& r) {
            const std::string d = as_string(r, "distribution");
            if (d == "uniform") {
              s.base.dist = Distribution::uniform();
            } else if (d == "normal") {
              s.base.dist = Distribution::normal(s.base.dist.kind == DistKind::kNormal ? s.base.dist.param : 0.032);
            } else if (d == "powerlaw") {
              s.base.dist = Distribution::powerlaw(s.base.dist.kind == DistKind::kPowerLaw ? s.base.dist.param : 1.5);
            } else {
              throw ParseError("", r.line, "unknown distribution '" + d + "'");
            }
          },
          [](const ExperimentSpec& s) { return json(dist_name(s.base.dist.kind)); }},
      Key{"workload", "param",
          [](ExperimentSpec& s, const Raw& r) {
            const double p = as_double(r, "param");
            if (p < 0) throw ParseError("", r.line, "distribution parameter must be >= 0");
            s.base.dist.param = p;
          },
          [](const ExperimentSpec& s) { return json(s.base.dist.param); }},
      // compute
      Key{"compute", "peak_tflops",
          [](ExperimentSpec& s, const Raw& r) { s.base.compute.peak_flops = as_double(r, "peak_tflops") * 1e12; },
          [](const ExperimentSpec& s) { return json(s.base.compute.peak_flops / 1e12); }},
      DYSIM_DBL("compute", "efficiency", base.compute.efficiency),
      DYSIM_INT("compute", "num_sms", base.compute.num_sms),
      DYSIM_INT("compute", "tile_m", base.compute.tile_m),
      DYSIM_INT("compute", "tile_n", base.compute.tile_n),
      // hub
      DYSIM_DBL("hub", "hub_ns", base.hub.hub_ns),
      DYSIM_DBL("hub", "al_miss_ns", base.hub.al_miss_ns),
      DYSIM_DBL("hub", "mem_ns", base.hub.mem_ns),
      DYSIM_DBL("hub", "target_fetch_shared_ns", base.hub.target_fetch_shared_ns),
      DYSIM_DBL("hub", "target_fetch_global_ns", base.hub.target_fetch_global_ns),
      DYSIM_DBL("hub", "overflow_penalty_ns", base.hub.overflow_penalty_ns),
      // sim
      DYSIM_INT("sim", "tsize", base.tsize),
      DYSIM_I64("sim", "fragment_bytes", base.fragment_bytes),
      Key{"sim", "target_list",
          [](ExperimentSpec& s, const Raw& r) {
            const std::string v = as_string(r, "target_list");
            if (v != "shared" && v != "global") throw ParseError("", r.line, "target_list must be shared or global");
            s.base.target_list_in_shared = v == "shared";
          },
          [](const ExperimentSpec& s) { return json(s.base.target_list_in_shared ? "shared" : "global"); }},
      DYSIM_BOOL("sim", "pure_comm", base.pure_comm),
      Key{"sim", "partition",
          [](ExperimentSpec& s, const Raw& r) {
            const std::string v = as_string(r, "partition");
            if (v == "fixed") {
              s.base.partition = PartitionMode::kFixed;
            } else if (v == "proportional") {
              s.base.partition = PartitionMode::kProportional;
            } else {
              throw ParseError("", r.line, "partition must be fixed or proportional");
            }
          },
          [](const ExperimentSpec& s) {
            return json(s.base.partition == PartitionMode::kFixed ? "fixed" : "proportional");
          }},
      DYSIM_INT("sim", "comm_sms", base.comm_sms),
      DYSIM_BOOL("sim", "share_gemm", base.share_gemm),
      DYSIM_DBL("sim", "poll_ns", base.poll_ns),
      DYSIM_INT("sim", "combine_window", base.combine_window),
      DYSIM_INT("sim", "combine_window_max", base.combine_window_max),
      DYSIM_BOOL("sim", "adaptive_window", base.adaptive_window),
      DYSIM_DBL("sim", "window_mark_fraction", base.window_mark_fraction),
      Key{"sim", "tlb_policy",
          [](ExperimentSpec& s, const Raw& r) {
            const std::string v = as_string(r, "tlb_policy");
            if (v == "lru") {
              s.base.tlb_policy = TlbPolicy::kLru;
            } else if (v == "fifo") {
              s.base.tlb_policy = TlbPolicy::kFifo;
            } else {
              throw ParseError("", r.line, "tlb_policy must be lru or fifo");
            }
          },
          [](const ExperimentSpec& s) { return json(tlb_policy_name(s.base.tlb_policy)); }},
      DYSIM_DBL("sim", "explicit_compute_tax", base.explicit_compute_tax),
      DYSIM_DBL("sim", "explicit_comm_overhead", base.explicit_comm_overhead),
      DYSIM_I64("sim", "metadata_bytes_per_expert", base.metadata_bytes_per_expert),
      Key{"sim", "max_events",
          [](ExperimentSpec& s, const Raw& r) {
            const std::int64_t v = as_int(r, "max_events");
            if (v <= 0) throw ParseError("", r.line, "max_events must be positive");
            s.base.max_events = static_cast<std::uint64_t>(v);
          },
          [](const ExperimentSpec& s) { return json(s.base.max_events); }},
      // oracle
      DYSIM_I64("oracle", "mc_samples", oracle.mc_samples),
      Key{"oracle", "models",
          [](ExperimentSpec& s, const Raw& r) {
            s.oracle.models.clear();
            for (const Raw& v : as_list(r)) s.oracle.models.push_back(as_string(v, "models"));
          },
          [](const ExperimentSpec& s) { return json(s.oracle.models); }},
      Key{"oracle", "topks",
          [](ExperimentSpec& s, const Raw& r) {
            s.oracle.topks.clear();
            for (const Raw& v : as_list(r)) s.oracle.topks.push_back(as_int32(v, "topks"));
          },
          [](const ExperimentSpec& s) { return json(s.oracle.topks); }},
  };
  return k;
}

#undef DYSIM_INT
#undef DYSIM_I64
#undef DYSIM_DBL
#undef DYSIM_BOOL

const Key* find_key(const std::string& section, const std::string& name) {
  for (const Key& k : keys()) {
    if (section == k.section && name == k.name) return &k;
  }
  return nullptr;
}

bool is_axis(const std::string& name) {
  return std::find_if(std::begin(kSweepAxes), std::end(kSweepAxes),
                      [&](const char* a) { return name == a; }) != std::end(kSweepAxes);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json parse_scalar(const std::string& tok, const std::string& source, int line) {
  if (tok.empty()) throw ParseError(source, line, "empty value");
  if (tok.front() == '"') {
    if (tok.size() < 2 || tok.back() != '"') throw ParseError(source, line, "unterminated string");
    return tok.substr(1, tok.size() - 2);
  }
  if (tok == "true") return true;
  if (tok == "false") return false;
  // numbers: integers stay integral so the type checks can tell them apart
  {
    std::size_t pos = 0;
    try {
      const long long v = std::stoll(tok, &pos);
      if (pos == tok.size()) return v;
    } catch (const std::exception&) {
    }
    try {
      const double d = std::stod(tok, &pos);
      if (pos == tok.size()) return d;
    } catch (const std::exception&) {
    }
  }
  return tok;
}

// Splits on commas outside quotes.
std::vector<std::string> split_items(const std::string& s, const std::string& source, int line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : s) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError(source, line, "unterminated string");
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  for (const auto& item : out) {
    if (item.empty()) throw ParseError(source, line, "empty array element");
  }
  return out;
}

json parse_value(const std::string& text, const std::string& source, int line) {
  const std::string v = trim(text);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ParseError(source, line, "array is missing ']'");
    json a = json::array();
    for (const auto& item : split_items(v.substr(1, v.size() - 2), source, line)) {
      a.push_back(parse_scalar(item, source, line));
    }
    return a;
  }
  return parse_scalar(v, source, line);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

AxisValue axis_value(const std::string& axis, const json& v, const std::string& source, int line) {
  if (axis == "model") {
    if (!v.is_string()) throw ParseError(source, line, "sweep axis 'model' takes preset names");
    return v.get<std::string>();
  }
  if (!v.is_number()) throw ParseError(source, line, "sweep axis '" + axis + "' takes numbers");
  return v.get<double>();
}

void apply_preset_keys(ExperimentSpec& spec, std::map<std::string, std::map<std::string, Raw>>& sections,
                       const std::string& source) {
  if (auto it = sections["system"].find("preset"); it != sections["system"].end()) {
    try {
      spec.base.sys = system_preset(as_string(it->second, "preset"));
    } catch (const ParseError&) {
      throw;
    } catch (const ConfigError& e) {
      throw ParseError(source, it->second.line, e.what());
    }
    sections["system"].erase(it);
  }
  if (auto it = sections["model"].find("preset"); it != sections["model"].end()) {
    try {
      spec.base.model = model_preset(as_string(it->second, "preset"));
    } catch (const ParseError&) {
      throw;
    } catch (const ConfigError& e) {
      throw ParseError(source, it->second.line, e.what());
    }
    sections["model"].erase(it);
  }
}

// Shortest text that parses back to the same double.
std::string shortest(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

std::string render_scalar(const json& v) {
  if (v.is_string()) return "\"" + v.get<std::string>() + "\"";
  if (v.is_number_float()) {
    std::string s = shortest(v.get<double>());
    if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos) s += ".0";
    return s;
  }
  return v.dump();
}

std::string render_value(const json& v) {
  if (!v.is_array()) return render_scalar(v);
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + render_scalar(v[i]);
  return s + "]";
}

}  // namespace

std::string axis_value_string(const AxisValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  const double d = std::get<double>(v);
  if (std::floor(d) == d && std::abs(d) < 1e15) return std::to_string(static_cast<long long>(d));
  return shortest(d);
}

ExperimentSpec parse_config(std::istream& is, const std::string& source) {
  ExperimentSpec spec;
  std::map<std::string, std::map<std::string, Raw>> sections;
  std::vector<std::pair<std::string, Raw>> sweep_lines;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[' && t.back() == ']' && t.find('=') == std::string::npos) {
      section = trim(t.substr(1, t.size() - 2));
      static const char* known[] = {"experiment", "system", "model", "workload", "compute",
                                    "hub",        "sim",    "sweep", "oracle"};
      if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return section == k; }) ==
          std::end(known)) {
        throw ParseError(source, lineno, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    if (section.empty()) throw ParseError(source, lineno, "key outside of any [section]");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ParseError(source, lineno, "missing key before '='");
    Raw raw{parse_value(t.substr(eq + 1), source, lineno), lineno};
    if (section == "sweep") {
      if (!is_axis(key)) throw ParseError(source, lineno, "unknown sweep axis '" + key + "'");
      for (const auto& [k, r] : sweep_lines) {
        if (k == key) throw ParseError(source, lineno, "duplicate sweep axis '" + key + "'");
      }
      sweep_lines.emplace_back(key, raw);
      continue;
    }
    const bool preset = key == "preset" && (section == "system" || section == "model");
    if (!preset && !find_key(section, key)) {
      throw ParseError(source, lineno, "unknown key '" + key + "' in [" + section + "]");
    }
    if (!sections[section].emplace(key, raw).second) {
      throw ParseError(source, lineno, "duplicate key '" + key + "' in [" + section + "]");
    }
  }

  apply_preset_keys(spec, sections, source);
  // distribution kind before its parameter
  for (const char* first : {"distribution", "param"}) {
    auto& w = sections["workload"];
    if (auto it = w.find(first); it != w.end()) {
      try {
        find_key("workload", first)->set(spec, it->second);
      } catch (const ParseError& e) {
        throw ParseError(source, it->second.line, e.message());
      }
      w.erase(it);
    }
  }
  for (auto& [sec, entries] : sections) {
    for (auto& [key, raw] : entries) {
      try {
        find_key(sec, key)->set(spec, raw);
      } catch (const ParseError& e) {
        throw ParseError(source, raw.line, e.message());
      }
    }
  }
  for (const auto& [axis, raw] : sweep_lines) {
    SweepAxis a{axis, {}};
    const json vals = raw.value.is_array() ? raw.value : json::array({raw.value});
    if (vals.empty()) throw ParseError(source, raw.line, "sweep axis '" + axis + "' has no values");
    for (const auto& v : vals) a.values.push_back(axis_value(axis, v, source, raw.line));
    spec.sweep.push_back(std::move(a));
  }
  // canonical axis order
  std::stable_sort(spec.sweep.begin(), spec.sweep.end(), [](const SweepAxis& a, const SweepAxis& b) {
    auto idx = [](const std::string& n) {
      return std::find_if(std::begin(kSweepAxes), std::end(kSweepAxes), [&](const char* x) { return n == x; }) -
             std::begin(kSweepAxes);
    };
    return idx(a.name) < idx(b.name);
  });

  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ParseError(source, 0, e.what());
  }
  return spec;
}

ExperimentSpec parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(f, path);
}

ExperimentSpec parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is, "<string>");
}

std::string render_config(const ExperimentSpec& spec) {
  std::ostringstream os;
  std::string section;
  for (const Key& k : keys()) {
    if (section != k.section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << k.name << " = " << render_value(k.get(spec)) << '\n';
  }
  if (!spec.sweep.empty()) {
    os << "\n[sweep]\n";
    for (const SweepAxis& a : spec.sweep) {
      json v = json::array();
      for (const AxisValue& x : a.values) {
        if (const auto* s = std::get_if<std::string>(&x)) {
          v.push_back(*s);
        } else {
          v.push_back(std::get<double>(x));
        }
      }
      os << a.name << " = " << render_value(v) << '\n';
    }
  }
  return os.str();
}

std::string config_json(const ExperimentSpec& spec) {
  json j = json::object();
  for (const Key& k : keys()) j[k.section][k.name] = k.get(spec);
  if (!spec.sweep.empty()) {
    json& sw = j["sweep"];
    for (const SweepAxis& a : spec.sweep) {
      json v = json::array();
      for (const AxisValue& x : a.values) {
        if (const auto* s = std::get_if<std::string>(&x)) {
          v.push_back(*s);
        } else {
          v.push_back(std::get<double>(x));
        }
      }
      sw[a.name] = v;
    }
  }
  return j.dump(2);
}

ExperimentSpec parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config echo is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config echo must be a JSON object");
  std::ostringstream os;
  for (const auto& [sec, entries] : j.items()) {
    if (!entries.is_object()) throw ConfigError("config echo section '" + sec + "' must be an object");
    os << '[' << sec << "]\n";
    for (const auto& [key, v] : entries.items()) os << key << " = " << render_value(v) << '\n';
  }
  std::istringstream is(os.str());
  return parse_config(is, "<json>");
}

std::string run_config_hash(const RunConfig& cfg) {
  ExperimentSpec s;
  s.base = cfg;
  s.methods = {cfg.method};
  s.seeds = {cfg.seed};
  const std::uint64_t h = fnv1a(render_config(s));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::size_t ExperimentSpec::points() const {
  std::size_t n = 1;
  for (const auto& a : sweep) n *= a.values.size();
  return n;
}

void apply_axis(RunConfig& cfg, const std::string& axis, const AxisValue& v) {
  auto num = [&]() {
    if (!std::holds_alternative<double>(v)) throw ConfigError("sweep axis '" + axis + "' takes numbers");
    return std::get<double>(v);
  };
  auto integer = [&]() {
    const double d = num();
    if (std::floor(d) != d || std::abs(d) > 2e9) {
      throw ConfigError("sweep axis '" + axis + "' needs integers, got " + axis_value_string(v));
    }
    return static_cast<int>(d);
  };
  if (axis == "model") {
    if (!std::holds_alternative<std::string>(v)) throw ConfigError("sweep axis 'model' takes preset names");
    const int seq = cfg.model.seq_len;
    cfg.model = model_preset(std::get<std::string>(v));
    cfg.model.seq_len = seq;
  } else if (axis == "topk") {
    cfg.model.topk = integer();
  } else if (axis == "n_gpu") {
    cfg.sys.n_gpu = integer();
  } else if (axis == "seq_len") {
    cfg.model.seq_len = integer();
  } else if (axis == "std") {
    cfg.dist = Distribution::normal(num());
  } else if (axis == "alpha") {
    cfg.dist = Distribution::powerlaw(num());
  } else if (axis == "tlb_entries") {
    cfg.sys.al_tlb_entries = integer();
  } else if (axis == "reduction_buffer") {
    cfg.sys.reduction_buffer_bytes = integer();
  } else if (axis == "tsize") {
    cfg.tsize = integer();
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "'");
  }
}

std::vector<RunPoint> expand(const ExperimentSpec& spec) {
  std::vector<RunPoint> out;
  const std::size_t npts = spec.points();
  for (std::size_t p = 0; p < npts; ++p) {
    RunConfig cfg = spec.base;
    std::vector<std::pair<std::string, AxisValue>> coords;
    std::size_t rem = p;
    std::size_t stride = npts;
    for (const SweepAxis& a : spec.sweep) {
      stride /= a.values.size();
      const AxisValue& v = a.values[rem / stride];
      rem %= stride;
      apply_axis(cfg, a.name, v);
      coords.emplace_back(a.name, v);
    }
    for (std::uint64_t seed : spec.seeds) {
      for (Method m : spec.methods) {
        RunPoint rp;
        rp.point = p;
        rp.coords = coords;
        rp.seed = seed;
        rp.method = m;
        rp.cfg = cfg;
        rp.cfg.seed = seed;
        rp.cfg.method = m;
        out.push_back(std::move(rp));
      }
    }
  }
  return out;
}

void ExperimentSpec::validate() const {
  if (methods.empty()) throw ConfigError("no methods selected");
  if (seeds.empty()) throw ConfigError("no seeds selected");
  if (oracle.mc_samples < 2) throw ConfigError("oracle mc_samples must be at least 2");
  base.validate();
  // every sweep value on its own, then every point
  for (const SweepAxis& a : sweep) {
    for (const AxisValue& v : a.values) {
      RunConfig c = base;
      try {
        apply_axis(c, a.name, v);
        c.validate();
      } catch (const ConfigError& e) {
        throw ConfigError("sweep " + a.name + "=" + axis_value_string(v) + ": " + e.what());
      }
    }
  }
  for (const RunPoint& rp : expand(*this)) {
    try {
      rp.cfg.validate();
    } catch (const ConfigError& e) {
      std::string where;
      for (const auto& [n, v] : rp.coords) where += (where.empty() ? "" : ", ") + n + "=" + axis_value_string(v);
      throw ConfigError("sweep point (" + where + "): " + e.what());
    }
  }
}

}  // namespace dysim
