#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "dysim/errors.hpp"
#include "dysim/simulator.hpp"

namespace dysim {

// Parse failure; what() starts with "<source>:<line>: " when a line is known.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& source, int line, const std::string& msg);
  int line() const { return line_; }
  const std::string& message() const { return msg_; }

 private:
  int line_;
  std::string msg_;
};

// Sweep axes in iteration order (the first axis varies slowest).
inline constexpr const char* kSweepAxes[] = {"model", "topk",        "n_gpu",            "seq_len", "std",
                                             "alpha", "tlb_entries", "reduction_buffer", "tsize"};

using AxisValue = std::variant<double, std::string>;

struct SweepAxis {
  std::string name;
  std::vector<AxisValue> values;
};

struct OracleOptions {
  std::int64_t mc_samples = 65536;
  std::vector<std::string> models;  // empty: the experiment's model
  std::vector<int> topks;           // empty: the experiment's topk
};

// A fully resolved experiment: the base run configuration plus the method
// list, seeds and sweep axes.
struct ExperimentSpec {
  std::string name = "experiment";
  RunConfig base;
  std::vector<Method> methods{Method::kDySharpFull};
  std::vector<std::uint64_t> seeds{1};
  std::vector<SweepAxis> sweep;
  OracleOptions oracle;
  std::string out_dir;  // empty: caller decides
  std::string format = "csv";
  std::string baseline = "deepep";

  // Number of sweep points (1 without axes).
  std::size_t points() const;
  // Checks every sweep value against the module preconditions.
  void validate() const;
};

// One expanded run: a sweep point, a seed and a method.
struct RunPoint {
  std::size_t point = 0;
  std::vector<std::pair<std::string, AxisValue>> coords;
  std::uint64_t seed = 1;
  Method method = Method::kDySharpFull;
  RunConfig cfg;
};

ExperimentSpec parse_config(std::istream& is, const std::string& source = "<config>");
ExperimentSpec parse_config_file(const std::string& path);
ExperimentSpec parse_config_string(const std::string& text);

// Re-parseable text rendering of a spec (every key written explicitly).
std::string render_config(const ExperimentSpec& spec);
// JSON echo {section: {key: value}, sweep: {axis: [..]}} and its inverse.
std::string config_json(const ExperimentSpec& spec);
ExperimentSpec parse_config_json(const std::string& text);
// 16 hex digits identifying one run's resolved configuration, method and seed.
std::string run_config_hash(const RunConfig& cfg);

// Applies one sweep coordinate to a run configuration.
void apply_axis(RunConfig& cfg, const std::string& axis, const AxisValue& v);
// Cartesian product of sweep axes x seeds x methods, in a fixed order.
std::vector<RunPoint> expand(const ExperimentSpec& spec);

std::string axis_value_string(const AxisValue& v);

}  // namespace dysim
