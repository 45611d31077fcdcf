#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dysim/config.hpp"
#include "dysim/metrics.hpp"
#include "dysim/oracles.hpp"

namespace dysim {

inline constexpr const char* kSchemaVersion = "1";

struct RunRecord {
  RunPoint point;
  std::string config_hash;
  RunMetrics metrics;
  std::string error;  // set when the run aborted

  bool ok() const { return error.empty() && metrics.ok(); }
};

// Column lists are part of the output contract.
const std::vector<std::string>& runs_csv_columns();
const std::vector<std::string>& timeline_csv_columns();
const std::vector<std::string>& sweep_csv_columns();
const std::vector<std::string>& oracle_csv_columns();

void write_runs_csv(std::ostream& os, const std::vector<RunRecord>& runs);
void write_timeline_csv(std::ostream& os, const std::vector<RunRecord>& runs);
// One row per run with its resolved axis values and the speedup over the
// baseline method at the same sweep point and seed (empty when absent).
void write_sweep_csv(std::ostream& os, const std::vector<RunRecord>& runs, const std::string& baseline);

struct OracleRow {
  std::string model;
  int n_gpu = 0;
  int topk = 0;
  std::string distribution;
  bool has_closed_form = false;
  TrafficOracle closed;
  MonteCarloEstimate mc;
};
void write_oracle_csv(std::ostream& os, const std::vector<OracleRow>& rows);

std::string results_json(const ExperimentSpec& spec, const std::vector<RunRecord>& runs);
std::string oracle_json(const ExperimentSpec& spec, const std::vector<OracleRow>& rows);

// Writes runs.csv, timeline.csv and sweep.csv (format "csv") or
// results.json (format "json") into `dir`, creating it when needed.
// Returns the written paths.
std::vector<std::string> emit(const ExperimentSpec& spec, const std::vector<RunRecord>& runs,
                              const std::string& dir, const std::string& format);
std::vector<std::string> emit_oracle(const ExperimentSpec& spec, const std::vector<OracleRow>& rows,
                                     const std::string& dir, const std::string& format);

}  // namespace dysim
