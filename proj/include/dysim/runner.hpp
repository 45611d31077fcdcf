#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "dysim/config.hpp"
#include "dysim/report.hpp"

namespace dysim {

struct RunOptions {
  bool parallel = true;                 // OpenMP fan-out over runs
  std::ostream* flit_dump = nullptr;    // forces serial execution
  std::function<void(const RunRecord&)> on_done;  // called in completion order, serialized
};

// Runs every expanded point of `spec`. Routing tables are generated once per
// (sweep point, seed) and shared by all methods. Records come back in
// expansion order regardless of execution order.
std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, const RunOptions& opt = {});

// Closed-form (uniform routing only) and Monte-Carlo traffic oracles for each
// (model, topk) listed in [oracle], or the experiment's own model otherwise.
std::vector<OracleRow> run_oracle(const ExperimentSpec& spec, bool parallel = true);

}  // namespace dysim
