#include "dysim/runner.hpp"

#include <exception>
#include <map>
#include <utility>

#include "dysim/simulator.hpp"
#include "dysim/workload.hpp"

namespace dysim {

namespace {

RunRecord execute(const RunPoint& p, const RoutingTable& routing, std::ostream* dump) {
  RunRecord r;
  r.point = p;
  r.point.cfg.flit_dump = nullptr;
  r.config_hash = run_config_hash(r.point.cfg);
  RunConfig cfg = p.cfg;
  cfg.flit_dump = dump;
  try {
    r.metrics = run_method(cfg, routing);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  const std::vector<RunPoint> pts = expand(spec);

  // One routing table per (point, seed).
  std::map<std::pair<std::size_t, std::uint64_t>, std::size_t> slot;
  std::vector<const RunPoint*> owners;
  for (const RunPoint& p : pts) {
    if (slot.emplace(std::make_pair(p.point, p.seed), owners.size()).second) owners.push_back(&p);
  }
  std::vector<RoutingTable> routings(owners.size());
  for (std::size_t i = 0; i < owners.size(); ++i) {
    const RunConfig& c = owners[i]->cfg;
    routings[i] = opt.parallel ? gen_routing(c.model, c.dist, c.seed) : gen_routing_serial(c.model, c.dist, c.seed);
  }

  std::vector<RunRecord> out(pts.size());
  const bool par = opt.parallel && opt.flit_dump == nullptr;
  const long n = static_cast<long>(pts.size());
#pragma omp parallel for schedule(dynamic, 1) if (par)
  for (long i = 0; i < n; ++i) {
    const RunPoint& p = pts[i];
    out[i] = execute(p, routings[slot.at({p.point, p.seed})], opt.flit_dump);
    if (opt.on_done) {
#pragma omp critical(dysim_on_done)
      opt.on_done(out[i]);
    }
  }
  return out;
}

std::vector<OracleRow> run_oracle(const ExperimentSpec& spec, bool parallel) {
  std::vector<std::string> models = spec.oracle.models;
  if (models.empty()) models.push_back(spec.base.model.name);
  std::vector<int> topks = spec.oracle.topks;
  std::vector<OracleRow> rows;
  for (const std::string& name : models) {
    ModelConfig base = name == spec.base.model.name ? spec.base.model : model_preset(name);
    std::vector<int> ks = topks.empty() ? std::vector<int>{base.topk} : topks;
    for (int k : ks) {
      ModelConfig m = base;
      m.topk = k;
      OracleRow row;
      row.model = m.name;
      row.n_gpu = spec.base.sys.n_gpu;
      row.topk = k;
      row.distribution = spec.base.dist.label();
      if (spec.base.dist.kind == DistKind::kUniform) {
        row.has_closed_form = true;
        row.closed = closed_form_oracle(m, row.n_gpu);
      }
      const std::int64_t s = spec.oracle.mc_samples;
      const std::uint64_t seed = spec.seeds.empty() ? 1 : spec.seeds.front();
      row.mc = parallel ? monte_carlo_oracle(m, row.n_gpu, spec.base.dist, s, seed)
                        : monte_carlo_oracle_serial(m, row.n_gpu, spec.base.dist, s, seed);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace dysim
