// dysim command-line driver.
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "dysim/config.hpp"
#include "dysim/report.hpp"
#include "dysim/runner.hpp"

namespace {

constexpr int kExitViolation = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config;
  std::string out;
  std::string format;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  bool serial = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_methods) {
  cmd->add_option("config", c.config, "Experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out,-o", c.out, "Output directory (default: $DYSIM_OUT_DIR/<name>, else out/<name>)");
  cmd->add_option("--seed", c.seeds, "Override the seed list");
  cmd->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  if (with_methods) cmd->add_option("--method,-m", c.methods, "Override the method list");
  cmd->add_flag("--serial", c.serial, "Disable OpenMP fan-out");
  cmd->add_flag("--quiet,-q", c.quiet, "No per-run progress lines");
}

dysim::ExperimentSpec load(const Common& c) {
  dysim::ExperimentSpec spec = dysim::parse_config_file(c.config);
  if (!c.seeds.empty()) spec.seeds = c.seeds;
  if (!c.methods.empty()) {
    spec.methods.clear();
    for (const std::string& m : c.methods) spec.methods.push_back(dysim::parse_method(m));
  }
  if (!c.format.empty()) spec.format = c.format;
  if (!c.out.empty()) {
    spec.out_dir = c.out;
  } else if (spec.out_dir.empty()) {
    const char* env = std::getenv("DYSIM_OUT_DIR");
    spec.out_dir = std::string(env && *env ? env : "out") + "/" + spec.name;
  }
  spec.validate();
  return spec;
}

void print_record(const dysim::RunRecord& r) {
  const auto& m = r.metrics;
  std::printf("%-16s point=%-3zu seed=%-4llu %10.2f us  data_flits=%-11lld %s\n", dysim::to_string(r.point.method),
              r.point.point, static_cast<unsigned long long>(r.point.seed), dysim::to_ns(m.completion) / 1000.0,
              static_cast<long long>(m.data_flits()), r.ok() ? "ok" : "FAILED");
  if (!r.error.empty()) std::printf("  error: %s\n", r.error.c_str());
  for (const std::string& v : m.violations) std::printf("  violation: %s\n", v.c_str());
  std::fflush(stdout);
}

int simulate(const Common& c, const std::string& dump_path, bool require_sweep) {
  dysim::ExperimentSpec spec = load(c);
  if (require_sweep && spec.sweep.empty()) {
    std::fprintf(stderr, "sweep: config has no [sweep] axes; use 'run'\n");
    return kExitConfig;
  }
  std::unique_ptr<std::ofstream> dump;
  dysim::RunOptions opt;
  opt.parallel = !c.serial;
  if (!dump_path.empty()) {
    dump = std::make_unique<std::ofstream>(dump_path);
    if (!*dump) throw std::runtime_error("cannot write '" + dump_path + "'");
    opt.flit_dump = dump.get();
  }
  if (!c.quiet) opt.on_done = print_record;
  const auto runs = dysim::run_experiment(spec, opt);
  for (const std::string& p : dysim::emit(spec, runs, spec.out_dir, spec.format)) {
    std::printf("wrote %s\n", p.c_str());
  }
  std::size_t failed = 0;
  for (const auto& r : runs) failed += r.ok() ? 0 : 1;
  if (failed) {
    std::fprintf(stderr, "%zu of %zu runs failed invariant checks\n", failed, runs.size());
    return kExitViolation;
  }
  return 0;
}

int oracle(const Common& c) {
  dysim::ExperimentSpec spec = load(c);
  const auto rows = dysim::run_oracle(spec, !c.serial);
  for (const auto& r : rows) {
    std::printf("%-8s n_gpu=%-3d topk=%-3d redundancy=%.4f ideal_speedup=%.4f nvls_useless=%.4f\n", r.model.c_str(),
                r.n_gpu, r.topk, r.has_closed_form ? r.closed.redundancy : r.mc.redundancy,
                r.has_closed_form ? r.closed.ideal_speedup : r.mc.ideal_speedup,
                r.has_closed_form ? r.closed.nvls_useless : r.mc.nvls_useless);
  }
  for (const std::string& p : dysim::emit_oracle(spec, rows, spec.out_dir, spec.format)) {
    std::printf("wrote %s\n", p.c_str());
  }
  return 0;
}

int validate(const Common& c, bool print) {
  dysim::ExperimentSpec spec = load(c);
  const auto pts = dysim::expand(spec);
  for (const auto& p : pts) p.cfg.validate();
  std::printf("%s: ok, %zu sweep point(s), %zu run(s)\n", c.config.c_str(), spec.points(), pts.size());
  if (print) std::fputs(dysim::render_config(spec).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flit-level simulator for in-switch MoE Dispatch/Combine"};
  app.require_subcommand(1);

  Common run_c, sweep_c, oracle_c, validate_c;
  std::string dump_path;
  bool print = false;

  auto* run = app.add_subcommand("run", "Simulate every method x seed (x sweep point) of a config");
  add_common(run, run_c, true);
  run->add_option("--dump-flits", dump_path, "Write one line per injected packet (forces --serial)");

  auto* sweep = app.add_subcommand("sweep", "Like run, but requires [sweep] axes");
  add_common(sweep, sweep_c, true);

  auto* orc = app.add_subcommand("oracle", "Analytic and Monte-Carlo traffic oracles, no simulation");
  add_common(orc, oracle_c, false);

  auto* val = app.add_subcommand("validate", "Parse and check a config without running it");
  add_common(val, validate_c, true);
  val->add_flag("--print", print, "Print the fully resolved config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return simulate(run_c, dump_path, false);
    if (*sweep) return simulate(sweep_c, "", true);
    if (*orc) return oracle(oracle_c);
    if (*val) return validate(validate_c, print);
  } catch (const dysim::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitViolation;
  }
  return 0;
}
