// lme: run, replay and check lock-protocol simulations.
//
// Exit codes: 0 clean, 1 checker violation or replay mismatch, 2 usage,
// parse or configuration error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "lme/run.hpp"

namespace {

constexpr int kClean = 0;
constexpr int kViolation = 1;
constexpr int kUsage = 2;

struct Overrides {
  std::optional<int> nodes, delta, k, fairness, dmax;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<lme::Round> horizon;
  std::optional<double> p_add, p_del;
  std::optional<std::string> app, program, partner;
  bool pair_only = false;
};

void apply(const Overrides& o, lme::RunOptions& r) {
  if (o.nodes) r.sim.node_count = *o.nodes;
  if (o.delta) r.sim.delta = *o.delta;
  if (o.k) r.sim.k = *o.k;
  if (o.fairness) r.sim.schedule.fairness_bound = *o.fairness;
  if (o.mode) {
    r.sim.schedule.mode = lme::parse_mode(*o.mode);
    if (r.sim.schedule.mode == lme::Mode::Async && !o.dmax && r.sim.schedule.async_max_duration == 1) {
      r.sim.schedule.async_max_duration = 5;
    }
  }
  if (o.dmax) r.sim.schedule.async_max_duration = *o.dmax;
  if (o.seed) r.sim.schedule.seed = *o.seed;
  if (o.horizon) r.sim.schedule.horizon = *o.horizon;
  if (o.p_add) r.sim.dynamics.p_add = *o.p_add;
  if (o.p_del) r.sim.dynamics.p_del = *o.p_del;
  if (o.app) r.app = *o.app;
  if (o.program) r.program = *o.program;
  if (o.pair_only) r.workload.lock_pair_only = true;
  if (o.partner) r.random_partner = *o.partner == "random";
  r.validate();
}

void emit(const nlohmann::ordered_json& summary, const std::string& path, bool quiet) {
  if (!quiet) std::cout << summary.dump(2) << '\n';
  if (!path.empty()) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << summary.dump(2) << '\n';
  }
}

int do_run(const std::string& scenario, const Overrides& ov, const std::string& trace_out,
           const std::string& replay, bool reduce_check, const std::string& summary_out, bool quiet) {
  if (!replay.empty()) {
    const lme::Trace trace = lme::read_trace_file(replay);
    const lme::RunResult r = lme::replay_trace(trace);
    emit(r.summary, summary_out, quiet);
    return r.violations == 0 ? kClean : kViolation;
  }

  lme::RunOptions opts = scenario.empty() ? lme::RunOptions{} : lme::load_scenario(scenario);
  apply(ov, opts);
  if (reduce_check && opts.sim.schedule.mode != lme::Mode::Async) {
    throw CLI::ValidationError("--reduce-check", "needs --mode async");
  }

  std::ofstream file;
  std::ostringstream memory;
  std::ostream* sink = nullptr;
  if (reduce_check) {
    sink = &memory;
  } else if (!trace_out.empty()) {
    file.open(trace_out);
    if (!file) throw std::runtime_error("cannot write " + trace_out);
    sink = &file;
  }

  lme::RunResult r = lme::run_scenario(opts, sink);
  int code = r.violations == 0 ? kClean : kViolation;
  if (reduce_check) {
    const std::string text = memory.str();
    if (!trace_out.empty()) {
      std::ofstream out(trace_out);
      out << text;
    }
    std::istringstream in(text);
    const lme::ReductionReport rep = lme::check_reduction(lme::parse_trace(in));
    r.summary["reduction"] = {{"executions", rep.executions},
                              {"mismatches", rep.mismatches},
                              {"reduced_rounds", rep.reduced.get("horizon").value_or("0")}};
    if (rep.mismatches != 0) {
      r.summary["reduction"]["first_mismatch"] = rep.first_mismatch;
      code = kViolation;
    }
  }
  emit(r.summary, summary_out, quiet);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator and checkers for a local mutual exclusion protocol on dynamic graphs"};
  app.require_subcommand(1);

  Overrides ov;
  std::string scenario, trace_out, replay, summary_out, stats_trace;
  bool reduce_check = false;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run a scenario (or replay a trace) and print the summary");
  run->add_option("--scenario", scenario, "Scenario JSON file")->check(CLI::ExistingFile);
  run->add_option("--nodes", ov.nodes, "Number of nodes");
  run->add_option("--delta", ov.delta, "Ports per node");
  run->add_option("--k", ov.k, "Priority range");
  run->add_option("--mode", ov.mode, "semisync or async")->check(CLI::IsMember({"semisync", "async"}));
  run->add_option("--dmax", ov.dmax, "Longest async execution span");
  run->add_option("--seed", ov.seed, "Run seed");
  run->add_option("--horizon", ov.horizon, "Rounds to simulate");
  run->add_option("--fairness", ov.fairness, "Fairness bound F");
  run->add_option("--p-add", ov.p_add, "Per-round edge creation probability");
  run->add_option("--p-del", ov.p_del, "Per-round edge deletion probability");
  run->add_option("--app", ov.app, "Application layer")->check(CLI::IsMember({"popproto", "lockapi", "none"}));
  run->add_option("--program", ov.program, "Agent transition table for popproto");
  run->add_option("--partner", ov.partner, "popproto partner choice")->check(CLI::IsMember({"lowest", "random"}));
  run->add_flag("--pair-only", ov.pair_only, "Lock only self and one neighbor");
  run->add_option("--trace-out", trace_out, "Write the trace here");
  run->add_option("--replay", replay, "Replay this trace instead of running")->check(CLI::ExistingFile);
  run->add_flag("--reduce-check", reduce_check, "Reduce the async trace and verify every execution");
  run->add_option("--summary-out", summary_out, "Also write the summary JSON here");
  run->add_flag("--quiet", quiet, "Do not print the summary");

  auto* stats = app.add_subcommand("stats", "Recompute the summary of a trace");
  stats->add_option("trace", stats_trace, "Trace file")->required()->check(CLI::ExistingFile);
  stats->add_option("--summary-out", summary_out, "Also write the summary JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kClean : kUsage;
  }

  try {
    if (*run) return do_run(scenario, ov, trace_out, replay, reduce_check, summary_out, quiet);
    const lme::RunResult r = lme::replay_trace(lme::read_trace_file(stats_trace));
    emit(r.summary, summary_out, false);
    return r.violations == 0 ? kClean : kViolation;
  } catch (const lme::TraceParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const lme::ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return kUsage;
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kUsage;
  } catch (const lme::ReplayError& e) {
    std::cerr << "replay failed: " << e.what() << '\n';
    return kViolation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
