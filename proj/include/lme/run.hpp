#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lme/apps.hpp"
#include "lme/checker.hpp"
#include "lme/scheduler.hpp"

namespace lme {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs: the world, the adversary and the application.
struct RunOptions {
  SimulationConfig sim;
  WorkloadConfig workload;
  std::string app = "lockapi";  ///< lockapi | popproto | none
  std::string program;          ///< agent program file; built-in rumor if empty
  std::vector<std::string> init;  ///< popproto initial states by node; see initial_states()
  bool check_dag = true;
  bool random_partner = false;  ///< popproto partner choice; lowest label otherwise

  RunOptions();
  void validate() const;
};

// Scenario files are JSON objects; every key is optional:
//
//   {"nodes": 8, "delta": 4, "k": 8,
//    "edges": [[0, 1], [1, 2]],
//    "events": [{"round": 10, "op": "disconnect", "u": 0, "v": 1}],
//    "dynamics": {"p_add": 0.05, "p_del": 0.05},
//    "schedule": {"mode": "semisync", "activation": "all", "p_act": 1.0,
//                 "delivery": "random", "fairness": 16, "dmax": 5,
//                 "seed": 1, "horizon": 1000},
//    "workload": {"lock_rate": 1.0, "hold_max": 3, "drain": 200,
//                 "pair_only": false},
//    "app": "lockapi", "program": "rumor.tt", "init": ["I", "S"],
//    "partner": "lowest"}
RunOptions parse_scenario(const nlohmann::json& j);
RunOptions load_scenario(const std::string& path);

/// Agent program of a popproto run.
AgentProgram load_program(const RunOptions& opts);
/// Initial agent states: `init` by name where given, else node 0 starts in
/// the program's last state and everyone else in state 0.
std::vector<int> initial_states(const RunOptions& opts, const AgentProgram& program);

struct RunResult {
  nlohmann::ordered_json summary;
  std::uint64_t violations = 0;
  std::uint64_t final_hash = 0;
};

/// Live run to the horizon. Writes the trace to `trace_out` if given.
RunResult run_scenario(const RunOptions& opts, std::ostream* trace_out = nullptr);

/// Re-runs the checkers over a recorded trace. The summary equals the one of
/// the live run that produced it.
RunResult replay_trace(const Trace& trace);

/// Run summary; `header` is echoed as the configuration. Sets `violations`
/// to the number of hard violations.
nlohmann::ordered_json summarize(const Simulation& sim, const Monitor& monitor, const TraceHeader& header,
                                 const PopulationApp* pop, std::uint64_t& violations);

struct Percentiles {
  Round p50 = 0, p90 = 0, p99 = 0, max = 0;
};
/// Nearest-rank percentiles; zeros for an empty sample.
Percentiles percentiles(std::vector<Round> xs);

}  // namespace lme
