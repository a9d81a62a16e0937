#include <doctest.h>

#include <sstream>

#include "lme/run.hpp"

using namespace lme;
using nlohmann::json;

namespace {

RunOptions scenario(const char* text) { return parse_scenario(json::parse(text)); }

Trace trace_of(const RunOptions& o) {
  std::ostringstream out;
  run_scenario(o, &out);
  std::istringstream in(out.str());
  return parse_trace(in);
}

}  // namespace

TEST_CASE("scenario parsing") {
  const RunOptions o = scenario(R"({
    "nodes": 5, "delta": 3, "k": 16,
    "edges": [[0, 1], [1, 2]],
    "events": [{"round": 10, "op": "disconnect", "u": 0, "v": 1}],
    "dynamics": {"p_add": 0.1, "p_del": 0.2},
    "schedule": {"mode": "async", "activation": "random_subset", "p_act": 0.5,
                 "delivery": "oldest_first", "fairness": 8, "dmax": 3, "seed": 9, "horizon": 700},
    "workload": {"lock_rate": 0.5, "hold_max": 2, "drain": 100, "pair_only": true},
    "app": "popproto", "init": ["I", "S"], "partner": "random"})");
  CHECK(o.sim.node_count == 5);
  CHECK(o.sim.delta == 3);
  CHECK(o.sim.k == 16);
  CHECK(o.sim.initial_edges.size() == 2);
  REQUIRE(o.sim.scripted_events.size() == 1);
  CHECK(o.sim.scripted_events[0].round == 10);
  CHECK_FALSE(o.sim.scripted_events[0].connect);
  CHECK(o.sim.dynamics.p_del == 0.2);
  CHECK(o.sim.schedule.mode == Mode::Async);
  CHECK(o.sim.schedule.activation == ActivationPolicy::RandomSubset);
  CHECK(o.sim.schedule.delivery == DeliveryPolicy::OldestFirst);
  CHECK(o.sim.schedule.fairness_bound == 8);
  CHECK(o.sim.schedule.async_max_duration == 3);
  CHECK(o.sim.schedule.seed == 9);
  CHECK(o.sim.schedule.horizon == 700);
  CHECK(o.workload.drain == Round{100});
  CHECK(o.workload.lock_pair_only);
  CHECK(o.app == "popproto");
  CHECK(o.random_partner);
  CHECK(initial_states(o, load_program(o)) == std::vector<int>{1, 0, 0, 0, 0});

  const RunOptions d = scenario("{}");
  CHECK_FALSE(d.random_partner);
  CHECK(d.app == "lockapi");
  // Default popproto start: node 0 informed.
  CHECK(initial_states(d, AgentProgram::rumor())[0] == 1);

  CHECK_THROWS_AS(scenario(R"({"nodez": 3})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"schedule": {"speed": 3}})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"schedule": {"mode": "sync"}})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"partner": "best"})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"app": "game"})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"nodes": "many"})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"delta": 0})"), ScenarioError);
  CHECK_THROWS_AS(scenario(R"({"events": [{"round": 1, "op": "flip", "u": 0, "v": 1}]})"), ScenarioError);
  CHECK_THROWS_AS(scenario("[1, 2]"), ScenarioError);
  CHECK_THROWS_AS(load_scenario("/nonexistent.json"), ScenarioError);
}

TEST_CASE("summary fields") {
  RunOptions o;
  o.sim.node_count = 8;
  o.sim.schedule.seed = 1;
  o.sim.schedule.horizon = 800;
  const RunResult r = run_scenario(o);
  const auto& s = r.summary;
  CHECK(r.violations == 0);
  CHECK(s["seed"] == 1);
  CHECK(s["rounds"] == 800);
  CHECK(s["requests"]["issued"].get<std::uint64_t>() >= s["requests"]["succeeded"].get<std::uint64_t>());
  CHECK(s["requests"]["succeeded"].get<std::uint64_t>() > 0);
  CHECK(s["violations"]["total"] == 0);
  CHECK(s["horizon_exceeded"] == false);
  CHECK(s["final_state_hash"].get<std::string>().size() == 16);
  CHECK(s.contains("latency"));
  CHECK(s.contains("trials_per_request"));
  CHECK(s["messages"]["sent"].get<std::uint64_t>() > 0);
}

TEST_CASE("replay reproduces the live summary") {
  for (const char* app : {"lockapi", "popproto"}) {
    for (Mode mode : {Mode::SemiSync, Mode::Async}) {
      RunOptions o;
      o.app = app;
      o.sim.node_count = 10;
      o.sim.schedule.mode = mode;
      o.sim.schedule.async_max_duration = mode == Mode::Async ? 4 : 1;
      o.sim.schedule.seed = 17;
      o.sim.schedule.horizon = 600;
      o.random_partner = std::string(app) == "popproto";
      std::ostringstream out;
      const RunResult live = run_scenario(o, &out);
      std::istringstream in(out.str());
      const RunResult again = replay_trace(parse_trace(in));
      INFO(app << " " << to_string(mode));
      CHECK(again.final_hash == live.final_hash);
      CHECK(again.summary.dump() == live.summary.dump());
      CHECK(again.violations == 0);
    }
  }
}

TEST_CASE("partner choice is recorded in the trace header") {
  RunOptions o;
  o.app = "popproto";
  o.sim.node_count = 4;
  o.sim.schedule.horizon = 50;
  CHECK(trace_of(o).get("partner") == std::string("lowest"));
  o.random_partner = true;
  CHECK(trace_of(o).get("partner") == std::string("random"));
}

TEST_CASE("percentiles use nearest rank") {
  const Percentiles p = percentiles({5, 1, 4, 2, 3, 6, 7, 8, 9, 10});
  CHECK(p.p50 == 5);
  CHECK(p.p90 == 9);
  CHECK(p.p99 == 10);
  CHECK(p.max == 10);
  CHECK(percentiles({}).max == 0);
}
