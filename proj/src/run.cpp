#include "lme/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

namespace lme {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
      throw ScenarioError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

std::string join_names(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += xs[i];
  }
  return out;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  return out;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

TraceHeader run_header(const RunOptions& opts) {
  TraceHeader h{{"app", opts.app}};
  if (opts.app == "popproto") {
    h.emplace_back("program", opts.program.empty() ? "rumor" : opts.program);
    if (!opts.init.empty()) h.emplace_back("init", join_names(opts.init));
    h.emplace_back("pair_only", opts.workload.lock_pair_only ? "1" : "0");
    h.emplace_back("partner", opts.random_partner ? "random" : "lowest");
  }
  h.emplace_back("dag", opts.check_dag ? "1" : "0");
  return h;
}

ordered_json header_object(const TraceHeader& h) {
  ordered_json o = ordered_json::object();
  for (const auto& [k, v] : h) o[k] = v;
  return o;
}

std::string bucket_label(Round x) {
  if (x <= 1) return std::to_string(x);
  Round lo = 1;
  while (lo * 2 <= x) lo *= 2;
  return std::to_string(lo) + "-" + std::to_string(2 * lo - 1);
}

}  // namespace

RunOptions::RunOptions() {
  sim.node_count = 8;
  sim.delta = 4;
  sim.dynamics = {0.05, 0.05};
}

void RunOptions::validate() const {
  sim.validate();
  if (app != "lockapi" && app != "popproto" && app != "none") throw ScenarioError("unknown app: " + app);
  if (!(workload.lock_rate >= 0.0 && workload.lock_rate <= 1.0)) throw ScenarioError("lock_rate must be in [0,1]");
  if (workload.hold_max < 1) throw ScenarioError("hold_max must be at least 1");
}

RunOptions parse_scenario(const json& j) {
  if (!j.is_object()) throw ScenarioError("scenario must be a JSON object");
  reject_unknown(j, {"nodes", "delta", "k", "edges", "events", "dynamics", "schedule", "workload", "app", "program",
                     "init", "check_dag", "partner"},
                 "scenario");
  RunOptions o;
  o.sim.node_count = get_or(j, "nodes", o.sim.node_count);
  o.sim.delta = get_or(j, "delta", o.sim.delta);
  o.sim.k = get_or(j, "k", o.sim.k);
  o.app = get_or<std::string>(j, "app", o.app);
  o.program = get_or<std::string>(j, "program", o.program);
  o.init = get_or(j, "init", o.init);
  o.check_dag = get_or(j, "check_dag", o.check_dag);
  const auto partner = get_or<std::string>(j, "partner", "lowest");
  if (partner != "lowest" && partner != "random") throw ScenarioError("partner must be lowest or random");
  o.random_partner = partner == "random";

  for (const auto& e : get_or(j, "edges", json::array())) {
    if (!e.is_array() || e.size() != 2) throw ScenarioError("edges must be [u, v] pairs");
    o.sim.initial_edges.emplace_back(e[0].get<NodeId>(), e[1].get<NodeId>());
  }
  for (const auto& e : get_or(j, "events", json::array())) {
    reject_unknown(e, {"round", "op", "u", "v"}, "event");
    TopologyEvent ev;
    ev.round = get_or<Round>(e, "round", 0);
    const auto op = get_or<std::string>(e, "op", "");
    if (op != "connect" && op != "disconnect") throw ScenarioError("event op must be connect or disconnect");
    ev.connect = op == "connect";
    if (!e.contains("u") || !e.contains("v")) throw ScenarioError("event needs u and v");
    ev.u = get_or<NodeId>(e, "u", 0);
    ev.v = get_or<NodeId>(e, "v", 0);
    o.sim.scripted_events.push_back(ev);
  }
  if (j.contains("dynamics")) {
    const auto& d = j.at("dynamics");
    reject_unknown(d, {"p_add", "p_del"}, "dynamics");
    o.sim.dynamics.p_add = get_or(d, "p_add", o.sim.dynamics.p_add);
    o.sim.dynamics.p_del = get_or(d, "p_del", o.sim.dynamics.p_del);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    reject_unknown(s, {"mode", "activation", "p_act", "delivery", "fairness", "dmax", "seed", "horizon"}, "schedule");
    auto& c = o.sim.schedule;
    try {
      if (s.contains("mode")) c.mode = parse_mode(s.at("mode").get<std::string>());
      if (s.contains("activation")) c.activation = parse_activation(s.at("activation").get<std::string>());
      if (s.contains("delivery")) c.delivery = parse_delivery(s.at("delivery").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ScenarioError(e.what());
    }
    c.p_activate = get_or(s, "p_act", c.p_activate);
    c.fairness_bound = get_or(s, "fairness", c.fairness_bound);
    c.async_max_duration = get_or(s, "dmax", c.async_max_duration);
    c.seed = get_or(s, "seed", c.seed);
    c.horizon = get_or(s, "horizon", c.horizon);
  }
  if (j.contains("workload")) {
    const auto& w = j.at("workload");
    reject_unknown(w, {"lock_rate", "hold_max", "drain", "pair_only"}, "workload");
    o.workload.lock_rate = get_or(w, "lock_rate", o.workload.lock_rate);
    o.workload.hold_max = get_or(w, "hold_max", o.workload.hold_max);
    if (w.contains("drain")) o.workload.drain = get_or<Round>(w, "drain", 0);
    o.workload.lock_pair_only = get_or(w, "pair_only", o.workload.lock_pair_only);
  }
  try {
    o.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }
  return o;
}

RunOptions load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError(path + ": " + e.what());
  }
  return parse_scenario(j);
}

AgentProgram load_program(const RunOptions& opts) {
  if (opts.program.empty() || opts.program == "rumor") return AgentProgram::rumor();
  return load_agent_program(opts.program);
}

std::vector<int> initial_states(const RunOptions& opts, const AgentProgram& program) {
  std::vector<int> out(opts.sim.node_count, 0);
  if (opts.init.empty()) {
    if (!out.empty()) out[0] = program.state_count() - 1;
    return out;
  }
  for (std::size_t i = 0; i < opts.init.size() && i < out.size(); ++i) out[i] = program.index(opts.init[i]);
  return out;
}

Percentiles percentiles(std::vector<Round> xs) {
  Percentiles p;
  if (xs.empty()) return p;
  std::sort(xs.begin(), xs.end());
  auto rank = [&](double q) {
    const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
    return xs[std::clamp<std::size_t>(r, 1, xs.size()) - 1];
  };
  p.p50 = rank(0.50);
  p.p90 = rank(0.90);
  p.p99 = rank(0.99);
  p.max = xs.back();
  return p;
}

nlohmann::ordered_json summarize(const Simulation& sim, const Monitor& monitor, const TraceHeader& header,
                                 const PopulationApp* pop, std::uint64_t& violations) {
  ordered_json s;
  s["seed"] = sim.config().schedule.seed;
  s["config"] = header_object(header);
  s["rounds"] = sim.round();

  std::vector<Round> latency;
  std::map<std::uint32_t, std::uint64_t> trials;
  for (const LockRequestRecord& r : monitor.requests()) {
    if (!r.success_round) continue;
    const Round l = *r.success_round - r.issue_round;
    latency.push_back(l);
    ++trials[r.trials];
  }
  const auto& c = monitor.counts();
  s["requests"] = {{"lock_calls", monitor.lock_calls()},
                   {"issued", monitor.requests().size()},
                   {"succeeded", latency.size()},
                   {"failed", c.fail},
                   {"slow", c.slow}};
  const Percentiles p = percentiles(latency);
  ordered_json h = ordered_json::object();
  {
    std::vector<Round> sorted = latency;
    std::sort(sorted.begin(), sorted.end());
    for (Round l : sorted) {
      const std::string key = bucket_label(l);
      if (!h.contains(key)) h[key] = 0;
      h[key] = h[key].get<std::uint64_t>() + 1;
    }
  }
  s["latency"] = {{"p50", p.p50}, {"p90", p.p90}, {"p99", p.p99}, {"max", p.max}, {"histogram", h}};
  ordered_json th = ordered_json::object();
  for (const auto& [t, n] : trials) th[std::to_string(t)] = n;
  s["trials_per_request"] = th;

  const std::uint64_t matching = pop ? pop->matching_violations() : 0;
  const std::uint64_t isolation = pop ? pop->isolation_violations() : 0;
  violations = c.total() + matching + isolation;
  s["violations"] = {{"mutex", c.mutex},
                     {"channel", c.channel},
                     {"dag", c.dag_cycles},
                     {"success", c.success_anomalies},
                     {"fail", c.fail},
                     {"fairness", c.fairness},
                     {"state", c.state_legality},
                     {"matching", matching},
                     {"isolation", isolation},
                     {"total", violations}};
  ordered_json details = ordered_json::array();
  for (const Violation& v : monitor.details()) details.push_back({{"round", v.round}, {"kind", v.kind}, {"detail", v.detail}});
  if (pop) {
    for (const Violation& v : pop->details()) details.push_back({{"round", v.round}, {"kind", v.kind}, {"detail", v.detail}});
  }
  if (!details.empty()) s["violation_details"] = details;

  const auto& m = sim.topology().counters();
  s["messages"] = {{"sent", m.sent},
                   {"delivered", m.delivered},
                   {"dropped", m.dropped_unbound},
                   {"lost", m.lost_on_disconnect}};
  s["fairness"] = {{"max_wait", monitor.max_fairness_wait()}, {"limit", sim.fairness_limit()}};
  s["horizon_exceeded"] = c.fail > 0;
  if (pop) {
    std::map<int, std::uint64_t> by_state;
    for (int a : pop->agent_states()) ++by_state[a];
    ordered_json st = ordered_json::object();
    for (const auto& [k, n] : by_state) st[std::to_string(k)] = n;
    s["population"] = {{"interactions", pop->interactions().size()}, {"final_states", st}};
  }
  s["final_state_hash"] = hex64(sim.state_hash());
  return s;
}

RunResult run_scenario(const RunOptions& opts, std::ostream* trace_out) {
  opts.validate();
  Simulation sim(opts.sim);
  Monitor monitor(Monitor::Options{opts.check_dag, 20});
  sim.add_observer(&monitor);
  const TraceHeader header = [&] {
    TraceHeader h = make_header(opts.sim);
    const TraceHeader extra = run_header(opts);
    h.insert(h.end(), extra.begin(), extra.end());
    return h;
  }();
  if (trace_out) sim.set_trace_sink(trace_out, run_header(opts));

  std::unique_ptr<LockWorkload> workload;
  std::unique_ptr<PopulationApp> pop;
  if (opts.app == "lockapi") {
    workload = std::make_unique<LockWorkload>(opts.workload, opts.sim.schedule.seed);
    sim.set_driver(workload.get());
  } else if (opts.app == "popproto") {
    PopulationConfig pc;
    pc.program = load_program(opts);
    pc.initial_states = initial_states(opts, pc.program);
    pc.lock_pair_only = opts.workload.lock_pair_only;
    pc.drain = opts.workload.drain;
    pc.random_partner = opts.random_partner;
    pc.seed = opts.sim.schedule.seed;
    pop = std::make_unique<PopulationApp>(pc, opts.sim.node_count);
    sim.set_driver(pop.get());
    sim.add_observer(pop.get());
  }
  sim.run();
  monitor.finalize(sim);

  RunResult r;
  r.summary = summarize(sim, monitor, header, pop.get(), r.violations);
  r.final_hash = sim.state_hash();
  return r;
}

RunResult replay_trace(const Trace& trace) {
  if (trace.header.empty() && trace.events.empty()) {
    // Nothing recorded: all counters zero.
    SimulationConfig cfg;
    cfg.node_count = 1;
    Simulation sim(cfg);
    Monitor monitor;
    RunResult r;
    r.summary = summarize(sim, monitor, {}, nullptr, r.violations);
    r.final_hash = sim.state_hash();
    return r;
  }
  const SimulationConfig cfg = config_from_header(trace);
  Simulation sim(cfg);
  const bool dag = trace.get("dag").value_or("1") != "0";
  Monitor monitor(Monitor::Options{dag, 20});
  sim.add_observer(&monitor);

  std::unique_ptr<PopulationApp> pop;
  if (trace.get("app").value_or("none") == "popproto") {
    RunOptions opts;
    opts.sim = cfg;
    opts.program = trace.get("program").value_or("rumor");
    if (auto init = trace.get("init")) opts.init = split_names(*init);
    PopulationConfig pc;
    pc.program = load_program(opts);
    pc.initial_states = initial_states(opts, pc.program);
    pc.random_partner = trace.get("partner").value_or("lowest") == "random";
    pc.seed = cfg.schedule.seed;
    pop = std::make_unique<PopulationApp>(pc, cfg.node_count);
    sim.add_observer(pop.get());
  }
  const ReplayResult res = sim.replay(trace);
  if (res.mismatches != 0) throw ReplayError("trace does not replay: " + res.first_mismatch);
  monitor.finalize(sim);

  RunResult r;
  r.summary = summarize(sim, monitor, trace.header, pop.get(), r.violations);
  r.final_hash = res.final_hash;
  return r;
}

}  // namespace lme
