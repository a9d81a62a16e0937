#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lme/protocol.hpp"
#include "lme/random.hpp"
#include "lme/trace.hpp"
#include "lme/tvg.hpp"

namespace lme {

enum class Mode { SemiSync, Async };
enum class ActivationPolicy { All, RandomSubset, Scripted };
enum class DeliveryPolicy { Random, OldestFirst, Scripted };

const char* to_string(Mode m);
const char* to_string(ActivationPolicy p);
const char* to_string(DeliveryPolicy p);
Mode parse_mode(const std::string& s);
ActivationPolicy parse_activation(const std::string& s);
DeliveryPolicy parse_delivery(const std::string& s);

struct ScheduleConfig {
  Mode mode = Mode::SemiSync;
  ActivationPolicy activation = ActivationPolicy::All;
  double p_activate = 1.0;  ///< RandomSubset activation probability
  DeliveryPolicy delivery = DeliveryPolicy::Random;
  int fairness_bound = 16;      ///< F: age at which an item is force-scheduled
  int async_max_duration = 1;   ///< D_max: async execution spans are 1..D_max rounds
  std::uint64_t seed = 1;
  Round horizon = 1000;
};

/// Random edge churn applied every round after round 0. Each absent pair
/// connects with p_add (if both endpoints have an open port) and each present
/// edge drops with p_del.
struct DynamicsConfig {
  double p_add = 0.0;
  double p_del = 0.0;
  bool enabled() const { return p_add > 0.0 || p_del > 0.0; }
};

struct TopologyEvent {
  Round round = 0;
  bool connect = true;
  NodeId u = 0;
  NodeId v = 0;
};

struct SimulationConfig {
  int node_count = 2;
  int delta = 4;
  int k = 8;
  ScheduleConfig schedule;
  DynamicsConfig dynamics;
  std::vector<std::pair<NodeId, NodeId>> initial_edges;  ///< connected at round 0
  std::vector<TopologyEvent> scripted_events;
  bool late_applicant_loses = true;  ///< see ActionContext

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

TraceHeader make_header(const SimulationConfig& cfg);
/// Rebuilds a scripted-replay configuration from a trace header.
SimulationConfig config_from_header(const Trace& trace);

class HorizonExceeded : public std::runtime_error {
 public:
  explicit HorizonExceeded(Round r) : std::runtime_error("horizon exceeded at round " + std::to_string(r)) {}
};

class CyclicCausality : public std::runtime_error {
 public:
  CyclicCausality() : std::runtime_error("causal relation of the trace is cyclic") {}
};

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NodeRuntime {
  NodeState state;
  Rng rng;
  bool lock_called = false;
  std::optional<PortSet> lock_target;
  bool unlock_called = false;
  std::uint64_t exec_count = 0;
  std::optional<Round> busy_until;  ///< async: last round of the running span
};

class Simulation;

/// Read-only hooks for monitors. Called synchronously from the loop.
class Observer {
 public:
  virtual ~Observer() = default;
  virtual void on_connect(const Simulation&, const PortBinding&) {}
  virtual void on_disconnect(const Simulation&, const PortBinding&, std::size_t /*lost*/) {}
  virtual void on_api_call(const Simulation&, const ApiCallRecord&) {}
  /// `before` is the node state prior to the execution; the simulation
  /// already holds the new state.
  virtual void on_execution(const Simulation&, const ActivationRecord&, const NodeState& /*before*/) {}
  virtual void on_round_end(const Simulation&) {}
};

/// Application layer issuing Lock/Unlock calls. Not consulted during replay.
class Driver {
 public:
  virtual ~Driver() = default;
  virtual void on_round_start(Simulation&) {}
  virtual void on_execution(Simulation&, const ActivationRecord&) {}
};

/// Per-item aging used for weak fairness. An item is a guard action that is
/// enabled or pre-enabled, or a message in transit; its age is the number of
/// rounds it has been continuously pending.
class FairnessTracker {
 public:
  explicit FairnessTracker(int node_count) : since_(node_count) {}

  void observe(NodeId u, const Enablement& e, Round now);
  void executed(NodeId u, ActionId a);
  std::optional<Round> since(NodeId u, ActionId a) const { return since_[u][static_cast<int>(a)]; }
  void note_age(Round age) { if (age > max_wait_) max_wait_ = age; }
  Round max_wait() const { return max_wait_; }

 private:
  std::vector<std::array<std::optional<Round>, kActionCount>> since_;
  Round max_wait_ = 0;
};

/// A queued adversary choice for the SCRIPTED activation policy.
struct ScriptedActivation {
  NodeId node = 0;
  ActionId action = ActionId::CleanUpAction;
  std::optional<MessageId> message;  ///< Receive*: which message; oldest if unset
};

struct ReplayResult {
  std::uint64_t final_hash = 0;
  std::size_t executions = 0;
  std::size_t mismatches = 0;
  std::string first_mismatch;
  std::vector<ActivationRecord> activations;  ///< as recomputed by the replay
};

/// The world (topology + nodes) together with the adversary that drives it.
class Simulation {
 public:
  explicit Simulation(SimulationConfig cfg);

  const SimulationConfig& config() const { return cfg_; }
  const Topology& topology() const { return topo_; }
  Topology& mutable_topology() { return topo_; }
  const NodeRuntime& node(NodeId u) const { return nodes_.at(u); }
  int node_count() const { return cfg_.node_count; }
  /// The round the next step will execute.
  Round round() const { return round_; }
  const FairnessTracker& fairness() const { return fairness_; }
  /// Bound on any item's wait implied by forcing: F plus one round per item
  /// that can be overdue at a node ahead of it, plus the longest async span.
  Round fairness_limit() const;

  void set_driver(Driver* d) { driver_ = d; }
  void add_observer(Observer* o) { observers_.push_back(o); }
  /// Writes the header now and every subsequent event as it happens.
  void set_trace_sink(std::ostream* out, const TraceHeader& extra = {});
  /// Also keep every event in memory.
  void capture_events(bool on) { capture_ = on; }
  const std::vector<TraceEvent>& captured() const { return captured_; }

  // Application API. Calls are recorded as API_CALL events.
  void request_lock(NodeId u, std::optional<PortSet> target = std::nullopt);
  void request_unlock(NodeId u);

  /// SCRIPTED policy: queue an activation for the next step.
  void script(const ScriptedActivation& a) { scripted_.push_back(a); }

  /// One round in the configured mode.
  std::vector<TraceEvent> step();
  std::vector<TraceEvent> step_round();
  std::vector<TraceEvent> step_async();
  /// Steps until the horizon.
  void run();

  /// Replays a trace produced by a run with this configuration, checking
  /// every recorded execution outcome.
  ReplayResult replay(const Trace& trace);

  std::uint64_t state_hash() const;

 private:
  struct Option {
    ActionId action;
    std::optional<std::pair<Port, InTransit>> message;
  };

  std::vector<TraceEvent> step_impl(bool async);
  void begin_round();
  void end_round();
  void apply_topology_events();
  void emit(decltype(TraceEvent::payload) payload);
  void apply_connect(NodeId u, Port pu, NodeId v, Port pv, bool explicit_ports);
  std::size_t apply_disconnect(NodeId u, NodeId v);
  void apply_api_call(const ApiCallRecord& r);
  const ActivationRecord& apply_execution(NodeId u, ActionId a, const std::optional<std::pair<Port, MessageId>>& msg,
                                          Round duration);
  void update_fairness();
  std::optional<Option> choose(NodeId u, bool forced_only);
  bool busy(NodeId u) const;
  KindMask available_kinds(NodeId u) const;

  SimulationConfig cfg_;
  Topology topo_;
  std::vector<NodeRuntime> nodes_;
  Rng adversary_rng_;
  Rng topology_rng_;
  FairnessTracker fairness_;
  Round round_ = 0;
  std::uint64_t seq_ = 0;
  bool fairness_updated_ = false;
  Driver* driver_ = nullptr;
  std::vector<Observer*> observers_;
  std::ostream* sink_ = nullptr;
  std::string line_;
  bool capture_ = false;
  std::vector<TraceEvent> captured_;
  std::vector<TraceEvent>* round_events_ = nullptr;
  std::deque<ScriptedActivation> scripted_;
  std::vector<Enablement> enablement_;
  ActivationRecord last_activation_;
};

/// Causal-order reduction of an asynchronous trace to a semi-synchronous
/// one with the same executions: spans collapse to a single round, and
/// filler rounds separate executions of one node that would otherwise share a
/// round. Throws CyclicCausality if program and message order form a cycle.
Trace reduce_to_semisync(const Trace& async_trace);

struct ReductionReport {
  std::size_t executions = 0;
  std::size_t mismatches = 0;
  std::string first_mismatch;
  Trace reduced;
};

/// Reduces, replays the reduced trace semi-synchronously and compares every
/// execution's detector snapshot and Effects with the original.
ReductionReport check_reduction(const Trace& async_trace);

}  // namespace lme
