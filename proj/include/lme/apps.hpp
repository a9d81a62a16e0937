#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lme/checker.hpp"
#include "lme/scheduler.hpp"

namespace lme {

/// Pairwise transition table over named agent states. Pairs without a rule
/// leave both agents unchanged.
class AgentProgram {
 public:
  AgentProgram() = default;
  explicit AgentProgram(std::vector<std::string> states);

  int state_count() const { return static_cast<int>(states_.size()); }
  const std::vector<std::string>& states() const { return states_; }
  /// Throws std::invalid_argument for unknown names.
  int index(const std::string& name) const;
  void add_rule(int a, int b, int a2, int b2);
  /// (initiator, responder) -> (initiator', responder').
  std::pair<int, int> apply(int a, int b) const;

  /// Two states S, I; any interaction touching I informs both parties.
  static AgentProgram rumor();

 private:
  std::vector<std::string> states_;
  std::map<std::pair<int, int>, std::pair<int, int>> rules_;
};

class ProgramParseError : public std::runtime_error {
 public:
  ProgramParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Transition table format:
//
//   # comment
//   states S I
//   I S -> I I
//   S I -> I I
//
// The first non-comment line lists the states; each later line is one rule
// "<initiator> <responder> -> <initiator'> <responder'>".
AgentProgram parse_agent_program(std::istream& in);
AgentProgram load_agent_program(const std::string& path);

/// Keeps nodes busy with Lock/Unlock: an idle node requests Lock with
/// probability lock_rate per round, a LOCKED node unlocks after holding for
/// 1..hold_max rounds. No new Lock is issued in the last `drain` rounds.
struct WorkloadConfig {
  double lock_rate = 1.0;
  int hold_max = 3;
  std::optional<Round> drain;  ///< default: horizon / 5
  bool lock_pair_only = false;

  Round cutoff(Round horizon) const;
};

class LockWorkload : public Driver {
 public:
  LockWorkload(WorkloadConfig cfg, std::uint64_t seed);
  void on_round_start(Simulation& sim) override;
  void on_execution(Simulation& sim, const ActivationRecord& r) override;

 private:
  WorkloadConfig cfg_;
  Rng rng_;
  std::vector<Round> unlock_at_;
};

struct InteractionRecord {
  Round start = 0;
  std::optional<Round> end;  ///< round of the initiator's Unlock
  NodeId initiator = 0;
  NodeId responder = 0;
  std::pair<int, int> before;
  std::pair<int, int> after;
  EdgeId edge = 0;
};

struct PopulationConfig {
  AgentProgram program = AgentProgram::rumor();
  std::vector<int> initial_states;  ///< one per node; missing entries are state 0
  bool lock_pair_only = false;
  std::optional<Round> drain;  ///< default: horizon / 5
  /// Pick the interaction partner uniformly among locked neighbors instead
  /// of the lowest label.
  bool random_partner = false;
  std::uint64_t seed = 1;
};

/// Agents that repeatedly Lock, interact with one locked neighbor, and
/// Unlock. The interaction itself is applied when the observer sees
/// CheckDone, so a trace replay reproduces it; the Driver half only issues
/// API calls.
class PopulationApp : public Driver, public Observer {
 public:
  PopulationApp(PopulationConfig cfg, int node_count);

  // Driver
  void on_round_start(Simulation& sim) override;
  void on_execution(Simulation& sim, const ActivationRecord& r) override;
  // Observer
  void on_execution(const Simulation& sim, const ActivationRecord& r, const NodeState& before) override;
  void on_round_end(const Simulation& sim) override;

  const std::vector<InteractionRecord>& interactions() const { return interactions_; }
  const std::vector<int>& agent_states() const { return agents_; }
  std::uint64_t matching_violations() const { return matching_violations_; }
  std::uint64_t isolation_violations() const { return isolation_violations_; }
  const std::vector<Violation>& details() const { return details_; }
  /// True iff every agent is in `state`.
  bool all_in(int state) const;

 private:
  PopulationConfig cfg_;
  std::vector<int> agents_;
  std::vector<InteractionRecord> interactions_;
  std::vector<std::optional<std::size_t>> active_;  ///< by initiator
  std::uint64_t matching_violations_ = 0;
  std::uint64_t isolation_violations_ = 0;
  std::vector<Violation> details_;
  Rng partner_rng_;
};

struct PopulationResult {
  std::vector<InteractionRecord> interactions;
  std::vector<int> final_states;
  std::uint64_t matching_violations = 0;
  std::uint64_t isolation_violations = 0;
};

/// Runs the population protocol to the simulation's horizon.
PopulationResult run_population(Simulation& sim, const PopulationConfig& cfg);

class Busy : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Lock/Unlock as calls that block in simulation time. Installs itself as the
/// simulation's driver.
class LockClient : public Driver {
 public:
  enum class Status { Idle, Locking, Locked, Unlocking };

  explicit LockClient(Simulation& sim);

  void begin_lock(NodeId u, std::optional<PortSet> target = std::nullopt);
  void begin_unlock(NodeId u);
  Status status(NodeId u) const { return status_.at(u); }
  /// Nodes locked by the last successful lock of u, ascending.
  const std::vector<NodeId>& locked_set(NodeId u) const { return locked_.at(u); }

  /// Steps the simulation until u's Lock completes. Throws HorizonExceeded.
  std::vector<NodeId> lock(NodeId u, std::optional<PortSet> target = std::nullopt);
  void unlock(NodeId u);
  /// Steps until `done` holds.
  template <typename Pred>
  void run_until(Pred done) {
    while (!done()) sim_.step();
  }

  void on_execution(Simulation& sim, const ActivationRecord& r) override;

 private:
  Simulation& sim_;
  std::vector<Status> status_;
  std::vector<std::vector<NodeId>> locked_;
};

}  // namespace lme
