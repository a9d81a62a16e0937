#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lme/scheduler.hpp"

namespace lme {

struct Violation {
  Round round = 0;
  std::string kind;
  std::string detail;
};

/// Node named by v's lock variable, if the lock is in effect. A lock through
/// a port whose disconnection v has not yet processed no longer binds anyone.
std::optional<NodeId> lock_holder(const Simulation& sim, NodeId v);

/// 𝓛(u) for every node, members in ascending order.
std::vector<std::vector<NodeId>> compute_lock_sets(const Simulation& sim);

/// The nodes a LOCKED node believes it holds: itself plus the peers of its L
/// set, ignoring ports with unprocessed disconnections. Empty for nodes that
/// are not LOCKED.
std::vector<NodeId> held_set(const Simulation& sim, NodeId u);

/// Pairwise disjointness of arbitrary sets (indexed by owner).
std::optional<Violation> check_mutual_exclusion(const std::vector<std::vector<NodeId>>& sets, Round round);

/// Lock sets are disjoint, held sets of LOCKED nodes are disjoint, and every
/// held node really names its holder.
std::vector<Violation> check_mutual_exclusion(const Simulation& sim);

std::optional<Violation> check_channel_bound(const Topology& topo, Round round, std::size_t bound = 2);

/// Bipartite dependency graph between competing initiators and their
/// participants. Vertex 2u is u's initiator copy, 2u+1 its participant copy.
struct DependencyGraph {
  std::vector<NodeId> initiators;
  std::vector<NodeId> participants;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
};

DependencyGraph build_dependency_graph(const Simulation& sim);
/// A cycle as a vertex list, or nullopt if the graph is acyclic.
std::optional<std::vector<std::uint32_t>> find_cycle(const DependencyGraph& g, int node_count);
std::optional<Violation> check_dependency_dag(const Simulation& sim);

struct LockRequestRecord {
  NodeId node = 0;
  Round issue_round = 0;
  std::vector<NodeId> neighbors_at_issue;
  std::optional<Round> success_round;
  std::optional<Round> done_round;  ///< CheckDone execution
  std::uint32_t trials = 0;
  bool slow = false;
};

/// The nodes a request must lock if it succeeds at round j: u itself and
/// every neighbor at issue that stayed connected throughout [issue, j].
std::vector<NodeId> persistent_set(const Topology& topo, const LockRequestRecord& r, Round j);

struct TrialResult {
  NodeId node = 0;
  Round start = 0;
  Round end = 0;
  bool open = true;
  bool won = false;
};

/// CheckPriorities executions that arbitrated exactly two remote candidates
/// while unlocked: whether the lower-labelled one won.
struct PairContest {
  NodeId node = 0;
  Round round = 0;
  bool low_won = false;
};

/// (1 - 1/K)^(2Δ²) / (2Δ²).
double open_trial_bound(int delta, int k);

/// One-sided Wilson score lower bound.
double wilson_lower(std::uint64_t successes, std::uint64_t n, double z);
inline constexpr double kZ99OneSided = 2.3263478740408408;

class InsufficientSamples : public std::runtime_error {
 public:
  InsufficientSamples(std::size_t have, std::size_t need)
      : std::runtime_error("have " + std::to_string(have) + " open trials, need " + std::to_string(need)) {}
};

struct WinRate {
  std::size_t samples = 0;
  std::size_t wins = 0;
  double empirical = 0.0;
  double bound = 0.0;
  double wilson_lower = 0.0;
};

/// Win fraction over the open trials in `results`.
WinRate measure_open_trial_win_rate(const std::vector<TrialResult>& results, int delta, int k,
                                    std::size_t min_samples = 1);

struct CheckCounts {
  std::uint64_t mutex = 0;
  std::uint64_t channel = 0;
  std::uint64_t dag_cycles = 0;
  std::uint64_t success_anomalies = 0;
  std::uint64_t fail = 0;
  std::uint64_t slow = 0;
  std::uint64_t fairness = 0;
  std::uint64_t state_legality = 0;

  /// Hard violations; SLOW is a warning and not counted.
  std::uint64_t total() const {
    return mutex + channel + dag_cycles + success_anomalies + fail + fairness + state_legality;
  }
};

/// All runtime monitors behind one observer.
class Monitor : public Observer {
 public:
  struct Options {
    bool check_dag = true;
    std::size_t max_details = 20;
  };

  Monitor() = default;
  explicit Monitor(Options opts) : opts_(opts) {}

  void on_api_call(const Simulation&, const ApiCallRecord& r) override;
  void on_execution(const Simulation& sim, const ActivationRecord& r, const NodeState& before) override;
  void on_round_end(const Simulation& sim) override;

  /// Marks requests still open as FAIL. Call once after the last round.
  void finalize(const Simulation& sim);

  const CheckCounts& counts() const { return counts_; }
  const std::vector<Violation>& details() const { return details_; }
  const std::vector<LockRequestRecord>& requests() const { return requests_; }
  const std::vector<TrialResult>& trials() const { return trials_; }
  const std::vector<PairContest>& pair_contests() const { return pairs_; }
  std::uint64_t lock_calls() const { return lock_calls_; }
  std::uint64_t unlock_calls() const { return unlock_calls_; }
  Round max_fairness_wait() const { return max_wait_; }

 private:
  struct OpenTrial {
    Round start = 0;
    std::vector<NodeId> targets;
    bool open = true;
  };

  void report(const Violation& v, std::uint64_t& counter);

  Options opts_;
  CheckCounts counts_;
  std::vector<Violation> details_;
  std::vector<LockRequestRecord> requests_;
  std::vector<std::optional<std::size_t>> active_request_;
  std::vector<std::optional<OpenTrial>> active_trial_;
  std::vector<TrialResult> trials_;
  std::vector<PairContest> pairs_;
  std::vector<std::size_t> done_this_round_;
  std::uint64_t lock_calls_ = 0;
  std::uint64_t unlock_calls_ = 0;
  Round max_wait_ = 0;
  bool fairness_reported_ = false;
};

}  // namespace lme
