#include "lme/checker.hpp"

#include <algorithm>
#include <cmath>

namespace lme {

namespace {

std::string join(const std::vector<std::uint32_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

/// Ports of u's L set whose edges are still the ones u last saw.
PortSet live_ports(const Simulation& sim, NodeId u) {
  return sim.node(u).state.L - sim.topology().pending_detections(u);
}

}  // namespace

std::optional<NodeId> lock_holder(const Simulation& sim, NodeId v) {
  const auto& lock = sim.node(v).state.lock;
  if (!lock) return std::nullopt;
  if (*lock == kSelfPort) return v;
  if (sim.topology().pending_detections(v).contains(*lock)) return std::nullopt;
  return sim.topology().peer(v, *lock);
}

std::vector<std::vector<NodeId>> compute_lock_sets(const Simulation& sim) {
  std::vector<std::vector<NodeId>> sets(sim.node_count());
  for (NodeId v = 0; v < static_cast<NodeId>(sim.node_count()); ++v) {
    if (auto h = lock_holder(sim, v)) sets[*h].push_back(v);
  }
  return sets;
}

std::vector<NodeId> held_set(const Simulation& sim, NodeId u) {
  std::vector<NodeId> out;
  if (sim.node(u).state.state != LockState::Locked) return out;
  live_ports(sim, u).for_each([&](Port p) {
    if (auto v = sim.topology().peer(u, p)) out.push_back(*v);
  });
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<Violation> check_mutual_exclusion(const std::vector<std::vector<NodeId>>& sets, Round round) {
  std::vector<std::optional<std::size_t>> owner;
  for (std::size_t a = 0; a < sets.size(); ++a) {
    for (NodeId v : sets[a]) {
      if (v >= owner.size()) owner.resize(v + 1);
      if (owner[v] && *owner[v] != a) {
        return Violation{round, "mutex",
                         "node " + std::to_string(v) + " locked by both " + std::to_string(*owner[v]) + " and " +
                             std::to_string(a)};
      }
      owner[v] = a;
    }
  }
  return std::nullopt;
}

std::vector<Violation> check_mutual_exclusion(const Simulation& sim) {
  std::vector<Violation> out;
  const Round r = sim.round();
  if (auto v = check_mutual_exclusion(compute_lock_sets(sim), r)) out.push_back(*v);

  std::vector<std::vector<NodeId>> held(sim.node_count());
  for (NodeId u = 0; u < static_cast<NodeId>(sim.node_count()); ++u) {
    held[u] = held_set(sim, u);
    for (NodeId v : held[u]) {
      if (lock_holder(sim, v) != u) {
        out.push_back({r, "mutex",
                       "node " + std::to_string(u) + " is LOCKED but " + std::to_string(v) + " does not name it"});
      }
    }
  }
  if (auto v = check_mutual_exclusion(held, r)) out.push_back(*v);
  return out;
}

std::optional<Violation> check_channel_bound(const Topology& topo, Round round, std::size_t bound) {
  for (const auto& [id, ch] : topo.channels()) {
    if (ch.occupancy() > bound) {
      return Violation{round, "channel",
                       "edge {" + std::to_string(ch.edge.node_a) + "," + std::to_string(ch.edge.node_b) + "} holds " +
                           std::to_string(ch.occupancy()) + " messages"};
    }
  }
  return std::nullopt;
}

DependencyGraph build_dependency_graph(const Simulation& sim) {
  DependencyGraph g;
  const Topology& topo = sim.topology();
  std::vector<bool> is_participant(sim.node_count(), false);

  for (NodeId u = 0; u < static_cast<NodeId>(sim.node_count()); ++u) {
    const NodeState& su = sim.node(u).state;
    if (su.state != LockState::Compete) continue;
    g.initiators.push_back(u);
    live_ports(sim, u).for_each([&](Port lu) {
      NodeId v = u;
      Port lv = kSelfPort;
      if (lu != kSelfPort) {
        const PortBinding* b = topo.binding(u, lu);
        if (b == nullptr) return;
        v = b->node_a == u ? b->node_b : b->node_a;
        lv = b->node_a == u ? b->port_b : b->port_a;
      }
      is_participant[v] = true;
      const std::uint32_t ui = 2 * u;
      const std::uint32_t vp = 2 * v + 1;
      // u holds a win from v it has not answered yet.
      if (su.W.contains(lu)) g.edges.emplace_back(ui, vp);
      // v holds a request from u it has not answered yet.
      if (sim.node(v).state.P.contains(lv)) g.edges.emplace_back(vp, ui);
    });
  }
  for (NodeId v = 0; v < static_cast<NodeId>(sim.node_count()); ++v) {
    if (is_participant[v]) g.participants.push_back(v);
  }
  return g;
}

std::optional<std::vector<std::uint32_t>> find_cycle(const DependencyGraph& g, int node_count) {
  const std::size_t n = 2 * static_cast<std::size_t>(node_count);
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const auto& [a, b] : g.edges) adj.at(a).push_back(b);
  std::vector<int> color(n, 0);
  std::vector<std::uint32_t> parent(n, 0);
  for (std::uint32_t s = 0; s < n; ++s) {
    if (color[s] != 0) continue;
    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{s, 0}};
    color[s] = 1;
    while (!stack.empty()) {
      auto& [x, i] = stack.back();
      if (i == adj[x].size()) {
        color[x] = 2;
        stack.pop_back();
        continue;
      }
      const std::uint32_t y = adj[x][i++];
      if (color[y] == 1) {
        std::vector<std::uint32_t> cycle{y};
        for (std::uint32_t z = x; z != y; z = parent[z]) cycle.push_back(z);
        std::reverse(cycle.begin() + 1, cycle.end());
        return cycle;
      }
      if (color[y] == 0) {
        color[y] = 1;
        parent[y] = x;
        stack.emplace_back(y, 0);
      }
    }
  }
  return std::nullopt;
}

std::optional<Violation> check_dependency_dag(const Simulation& sim) {
  const auto cycle = find_cycle(build_dependency_graph(sim), sim.node_count());
  if (!cycle) return std::nullopt;
  return Violation{sim.round(), "dag", "cycle through vertices " + join(*cycle)};
}

std::vector<NodeId> persistent_set(const Topology& topo, const LockRequestRecord& r, Round j) {
  std::vector<NodeId> out{r.node};
  for (NodeId v : r.neighbors_at_issue) {
    if (topo.present_throughout(r.node, v, r.issue_round, j)) out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double open_trial_bound(int delta, int k) {
  const double d2 = 2.0 * delta * delta;
  return std::pow(1.0 - 1.0 / k, d2) / d2;
}

double wilson_lower(std::uint64_t successes, std::uint64_t n, double z) {
  if (n == 0) return 0.0;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double centre = p + z2 / (2 * nn);
  const double spread = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return (centre - spread) / (1 + z2 / nn);
}

WinRate measure_open_trial_win_rate(const std::vector<TrialResult>& results, int delta, int k,
                                    std::size_t min_samples) {
  WinRate w;
  for (const TrialResult& t : results) {
    if (!t.open) continue;
    ++w.samples;
    if (t.won) ++w.wins;
  }
  if (w.samples < std::max<std::size_t>(min_samples, 1)) throw InsufficientSamples(w.samples, min_samples);
  w.empirical = static_cast<double>(w.wins) / static_cast<double>(w.samples);
  w.bound = open_trial_bound(delta, k);
  w.wilson_lower = wilson_lower(w.wins, w.samples, kZ99OneSided);
  return w;
}

void Monitor::report(const Violation& v, std::uint64_t& counter) {
  ++counter;
  if (details_.size() < opts_.max_details) details_.push_back(v);
}

void Monitor::on_api_call(const Simulation&, const ApiCallRecord& r) {
  if (r.call == ApiCall::Lock) {
    ++lock_calls_;
  } else {
    ++unlock_calls_;
  }
}

void Monitor::on_execution(const Simulation& sim, const ActivationRecord& r, const NodeState& before) {
  const auto n = static_cast<std::size_t>(sim.node_count());
  if (active_request_.size() != n) {
    active_request_.resize(n);
    active_trial_.resize(n);
  }
  const NodeId u = r.node;
  const NodeState& after = sim.node(u).state;

  if (!legal_state_transition(before.state, after.state)) {
    report({r.start, "state", std::string("node ") + std::to_string(u) + " moved " + to_string(before.state) +
                                  " -> " + to_string(after.state)},
           counts_.state_legality);
  }

  auto peers_of = [&](PortSet ports) {
    std::vector<NodeId> out;
    ports.for_each([&](Port p) {
      if (p == kSelfPort) return;
      if (auto v = sim.topology().peer(u, p)) out.push_back(*v);
    });
    std::sort(out.begin(), out.end());
    return out;
  };

  switch (r.action) {
    case ActionId::InitLock:
      if (r.effects.api_result != ApiResult::RequestRejected) {
        LockRequestRecord rec;
        rec.node = u;
        rec.issue_round = r.start;
        rec.neighbors_at_issue = peers_of(after.L);
        active_request_[u] = requests_.size();
        requests_.push_back(std::move(rec));
      }
      break;
    case ActionId::CheckDone:
      if (active_request_[u]) {
        LockRequestRecord& rec = requests_[*active_request_[u]];
        rec.done_round = r.start;
        const auto required = persistent_set(sim.topology(), rec, r.start);
        std::vector<NodeId> locked = peers_of(r.effects.locked);
        locked.push_back(u);
        std::sort(locked.begin(), locked.end());
        if (locked != required) {
          report({r.start, "success", "node " + std::to_string(u) + " locked {" + join(locked) + "} but needed {" +
                                          join(required) + "}"},
                 counts_.success_anomalies);
        }
        done_this_round_.push_back(u);
      }
      break;
    case ActionId::CheckPriorities: {
      const auto& sends = r.effects.sends;
      if (!before.lock && sends.size() == 2 && sends[0].first != kSelfPort && sends[1].first != kSelfPort) {
        const auto& low = sends[0].first < sends[1].first ? sends[0] : sends[1];
        pairs_.push_back({u, r.start, low.second.outcome});
      }
      break;
    }
    default:
      break;
  }

  if (r.action == ActionId::CheckWin && active_trial_[u]) {
    const OpenTrial& t = *active_trial_[u];
    trials_.push_back({u, t.start, r.start, t.open, after.state == LockState::Win});
    active_trial_[u].reset();
  }
  const bool starts_trial = (r.action == ActionId::CheckStart && after.state == LockState::Compete) ||
                            (r.action == ActionId::CheckWin && after.state == LockState::Compete);
  if (starts_trial) {
    OpenTrial t;
    t.start = r.start;
    t.targets = peers_of(after.L);
    t.targets.push_back(u);
    active_trial_[u] = std::move(t);
    if (active_request_[u]) ++requests_[*active_request_[u]].trials;
  }
}

void Monitor::on_round_end(const Simulation& sim) {
  const Round r = sim.round();
  const auto n = static_cast<std::size_t>(sim.node_count());
  if (active_request_.size() != n) {
    active_request_.resize(n);
    active_trial_.resize(n);
  }

  for (const Violation& v : check_mutual_exclusion(sim)) report(v, counts_.mutex);
  if (auto v = check_channel_bound(sim.topology(), r)) report(*v, counts_.channel);
  if (opts_.check_dag) {
    if (auto v = check_dependency_dag(sim)) report(*v, counts_.dag_cycles);
  }

  const auto sets = compute_lock_sets(sim);
  const auto& cfg = sim.config();
  const Round slow_after =
      10 * static_cast<Round>(cfg.schedule.fairness_bound) * (static_cast<Round>(cfg.delta) * cfg.delta + 1);
  for (NodeId u = 0; u < n; ++u) {
    if (!active_request_[u]) continue;
    LockRequestRecord& rec = requests_[*active_request_[u]];
    if (!rec.success_round && r > rec.issue_round && sets[u] == persistent_set(sim.topology(), rec, r)) {
      rec.success_round = r;
    }
    if (!rec.success_round && !rec.slow && r - rec.issue_round > slow_after) {
      rec.slow = true;
      ++counts_.slow;
    }
  }
  for (NodeId u : done_this_round_) {
    LockRequestRecord& rec = requests_[*active_request_[u]];
    if (!rec.success_round) {
      report({r, "success", "node " + std::to_string(u) + " completed Lock without reaching its required lock set"},
             counts_.success_anomalies);
    }
    active_request_[u].reset();
  }
  done_this_round_.clear();

  for (NodeId u = 0; u < n; ++u) {
    auto& t = active_trial_[u];
    if (!t || !t->open) continue;
    for (NodeId v : t->targets) {
      if (lock_holder(sim, v)) {
        t->open = false;
        break;
      }
    }
  }

  max_wait_ = sim.fairness().max_wait();
  if (!fairness_reported_ && max_wait_ > sim.fairness_limit()) {
    fairness_reported_ = true;
    report({r, "fairness", "an item waited " + std::to_string(max_wait_) + " rounds"}, counts_.fairness);
  }
}

void Monitor::finalize(const Simulation& sim) {
  for (auto& a : active_request_) {
    if (!a) continue;
    const LockRequestRecord& rec = requests_[*a];
    if (rec.success_round) continue;
    report({sim.round(), "fail",
            "request of node " + std::to_string(rec.node) + " issued at " + std::to_string(rec.issue_round) +
                " never succeeded"},
           counts_.fail);
    a.reset();
  }
}

}  // namespace lme
