#include "lme/apps.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace lme {

namespace {

constexpr std::uint64_t kWorkloadStream = 0x3A;
constexpr std::uint64_t kPartnerStream = 0x3B;

std::optional<std::pair<Port, NodeId>> lowest_neighbor(const Topology& topo, NodeId u, PortSet ports) {
  std::optional<std::pair<Port, NodeId>> out;
  ports.for_each([&](Port p) {
    if (out || p == kSelfPort) return;
    if (auto v = topo.peer(u, p)) out = std::pair{p, *v};
  });
  return out;
}

}  // namespace

AgentProgram::AgentProgram(std::vector<std::string> states) : states_(std::move(states)) {
  if (states_.empty()) throw std::invalid_argument("agent program needs at least one state");
  for (std::size_t i = 0; i < states_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (states_[i] == states_[j]) throw std::invalid_argument("duplicate state " + states_[i]);
    }
  }
}

int AgentProgram::index(const std::string& name) const {
  for (std::size_t i = 0; i < states_.size(); ++i) {
    if (states_[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown agent state " + name);
}

void AgentProgram::add_rule(int a, int b, int a2, int b2) {
  for (int x : {a, b, a2, b2}) {
    if (x < 0 || x >= state_count()) throw std::invalid_argument("agent state out of range");
  }
  rules_[{a, b}] = {a2, b2};
}

std::pair<int, int> AgentProgram::apply(int a, int b) const {
  auto it = rules_.find({a, b});
  return it == rules_.end() ? std::pair{a, b} : it->second;
}

AgentProgram AgentProgram::rumor() {
  AgentProgram p({"S", "I"});
  p.add_rule(1, 0, 1, 1);
  p.add_rule(0, 1, 1, 1);
  return p;
}

AgentProgram parse_agent_program(std::istream& in) {
  std::optional<AgentProgram> prog;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    try {
      if (!prog) {
        if (tok[0] != "states" || tok.size() < 2) throw ProgramParseError(no, "expected 'states <name>...'");
        prog.emplace(std::vector<std::string>(tok.begin() + 1, tok.end()));
        continue;
      }
      if (tok.size() != 5 || tok[2] != "->") throw ProgramParseError(no, "expected '<a> <b> -> <a'> <b'>'");
      prog->add_rule(prog->index(tok[0]), prog->index(tok[1]), prog->index(tok[3]), prog->index(tok[4]));
    } catch (const ProgramParseError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ProgramParseError(no, e.what());
    }
  }
  if (!prog) throw ProgramParseError(no, "no states line");
  return *prog;
}

AgentProgram load_agent_program(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_agent_program(in);
}

Round WorkloadConfig::cutoff(Round horizon) const {
  const Round d = drain ? *drain : horizon / 5;
  return horizon > d ? horizon - d : 0;
}

LockWorkload::LockWorkload(WorkloadConfig cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(derive_seed(seed, kWorkloadStream)) {
  if (cfg_.hold_max < 1) throw std::invalid_argument("hold_max must be at least 1");
}

void LockWorkload::on_round_start(Simulation& sim) {
  const auto n = static_cast<NodeId>(sim.node_count());
  if (unlock_at_.size() != n) unlock_at_.assign(n, 0);
  const bool issuing = sim.round() < cfg_.cutoff(sim.config().schedule.horizon);
  for (NodeId u = 0; u < n; ++u) {
    const NodeRuntime& node = sim.node(u);
    if (node.lock_called || node.unlock_called) continue;
    if (node.state.state == LockState::None && issuing && bernoulli(rng_, cfg_.lock_rate)) {
      std::optional<PortSet> target;
      if (cfg_.lock_pair_only) {
        PortSet t;
        t.insert(kSelfPort);
        if (auto nb = lowest_neighbor(sim.topology(), u, sim.topology().bound_ports(u))) t.insert(nb->first);
        target = t;
      }
      sim.request_lock(u, target);
    } else if (node.state.state == LockState::Locked && sim.round() >= unlock_at_[u]) {
      sim.request_unlock(u);
    }
  }
}

void LockWorkload::on_execution(Simulation& sim, const ActivationRecord& r) {
  if (unlock_at_.size() != static_cast<std::size_t>(sim.node_count())) unlock_at_.assign(sim.node_count(), 0);
  if (r.action == ActionId::CheckDone) {
    unlock_at_[r.node] = r.start + 1 + uniform_below(rng_, static_cast<std::uint64_t>(cfg_.hold_max));
  }
}

PopulationApp::PopulationApp(PopulationConfig cfg, int node_count)
    : cfg_(std::move(cfg)),
      agents_(node_count, 0),
      active_(node_count),
      partner_rng_(derive_seed(cfg_.seed, kPartnerStream)) {
  for (std::size_t i = 0; i < cfg_.initial_states.size() && i < agents_.size(); ++i) {
    const int s = cfg_.initial_states[i];
    if (s < 0 || s >= cfg_.program.state_count()) throw std::invalid_argument("initial agent state out of range");
    agents_[i] = s;
  }
}

void PopulationApp::on_round_start(Simulation& sim) {
  const Round cutoff = WorkloadConfig{1.0, 1, cfg_.drain, false}.cutoff(sim.config().schedule.horizon);
  if (sim.round() >= cutoff) return;
  for (NodeId u = 0; u < static_cast<NodeId>(sim.node_count()); ++u) {
    const NodeRuntime& node = sim.node(u);
    if (node.lock_called || node.unlock_called || node.state.state != LockState::None) continue;
    std::optional<PortSet> target;
    if (cfg_.lock_pair_only) {
      PortSet t;
      t.insert(kSelfPort);
      if (auto nb = lowest_neighbor(sim.topology(), u, sim.topology().bound_ports(u))) t.insert(nb->first);
      target = t;
    }
    sim.request_lock(u, target);
  }
}

void PopulationApp::on_execution(Simulation& sim, const ActivationRecord& r) {
  // Interactions are instantaneous: release right after the lock completes.
  if (r.action == ActionId::CheckDone) sim.request_unlock(r.node);
}

void PopulationApp::on_execution(const Simulation& sim, const ActivationRecord& r, const NodeState&) {
  const NodeId u = r.node;
  if (r.action == ActionId::CheckDone) {
    std::vector<std::pair<Port, NodeId>> locked;
    r.effects.locked.for_each([&](Port p) {
      if (p == kSelfPort) return;
      if (auto v = sim.topology().peer(u, p)) locked.emplace_back(p, *v);
    });
    if (locked.empty()) return;  // only itself locked: no interaction
    const auto* nb = &locked.front();
    if (cfg_.random_partner && locked.size() > 1) nb = &locked[uniform_below(partner_rng_, locked.size())];
    InteractionRecord rec;
    rec.start = r.start;
    rec.initiator = u;
    rec.responder = nb->second;
    rec.edge = sim.topology().binding(u, nb->first)->id;
    rec.before = {agents_[u], agents_[nb->second]};
    rec.after = cfg_.program.apply(rec.before.first, rec.before.second);
    agents_[u] = rec.after.first;
    agents_[nb->second] = rec.after.second;
    active_[u] = interactions_.size();
    interactions_.push_back(rec);
  } else if (r.action == ActionId::InitUnlock && active_[u]) {
    interactions_[*active_[u]].end = r.start;
    active_[u].reset();
  }
}

void PopulationApp::on_round_end(const Simulation& sim) {
  std::vector<int> uses(sim.node_count(), 0);
  for (const auto& a : active_) {
    if (!a) continue;
    const InteractionRecord& rec = interactions_[*a];
    const NodeId u = rec.initiator;
    const NodeId v = rec.responder;
    ++uses[u];
    ++uses[v];
    bool isolated = lock_holder(sim, u) == u;
    const auto port = sim.topology().port_to(u, v);
    const PortBinding* b = port ? sim.topology().binding(u, *port) : nullptr;
    if (b != nullptr && b->id == rec.edge && lock_holder(sim, v) != u) isolated = false;
    if (!isolated) {
      ++isolation_violations_;
      if (details_.size() < 20) {
        details_.push_back({sim.round(), "isolation",
                            "interaction " + std::to_string(u) + "-" + std::to_string(v) + " lost its locks"});
      }
    }
  }
  for (NodeId x = 0; x < uses.size(); ++x) {
    if (uses[x] > 1) {
      ++matching_violations_;
      if (details_.size() < 20) {
        details_.push_back({sim.round(), "matching", "node " + std::to_string(x) + " in two interactions"});
      }
    }
  }
}

bool PopulationApp::all_in(int state) const {
  return std::all_of(agents_.begin(), agents_.end(), [&](int s) { return s == state; });
}

PopulationResult run_population(Simulation& sim, const PopulationConfig& cfg) {
  PopulationApp app(cfg, sim.node_count());
  sim.set_driver(&app);
  sim.add_observer(&app);
  sim.run();
  sim.set_driver(nullptr);
  return {app.interactions(), app.agent_states(), app.matching_violations(), app.isolation_violations()};
}

LockClient::LockClient(Simulation& sim)
    : sim_(sim), status_(sim.node_count(), Status::Idle), locked_(sim.node_count()) {
  sim_.set_driver(this);
}

void LockClient::begin_lock(NodeId u, std::optional<PortSet> target) {
  if (status_.at(u) != Status::Idle || sim_.node(u).state.state != LockState::None) {
    throw Busy("Lock called on node " + std::to_string(u) + " while not idle");
  }
  sim_.request_lock(u, target);
  status_[u] = Status::Locking;
}

void LockClient::begin_unlock(NodeId u) {
  if (status_.at(u) != Status::Locked) {
    throw Busy("Unlock called on node " + std::to_string(u) + " without a held lock");
  }
  sim_.request_unlock(u);
  status_[u] = Status::Unlocking;
}

std::vector<NodeId> LockClient::lock(NodeId u, std::optional<PortSet> target) {
  begin_lock(u, target);
  run_until([&] { return status_[u] == Status::Locked; });
  return locked_[u];
}

void LockClient::unlock(NodeId u) {
  begin_unlock(u);
  run_until([&] { return status_[u] == Status::Idle; });
}

void LockClient::on_execution(Simulation& sim, const ActivationRecord& r) {
  const NodeId u = r.node;
  if (r.action == ActionId::CheckDone) {
    std::vector<NodeId> set{u};
    r.effects.locked.for_each([&](Port p) {
      if (p == kSelfPort) return;
      if (auto v = sim.topology().peer(u, p)) set.push_back(*v);
    });
    std::sort(set.begin(), set.end());
    locked_[u] = std::move(set);
    status_[u] = Status::Locked;
  } else if (r.action == ActionId::CheckUnlocked) {
    status_[u] = Status::Idle;
  } else if (r.effects.api_result == ApiResult::RequestRejected) {
    status_[u] = r.action == ActionId::InitLock ? Status::Idle : Status::Locked;
  }
}

}  // namespace lme
