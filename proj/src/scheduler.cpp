#include "lme/scheduler.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>

namespace lme {

namespace {

constexpr std::uint64_t kAdversaryStream = 0xAD;
constexpr std::uint64_t kTopologyStream = 0x70;
constexpr std::uint64_t kNodeStreamBase = 0x1000;

bool is_receive(ActionId a) { return consumed_kind(a).has_value(); }

std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double x = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("bad header value for " + key + ": " + s);
  }
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t x = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("bad header value for " + key + ": " + s);
  }
  return x;
}

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void byte(std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void msg(const InTransit& m) {
    byte(static_cast<std::uint8_t>(m.msg.kind));
    byte(m.msg.priority);
    byte(m.msg.outcome ? 1 : 0);
    u64(m.id.sender);
    u64(m.id.exec);
    u64(m.id.slot);
    u64(m.sent);
  }
};

}  // namespace

const char* to_string(Mode m) { return m == Mode::SemiSync ? "semisync" : "async"; }

const char* to_string(ActivationPolicy p) {
  switch (p) {
    case ActivationPolicy::All: return "all";
    case ActivationPolicy::RandomSubset: return "random_subset";
    case ActivationPolicy::Scripted: return "scripted";
  }
  return "?";
}

const char* to_string(DeliveryPolicy p) {
  switch (p) {
    case DeliveryPolicy::Random: return "random";
    case DeliveryPolicy::OldestFirst: return "oldest_first";
    case DeliveryPolicy::Scripted: return "scripted";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "semisync") return Mode::SemiSync;
  if (s == "async") return Mode::Async;
  throw std::invalid_argument("unknown mode: " + s);
}

ActivationPolicy parse_activation(const std::string& s) {
  if (s == "all") return ActivationPolicy::All;
  if (s == "random_subset") return ActivationPolicy::RandomSubset;
  if (s == "scripted") return ActivationPolicy::Scripted;
  throw std::invalid_argument("unknown activation policy: " + s);
}

DeliveryPolicy parse_delivery(const std::string& s) {
  if (s == "random") return DeliveryPolicy::Random;
  if (s == "oldest_first") return DeliveryPolicy::OldestFirst;
  if (s == "scripted") return DeliveryPolicy::Scripted;
  throw std::invalid_argument("unknown delivery policy: " + s);
}

void SimulationConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  if (node_count < 1) fail("nodes must be at least 1");
  if (delta < 1 || delta > kMaxDelta) fail("delta must be in 1.." + std::to_string(kMaxDelta));
  if (k < 1 || k > 256) fail("k must be in 1..256");
  if (schedule.fairness_bound < 1) fail("fairness bound must be at least 1");
  if (schedule.async_max_duration < 1) fail("async max duration must be at least 1");
  if (schedule.horizon < 1) fail("horizon must be at least 1");
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(std::string(name) + " must be in [0,1]");
  };
  prob(schedule.p_activate, "p_act");
  prob(dynamics.p_add, "p_add");
  prob(dynamics.p_del, "p_del");
  const auto n = static_cast<NodeId>(node_count);
  for (const auto& [u, v] : initial_edges) {
    if (u >= n || v >= n || u == v) fail("bad initial edge " + std::to_string(u) + "-" + std::to_string(v));
  }
  std::set<std::tuple<Round, NodeId, NodeId>> seen;
  for (const auto& e : scripted_events) {
    if (e.u >= n || e.v >= n || e.u == e.v) fail("bad scripted event " + std::to_string(e.u) + "-" + std::to_string(e.v));
    const auto [a, b] = std::minmax(e.u, e.v);
    if (!seen.emplace(e.round, a, b).second) {
      fail("pair " + std::to_string(a) + "-" + std::to_string(b) + " changes twice in round " + std::to_string(e.round));
    }
  }
}

TraceHeader make_header(const SimulationConfig& cfg) {
  const auto& s = cfg.schedule;
  TraceHeader h{
      {"nodes", std::to_string(cfg.node_count)},
      {"delta", std::to_string(cfg.delta)},
      {"k", std::to_string(cfg.k)},
      {"mode", to_string(s.mode)},
      {"activation", to_string(s.activation)},
      {"p_act", format_double(s.p_activate)},
      {"delivery", to_string(s.delivery)},
      {"fairness", std::to_string(s.fairness_bound)},
      {"dmax", std::to_string(s.async_max_duration)},
      {"seed", std::to_string(s.seed)},
      {"horizon", std::to_string(s.horizon)},
      {"p_add", format_double(cfg.dynamics.p_add)},
      {"p_del", format_double(cfg.dynamics.p_del)},
  };
  if (!cfg.late_applicant_loses) h.emplace_back("late_lose", "0");
  return h;
}

SimulationConfig config_from_header(const Trace& trace) {
  auto need = [&](const char* key) {
    auto v = trace.get(key);
    if (!v) throw std::invalid_argument(std::string("trace header lacks ") + key);
    return *v;
  };
  SimulationConfig c;
  c.node_count = static_cast<int>(parse_u64("nodes", need("nodes")));
  c.delta = static_cast<int>(parse_u64("delta", need("delta")));
  c.k = static_cast<int>(parse_u64("k", need("k")));
  c.schedule.mode = parse_mode(need("mode"));
  c.schedule.activation = ActivationPolicy::Scripted;
  c.schedule.delivery = DeliveryPolicy::Scripted;
  c.schedule.fairness_bound = static_cast<int>(parse_u64("fairness", need("fairness")));
  c.schedule.async_max_duration = static_cast<int>(parse_u64("dmax", need("dmax")));
  c.schedule.seed = parse_u64("seed", need("seed"));
  c.schedule.horizon = parse_u64("horizon", need("horizon"));
  if (auto p = trace.get("p_act")) c.schedule.p_activate = parse_double("p_act", *p);
  if (auto v = trace.get("late_lose")) c.late_applicant_loses = *v != "0";
  // Topology changes come from the trace itself.
  c.dynamics = {};
  c.validate();
  return c;
}

void FairnessTracker::observe(NodeId u, const Enablement& e, Round now) {
  const ActionSet pending = e.enabled | e.pre_enabled;
  auto& row = since_[u];
  for (int i = 0; i < kActionCount; ++i) {
    const auto a = static_cast<ActionId>(i);
    if (is_receive(a)) continue;
    if (pending.contains(a)) {
      if (!row[i]) row[i] = now;
    } else {
      row[i].reset();
    }
  }
}

void FairnessTracker::executed(NodeId u, ActionId a) { since_[u][static_cast<int>(a)].reset(); }

Simulation::Simulation(SimulationConfig cfg)
    : cfg_(std::move(cfg)),
      topo_((cfg_.validate(), cfg_.node_count), cfg_.delta),
      nodes_(cfg_.node_count),
      adversary_rng_(derive_seed(cfg_.schedule.seed, kAdversaryStream)),
      topology_rng_(derive_seed(cfg_.schedule.seed, kTopologyStream)),
      fairness_(cfg_.node_count),
      enablement_(cfg_.node_count) {
  for (int u = 0; u < cfg_.node_count; ++u) {
    nodes_[u].rng.seed(derive_seed(cfg_.schedule.seed, kNodeStreamBase + static_cast<std::uint64_t>(u)));
  }
  std::stable_sort(cfg_.scripted_events.begin(), cfg_.scripted_events.end(),
                   [](const TopologyEvent& a, const TopologyEvent& b) { return a.round < b.round; });
}

Round Simulation::fairness_limit() const {
  const Round items = 2 * static_cast<Round>(cfg_.delta) + 10;
  return static_cast<Round>(cfg_.schedule.fairness_bound) + items * static_cast<Round>(cfg_.schedule.async_max_duration);
}

void Simulation::set_trace_sink(std::ostream* out, const TraceHeader& extra) {
  sink_ = out;
  if (sink_ == nullptr) return;
  TraceHeader h = make_header(cfg_);
  h.insert(h.end(), extra.begin(), extra.end());
  *sink_ << format_header(h) << '\n';
}

void Simulation::emit(decltype(TraceEvent::payload) payload) {
  TraceEvent e{round_, seq_++, std::move(payload)};
  if (sink_ != nullptr) {
    line_.clear();
    append_event(line_, e);
    line_.push_back('\n');
    sink_->write(line_.data(), static_cast<std::streamsize>(line_.size()));
  }
  if (capture_) captured_.push_back(e);
  if (round_events_ != nullptr) round_events_->push_back(std::move(e));
}

void Simulation::apply_connect(NodeId u, Port pu, NodeId v, Port pv, bool explicit_ports) {
  const PortBinding b = explicit_ports ? topo_.connect_at(u, pu, v, pv) : topo_.connect(u, v);
  emit(ConnectRecord{b.node_a, b.port_a, b.node_b, b.port_b});
  for (Observer* o : observers_) o->on_connect(*this, b);
}

std::size_t Simulation::apply_disconnect(NodeId u, NodeId v) {
  const auto [b, lost] = topo_.disconnect(u, v);
  emit(DisconnectRecord{b.node_a, b.port_a, b.node_b, b.port_b, lost});
  for (Observer* o : observers_) o->on_disconnect(*this, b, lost);
  return lost;
}

void Simulation::apply_api_call(const ApiCallRecord& r) {
  NodeRuntime& n = nodes_.at(r.node);
  if (r.call == ApiCall::Lock) {
    if (n.lock_called) throw std::logic_error("Lock already pending at node " + std::to_string(r.node));
    n.lock_called = true;
    n.lock_target = r.target;
  } else {
    if (n.unlock_called) throw std::logic_error("Unlock already pending at node " + std::to_string(r.node));
    n.unlock_called = true;
  }
  emit(r);
  for (Observer* o : observers_) o->on_api_call(*this, r);
}

void Simulation::request_lock(NodeId u, std::optional<PortSet> target) {
  apply_api_call(ApiCallRecord{u, ApiCall::Lock, target});
}

void Simulation::request_unlock(NodeId u) { apply_api_call(ApiCallRecord{u, ApiCall::Unlock, std::nullopt}); }

bool Simulation::busy(NodeId u) const {
  const auto& b = nodes_[u].busy_until;
  return b && round_ <= *b;
}

KindMask Simulation::available_kinds(NodeId u) const {
  KindMask mask = 0;
  topo_.for_each_inbound(u, [&](Port, const InTransit& m) { mask |= kind_bit(m.msg.kind); });
  return mask;
}

void Simulation::begin_round() {
  if (round_ >= cfg_.schedule.horizon) throw HorizonExceeded(round_);
  topo_.set_round(round_);
  fairness_updated_ = false;
}

void Simulation::end_round() {
  for (Observer* o : observers_) o->on_round_end(*this);
  ++round_;
}

void Simulation::apply_topology_events() {
  if (round_ == 0) {
    for (const auto& [u, v] : cfg_.initial_edges) apply_connect(u, 0, v, 0, false);
  }
  std::set<std::pair<NodeId, NodeId>> changed;
  for (const TopologyEvent& e : cfg_.scripted_events) {
    if (e.round != round_) continue;
    if (e.connect) {
      apply_connect(e.u, 0, e.v, 0, false);
    } else {
      apply_disconnect(e.u, e.v);
    }
    changed.insert(std::minmax(e.u, e.v));
  }
  if (!cfg_.dynamics.enabled() || round_ == 0) return;

  const auto n = static_cast<NodeId>(cfg_.node_count);
  std::vector<int> degree(n);
  for (NodeId u = 0; u < n; ++u) degree[u] = topo_.bound_ports(u).size();
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      if (changed.count({u, v}) != 0) continue;
      if (topo_.adjacent(u, v)) {
        if (bernoulli(topology_rng_, cfg_.dynamics.p_del)) {
          apply_disconnect(u, v);
          --degree[u];
          --degree[v];
        }
      } else if (degree[u] < cfg_.delta && degree[v] < cfg_.delta) {
        if (bernoulli(topology_rng_, cfg_.dynamics.p_add)) {
          apply_connect(u, 0, v, 0, false);
          ++degree[u];
          ++degree[v];
        }
      }
    }
  }
}

void Simulation::update_fairness() {
  fairness_updated_ = true;
  for (NodeId u = 0; u < static_cast<NodeId>(cfg_.node_count); ++u) {
    const NodeRuntime& n = nodes_[u];
    KindMask mask = 0;
    topo_.for_each_inbound(u, [&](Port, const InTransit& m) {
      mask |= kind_bit(m.msg.kind);
      fairness_.note_age(round_ - m.sent);
    });
    enablement_[u] = enabled_actions(n.state, mask, n.lock_called, n.unlock_called, topo_.pending_detections(u));
    fairness_.observe(u, enablement_[u], round_);
    const ActionSet pending = enablement_[u].enabled | enablement_[u].pre_enabled;
    for (ActionId a : pending.to_vector()) {
      if (auto s = fairness_.since(u, a)) fairness_.note_age(round_ - *s);
    }
  }
}

std::optional<Simulation::Option> Simulation::choose(NodeId u, bool forced_only) {
  const Enablement& e = enablement_[u];
  const Round F = static_cast<Round>(cfg_.schedule.fairness_bound);

  // Overdue items first, oldest wins; guard actions before messages on ties.
  std::optional<Option> overdue;
  Round overdue_age = 0;
  bool overdue_enabled = false;
  for (ActionId a : (e.enabled | e.pre_enabled).to_vector()) {
    if (is_receive(a)) continue;
    const auto s = fairness_.since(u, a);
    if (!s) continue;
    const Round age = round_ - *s;
    if (age >= F && (!overdue || age > overdue_age)) {
      overdue = Option{a, std::nullopt};
      overdue_age = age;
      overdue_enabled = e.enabled.contains(a);
    }
  }
  topo_.for_each_inbound(u, [&](Port p, const InTransit& m) {
    const Round age = round_ - m.sent;
    if (age >= F && (!overdue || age > overdue_age)) {
      overdue = Option{receive_action(m.msg.kind), std::pair{p, m}};
      overdue_age = age;
      overdue_enabled = true;
    }
  });
  if (overdue) {
    if (overdue_enabled) return overdue;
    // Only pre-enabled: run something that processes the detector.
    if (e.enabled.contains(ActionId::CleanUpAction)) return Option{ActionId::CleanUpAction, std::nullopt};
    std::optional<Option> oldest;
    Round oldest_age = 0;
    for (ActionId a : e.enabled.to_vector()) {
      if (is_receive(a)) continue;
      const auto s = fairness_.since(u, a);
      const Round age = s ? round_ - *s : 0;
      if (!oldest || age > oldest_age) {
        oldest = Option{a, std::nullopt};
        oldest_age = age;
      }
    }
    topo_.for_each_inbound(u, [&](Port p, const InTransit& m) {
      const Round age = round_ - m.sent;
      if (!oldest || age > oldest_age) {
        oldest = Option{receive_action(m.msg.kind), std::pair{p, m}};
        oldest_age = age;
      }
    });
    return oldest;
  }
  if (forced_only || e.enabled.empty()) return std::nullopt;

  const auto actions = e.enabled.to_vector();
  const ActionId a = actions[uniform_below(adversary_rng_, actions.size())];
  const auto kind = consumed_kind(a);
  if (!kind) return Option{a, std::nullopt};

  std::vector<std::pair<Port, InTransit>> msgs;
  topo_.for_each_inbound(u, [&](Port p, const InTransit& m) {
    if (m.msg.kind == *kind) msgs.emplace_back(p, m);
  });
  std::size_t pick = 0;
  if (cfg_.schedule.delivery == DeliveryPolicy::Random) {
    pick = uniform_below(adversary_rng_, msgs.size());
  } else {
    for (std::size_t i = 1; i < msgs.size(); ++i) {
      const auto& a_ = msgs[i].second;
      const auto& b_ = msgs[pick].second;
      if (std::tie(a_.sent, a_.id) < std::tie(b_.sent, b_.id)) pick = i;
    }
  }
  return Option{a, msgs[pick]};
}

const ActivationRecord& Simulation::apply_execution(NodeId u, ActionId a,
                                                    const std::optional<std::pair<Port, MessageId>>& msg,
                                                    Round duration) {
  NodeRuntime& n = nodes_.at(u);
  std::optional<Incoming> incoming;
  if (msg) {
    const InTransit m = topo_.take_message(u, msg->first, msg->second);
    emit(DeliveryRecord{u, msg->first, m.msg, m.id, m.sent});
    incoming = Incoming{msg->first, m.msg};
  }
  const PortSet snapshot = topo_.take_detector_snapshot(u);
  const ActionContext ctx{cfg_.k, topo_.bound_ports(u), n.lock_called, n.unlock_called, n.lock_target,
                          cfg_.late_applicant_loses};
  Transition t = execute(n.state, a, snapshot, incoming, n.rng, ctx);
  if (a == ActionId::InitLock) {
    n.lock_called = false;
    n.lock_target.reset();
  } else if (a == ActionId::InitUnlock) {
    n.unlock_called = false;
  }

  const std::uint64_t exec = n.exec_count++;
  std::uint32_t slot = 0;
  std::size_t dropped = 0;
  topo_.begin_execution(u);
  for (const auto& [p, m] : t.effects.cleanup_sends) {
    if (topo_.send(u, p, m, MessageId{u, exec, slot++}) == SendOutcome::Dropped) ++dropped;
  }
  topo_.begin_execution(u);
  for (const auto& [p, m] : t.effects.sends) {
    if (topo_.send(u, p, m, MessageId{u, exec, slot++}) == SendOutcome::Dropped) ++dropped;
  }

  const NodeState before = n.state;
  n.state = std::move(t.state);
  if (duration > 1) {
    n.busy_until = round_ + duration - 1;
  } else {
    n.busy_until.reset();
  }
  last_activation_ = ActivationRecord{u, exec, a, round_, round_ + duration - 1, snapshot, std::move(t.effects), dropped};
  emit(last_activation_);
  fairness_.executed(u, a);
  for (Observer* o : observers_) o->on_execution(*this, last_activation_, before);
  return last_activation_;
}

std::vector<TraceEvent> Simulation::step() {
  return cfg_.schedule.mode == Mode::SemiSync ? step_round() : step_async();
}

std::vector<TraceEvent> Simulation::step_round() {
  if (cfg_.schedule.mode != Mode::SemiSync) throw std::logic_error("step_round requires semi-synchronous mode");
  return step_impl(false);
}

std::vector<TraceEvent> Simulation::step_async() {
  if (cfg_.schedule.mode != Mode::Async) throw std::logic_error("step_async requires asynchronous mode");
  return step_impl(true);
}

std::vector<TraceEvent> Simulation::step_impl(bool async) {
  std::vector<TraceEvent> events;
  round_events_ = &events;
  begin_round();
  apply_topology_events();
  if (driver_ != nullptr) driver_->on_round_start(*this);
  update_fairness();

  const auto n = static_cast<NodeId>(cfg_.node_count);
  std::vector<std::optional<Option>> chosen(n);
  std::vector<ScriptedActivation> scripted(scripted_.begin(), scripted_.end());
  scripted_.clear();
  const auto policy = cfg_.schedule.activation;
  for (NodeId u = 0; u < n; ++u) {
    if (async && busy(u)) continue;
    bool selected = false;
    if (policy == ActivationPolicy::All) {
      selected = true;
    } else if (policy == ActivationPolicy::RandomSubset) {
      selected = !enablement_[u].enabled.empty() && bernoulli(adversary_rng_, cfg_.schedule.p_activate);
    }
    chosen[u] = choose(u, !selected);
  }
  for (const ScriptedActivation& s : scripted) {
    if (s.node >= n) throw std::invalid_argument("scripted activation for unknown node");
    if (chosen[s.node] || (async && busy(s.node))) continue;
    if (!enablement_[s.node].enabled.contains(s.action)) {
      throw std::invalid_argument(std::string("scripted action not enabled: ") + to_string(s.action));
    }
    Option o{s.action, std::nullopt};
    if (const auto kind = consumed_kind(s.action)) {
      topo_.for_each_inbound(s.node, [&](Port p, const InTransit& m) {
        if (m.msg.kind != *kind) return;
        if (s.message ? m.id == *s.message : (!o.message || m.sent < o.message->second.sent)) {
          o.message = std::pair{p, m};
        }
      });
      if (!o.message) throw std::invalid_argument("scripted message not available");
    }
    chosen[s.node] = o;
  }

  const int dmax = async ? cfg_.schedule.async_max_duration : 1;
  for (NodeId u = 0; u < n; ++u) {
    if (!chosen[u]) continue;
    const Round d = dmax > 1 ? 1 + uniform_below(adversary_rng_, static_cast<std::uint64_t>(dmax)) : 1;
    std::optional<std::pair<Port, MessageId>> msg;
    if (chosen[u]->message) msg = std::pair{chosen[u]->message->first, chosen[u]->message->second.id};
    const ActivationRecord rec = apply_execution(u, chosen[u]->action, msg, d);
    if (driver_ != nullptr) driver_->on_execution(*this, rec);
  }
  end_round();
  round_events_ = nullptr;
  return events;
}

void Simulation::run() {
  while (round_ < cfg_.schedule.horizon) step();
}

ReplayResult Simulation::replay(const Trace& trace) {
  if (round_ != 0 || seq_ != 0) throw std::logic_error("replay needs a fresh simulation");
  ReplayResult res;
  auto mismatch = [&](const TraceEvent& e, const std::string& what) {
    if (res.mismatches++ == 0) res.first_mismatch = "seq " + std::to_string(e.seq) + ": " + what;
  };

  const Round last = trace.events.empty() ? 0 : trace.events.back().round + 1;
  const Round end = std::max(last, cfg_.schedule.horizon);
  if (end > cfg_.schedule.horizon) cfg_.schedule.horizon = end;
  std::size_t i = 0;
  DeliveryRecord pending{};
  bool has_pending = false;
  for (Round r = 0; r < end; ++r) {
    begin_round();
    for (; i < trace.events.size() && trace.events[i].round == r; ++i) {
      const TraceEvent& e = trace.events[i];
      try {
        if (const auto* c = std::get_if<ConnectRecord>(&e.payload)) {
          apply_connect(c->u, c->pu, c->v, c->pv, true);
        } else if (const auto* d = std::get_if<DisconnectRecord>(&e.payload)) {
          const std::size_t lost = apply_disconnect(d->u, d->v);
          if (lost != d->lost) mismatch(e, "lost message count differs");
        } else if (const auto* a = std::get_if<ApiCallRecord>(&e.payload)) {
          apply_api_call(*a);
        } else if (const auto* dl = std::get_if<DeliveryRecord>(&e.payload)) {
          if (!fairness_updated_) update_fairness();
          pending = *dl;
          has_pending = true;
        } else if (const auto* ac = std::get_if<ActivationRecord>(&e.payload)) {
          if (!fairness_updated_) update_fairness();
          if (ac->exec != nodes_.at(ac->node).exec_count) mismatch(e, "execution index differs");
          std::optional<std::pair<Port, MessageId>> msg;
          if (has_pending) {
            if (pending.node != ac->node) throw ReplayError("delivery and activation name different nodes");
            msg = std::pair{pending.port, pending.id};
            has_pending = false;
          }
          if (ac->end < ac->start) throw ReplayError("activation span ends before it starts");
          const ActivationRecord& got = apply_execution(ac->node, ac->action, msg, ac->end - ac->start + 1);
          ++res.executions;
          res.activations.push_back(got);
          if (got.detector != ac->detector) mismatch(e, "detector snapshot differs");
          if (got.effects != ac->effects) mismatch(e, "effects differ");
          if (got.dropped != ac->dropped) mismatch(e, "dropped count differs");
        }
      } catch (const ReplayError&) {
        throw;
      } catch (const std::exception& ex) {
        throw ReplayError("seq " + std::to_string(e.seq) + ": " + ex.what());
      }
    }
    if (has_pending) throw ReplayError("delivery without activation in round " + std::to_string(r));
    if (!fairness_updated_) update_fairness();
    end_round();
  }
  res.final_hash = state_hash();
  return res;
}

std::uint64_t Simulation::state_hash() const {
  Fnv f;
  f.u64(round_);
  for (NodeId u = 0; u < static_cast<NodeId>(cfg_.node_count); ++u) {
    const NodeRuntime& n = nodes_[u];
    const EncodedState e = encode_state(n.state, cfg_.delta, cfg_.k);
    for (std::uint8_t b : e.bytes) f.byte(b);
    f.byte(static_cast<std::uint8_t>((n.lock_called ? 1 : 0) | (n.unlock_called ? 2 : 0) | (n.lock_target ? 4 : 0)));
    f.u64(n.lock_target ? n.lock_target->bits() : 0);
    f.u64(n.exec_count);
    f.u64(n.busy_until ? *n.busy_until + 1 : 0);
    f.u64(topo_.pending_detections(u).bits());
    for (int p = 1; p <= cfg_.delta; ++p) {
      const auto peer = topo_.peer(u, static_cast<Port>(p));
      f.u64(peer ? *peer + 1 : 0);
    }
    topo_.for_each_inbound(u, [&](Port p, const InTransit& m) {
      f.byte(p);
      f.msg(m);
    });
  }
  const auto& c = topo_.counters();
  f.u64(c.sent);
  f.u64(c.delivered);
  f.u64(c.dropped_unbound);
  f.u64(c.lost_on_disconnect);
  return f.h;
}

Trace reduce_to_semisync(const Trace& in) {
  struct Exec {
    std::size_t act = 0;
    std::optional<std::size_t> delivery;
    Round start = 0;
    std::uint64_t rank = 0;
    int sub = 0;
    Round new_round = 0;
  };
  std::vector<Exec> ex;
  std::map<std::pair<NodeId, std::uint64_t>, std::size_t> by_key;
  std::optional<std::size_t> pending;
  for (std::size_t i = 0; i < in.events.size(); ++i) {
    const TraceEvent& e = in.events[i];
    if (e.kind() == TraceKind::Delivery) {
      pending = i;
    } else if (e.kind() == TraceKind::Activation) {
      const auto& a = std::get<ActivationRecord>(e.payload);
      if (!by_key.emplace(std::pair{a.node, a.exec}, ex.size()).second) {
        throw ReplayError("duplicate execution " + std::to_string(a.node) + "." + std::to_string(a.exec));
      }
      ex.push_back(Exec{i, pending, a.start, 0, 0, 0});
      pending.reset();
    }
  }

  // Causal DAG: program order plus send -> receive.
  std::vector<std::vector<std::size_t>> succ(ex.size());
  std::vector<std::size_t> indeg(ex.size(), 0);
  auto add_edge = [&](std::size_t a, std::size_t b) {
    succ[a].push_back(b);
    ++indeg[b];
  };
  for (auto it = by_key.begin(); it != by_key.end(); ++it) {
    auto next = std::next(it);
    if (next != by_key.end() && next->first.first == it->first.first) add_edge(it->second, next->second);
  }
  for (std::size_t j = 0; j < ex.size(); ++j) {
    if (!ex[j].delivery) continue;
    const auto& d = std::get<DeliveryRecord>(in.events[*ex[j].delivery].payload);
    auto it = by_key.find({d.id.sender, d.id.exec});
    if (it == by_key.end()) throw ReplayError("delivered message has no sending execution");
    add_edge(it->second, j);
  }

  // Kahn's algorithm, earliest start first.
  using Key = std::pair<Round, std::size_t>;
  std::priority_queue<Key, std::vector<Key>, std::greater<>> ready;
  for (std::size_t j = 0; j < ex.size(); ++j) {
    if (indeg[j] == 0) ready.emplace(ex[j].start, j);
  }
  std::uint64_t rank = 0;
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t j = ready.top().second;
    ready.pop();
    ex[j].rank = rank++;
    order.push_back(j);
    for (std::size_t s : succ[j]) {
      if (--indeg[s] == 0) ready.emplace(ex[s].start, s);
    }
  }
  if (order.size() != ex.size()) throw CyclicCausality();

  // Sub-rounds within a start round, following causal predecessors.
  for (std::size_t j : order) {
    for (std::size_t s : succ[j]) {
      if (ex[s].start < ex[j].start) throw ReplayError("causal edge runs against time");
      if (ex[s].start == ex[j].start) ex[s].sub = std::max(ex[s].sub, ex[j].sub + 1);
    }
  }
  std::map<Round, int> subrounds;
  for (const Exec& x : ex) {
    int& c = subrounds[x.start];
    c = std::max(c, x.sub + 1);
  }

  const Round last = in.events.empty() ? 0 : in.events.back().round;
  std::map<Round, Round> base;
  Round next_round = 0;
  for (Round r = 0; r <= last; ++r) {
    base[r] = next_round;
    auto it = subrounds.find(r);
    next_round += it == subrounds.end() ? 1 : static_cast<Round>(it->second);
  }
  for (Exec& x : ex) x.new_round = base.at(x.start) + static_cast<Round>(x.sub);

  struct Placed {
    Round round;
    int phase;  // 0 = before executions, 1 = executions, 2 = after
    std::uint64_t order;
  };
  std::vector<std::pair<Placed, TraceEvent>> placed;
  std::map<std::size_t, std::size_t> exec_of_event;
  for (std::size_t j = 0; j < ex.size(); ++j) {
    exec_of_event[ex[j].act] = j;
    if (ex[j].delivery) exec_of_event[*ex[j].delivery] = j;
  }
  Round current = static_cast<Round>(-1);
  bool after_exec = false;
  for (std::size_t i = 0; i < in.events.size(); ++i) {
    const TraceEvent& e = in.events[i];
    if (e.round != current) {
      current = e.round;
      after_exec = false;
    }
    TraceEvent out = e;
    auto it = exec_of_event.find(i);
    if (it != exec_of_event.end()) {
      const Exec& x = ex[it->second];
      after_exec = true;
      if (auto* d = std::get_if<DeliveryRecord>(&out.payload)) {
        d->sent = ex[by_key.at({d->id.sender, d->id.exec})].new_round;
      } else {
        auto& a = std::get<ActivationRecord>(out.payload);
        a.start = a.end = x.new_round;
      }
      out.round = x.new_round;
      placed.push_back({{x.new_round, 1, x.rank * 2 + (e.kind() == TraceKind::Activation ? 1 : 0)}, out});
    } else if (!after_exec) {
      out.round = base.at(e.round);
      placed.push_back({{out.round, 0, i}, out});
    } else {
      const auto sr = subrounds.find(e.round);
      out.round = base.at(e.round) + (sr == subrounds.end() ? 0 : static_cast<Round>(sr->second - 1));
      placed.push_back({{out.round, 2, i}, out});
    }
  }
  std::stable_sort(placed.begin(), placed.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first.round, a.first.phase, a.first.order) < std::tie(b.first.round, b.first.phase, b.first.order);
  });

  Trace out;
  out.header = in.header;
  auto set = [&](const std::string& k, const std::string& v) {
    for (auto& kv : out.header) {
      if (kv.first == k) {
        kv.second = v;
        return;
      }
    }
    out.header.emplace_back(k, v);
  };
  set("mode", "semisync");
  set("dmax", "1");
  set("horizon", std::to_string(std::max<Round>(next_round, 1)));
  std::uint64_t seq = 0;
  for (auto& [p, e] : placed) {
    e.seq = seq++;
    out.events.push_back(std::move(e));
  }
  return out;
}

ReductionReport check_reduction(const Trace& async_trace) {
  ReductionReport rep;
  rep.reduced = reduce_to_semisync(async_trace);
  Simulation sim(config_from_header(rep.reduced));
  const ReplayResult res = sim.replay(rep.reduced);

  std::map<std::pair<NodeId, std::uint64_t>, const ActivationRecord*> original;
  for (const TraceEvent& e : async_trace.events) {
    if (const auto* a = std::get_if<ActivationRecord>(&e.payload)) original[{a->node, a->exec}] = a;
  }
  rep.executions = res.activations.size();
  auto mismatch = [&](const std::string& what) {
    if (rep.mismatches++ == 0) rep.first_mismatch = what;
  };
  if (res.activations.size() != original.size()) mismatch("execution count differs");
  for (const ActivationRecord& got : res.activations) {
    auto it = original.find({got.node, got.exec});
    const std::string key = std::to_string(got.node) + "." + std::to_string(got.exec);
    if (it == original.end()) {
      mismatch("unexpected execution " + key);
      continue;
    }
    const ActivationRecord& want = *it->second;
    if (got.action != want.action || got.detector != want.detector || got.effects != want.effects ||
        got.dropped != want.dropped) {
      mismatch("outcome of execution " + key + " differs");
    }
  }
  return rep;
}

}  // namespace lme
