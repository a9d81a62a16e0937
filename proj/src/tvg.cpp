#include "lme/tvg.hpp"

#include <algorithm>
#include <string>

namespace lme {

namespace {

std::pair<NodeId, NodeId> ordered(NodeId u, NodeId v) { return u < v ? std::pair{u, v} : std::pair{v, u}; }

std::string pair_text(NodeId u, NodeId v) {
  return "{" + std::to_string(u) + "," + std::to_string(v) + "}";
}

}  // namespace

Topology::Topology(int node_count, int delta)
    : node_count_(node_count),
      delta_(delta),
      slots_(static_cast<std::size_t>(node_count) * (delta + 1)),
      detector_(node_count),
      sent_this_execution_(node_count),
      loopback_(node_count) {
  if (node_count <= 0) throw std::invalid_argument("node_count must be positive");
  if (delta <= 0 || delta > kMaxDelta) {
    throw std::invalid_argument("delta must be in 1.." + std::to_string(kMaxDelta));
  }
}

void Topology::set_round(Round r) {
  if (r < round_) throw std::invalid_argument("round moved backwards");
  round_ = r;
}

void Topology::check_node(NodeId u) const {
  if (u >= static_cast<NodeId>(node_count_)) {
    throw TopologyError(TopologyErrorCode::InvalidNode, "no such node " + std::to_string(u));
  }
}

void Topology::check_pair_change(NodeId u, NodeId v) const {
  auto it = presence_.find(ordered(u, v));
  if (it == presence_.end() || it->second.empty()) return;
  const Interval& last = it->second.back();
  if (last.since == round_ || (last.until && *last.until == round_)) {
    throw TopologyError(TopologyErrorCode::RepeatedPresenceChange,
                        "second presence change of " + pair_text(u, v) + " in round " + std::to_string(round_));
  }
}

PortBinding Topology::connect(NodeId u, NodeId v) {
  check_node(u);
  check_node(v);
  if (u == v) throw TopologyError(TopologyErrorCode::SelfLoop, "self-loop on " + std::to_string(u));
  if (adjacent(u, v)) throw TopologyError(TopologyErrorCode::AlreadyAdjacent, pair_text(u, v) + " already adjacent");
  auto lowest_open = [&](NodeId x) -> std::optional<Port> {
    for (int p = 1; p <= delta_; ++p) {
      if (!slot(x, static_cast<Port>(p)).bound) return static_cast<Port>(p);
    }
    return std::nullopt;
  };
  const auto pu = lowest_open(u);
  const auto pv = lowest_open(v);
  if (!pu || !pv) {
    throw TopologyError(TopologyErrorCode::NoOpenPort, "no open port for " + pair_text(u, v));
  }
  return connect_at(u, *pu, v, *pv);
}

PortBinding Topology::connect_at(NodeId u, Port pu, NodeId v, Port pv) {
  check_node(u);
  check_node(v);
  if (u == v) throw TopologyError(TopologyErrorCode::SelfLoop, "self-loop on " + std::to_string(u));
  if (adjacent(u, v)) throw TopologyError(TopologyErrorCode::AlreadyAdjacent, pair_text(u, v) + " already adjacent");
  auto usable = [&](NodeId x, Port p) { return p >= 1 && p <= delta_ && !slot(x, p).bound; };
  if (!usable(u, pu) || !usable(v, pv)) {
    throw TopologyError(TopologyErrorCode::PortUnavailable, "port unavailable for " + pair_text(u, v));
  }
  check_pair_change(u, v);

  PortBinding b{u, pu, v, pv, round_, next_edge_++};
  slot(u, pu) = Slot{true, v, pv, b.id};
  slot(v, pv) = Slot{true, u, pu, b.id};
  channels_.emplace(b.id, Channel{b, {}, {}});
  presence_log_.push_back({round_, true, b});
  presence_[ordered(u, v)].push_back({round_, std::nullopt});
  return b;
}

std::pair<PortBinding, std::size_t> Topology::disconnect(NodeId u, NodeId v) {
  check_node(u);
  check_node(v);
  const auto pu = port_to(u, v);
  if (!pu) throw TopologyError(TopologyErrorCode::NotAdjacent, pair_text(u, v) + " not adjacent");
  check_pair_change(u, v);

  const Slot su = slot(u, *pu);
  auto it = channels_.find(su.edge);
  const PortBinding b = it->second.edge;
  const std::size_t lost = it->second.occupancy();
  counters_.lost_on_disconnect += lost;
  channels_.erase(it);

  slot(u, *pu) = Slot{};
  slot(v, su.peer_port) = Slot{};
  detector_[u].insert(*pu);
  detector_[v].insert(su.peer_port);
  presence_log_.push_back({round_, false, b});
  presence_[ordered(u, v)].back().until = round_;
  return {b, lost};
}

PortSet Topology::take_detector_snapshot(NodeId u) {
  const PortSet out = detector_[u];
  detector_[u] = PortSet{};
  return out;
}

void Topology::begin_execution(NodeId u) { sent_this_execution_[u] = PortSet{}; }

std::vector<InTransit>& Topology::outbound(NodeId u, Port port) {
  const Slot& s = slot(u, port);
  Channel& ch = channels_.at(s.edge);
  return ch.edge.node_a == u ? ch.in_transit_ab : ch.in_transit_ba;
}

SendOutcome Topology::send(NodeId u, Port port, const Message& m, const MessageId& id) {
  check_node(u);
  if (port > delta_) throw std::invalid_argument("port label out of range");
  if (sent_this_execution_[u].contains(port)) {
    throw TopologyError(TopologyErrorCode::DuplicateSendOnPort,
                        "node " + std::to_string(u) + " sent twice on port " + std::to_string(port));
  }
  sent_this_execution_[u].insert(port);
  ++counters_.sent;
  const InTransit entry{m, id, round_};
  if (port == kSelfPort) {
    loopback_[u].push_back(entry);
    return SendOutcome::Queued;
  }
  if (!slot(u, port).bound) {
    ++counters_.dropped_unbound;
    return SendOutcome::Dropped;
  }
  outbound(u, port).push_back(entry);
  return SendOutcome::Queued;
}

std::vector<std::pair<Port, NodeId>> Topology::neighborhood(NodeId u) const {
  check_node(u);
  std::vector<std::pair<Port, NodeId>> out;
  for (int p = 1; p <= delta_; ++p) {
    const Slot& s = slot(u, static_cast<Port>(p));
    if (s.bound) out.emplace_back(static_cast<Port>(p), s.peer);
  }
  return out;
}

PortSet Topology::bound_ports(NodeId u) const {
  PortSet out;
  for (int p = 1; p <= delta_; ++p) {
    if (slot(u, static_cast<Port>(p)).bound) out.insert(static_cast<Port>(p));
  }
  return out;
}

std::optional<NodeId> Topology::peer(NodeId u, Port port) const {
  if (port == kSelfPort) return u;
  if (port > delta_) return std::nullopt;
  const Slot& s = slot(u, port);
  if (!s.bound) return std::nullopt;
  return s.peer;
}

std::optional<Port> Topology::port_to(NodeId u, NodeId v) const {
  for (int p = 1; p <= delta_; ++p) {
    const Slot& s = slot(u, static_cast<Port>(p));
    if (s.bound && s.peer == v) return static_cast<Port>(p);
  }
  return std::nullopt;
}

const PortBinding* Topology::binding(NodeId u, Port port) const {
  if (port == kSelfPort || port > delta_) return nullptr;
  const Slot& s = slot(u, port);
  if (!s.bound) return nullptr;
  return &channels_.at(s.edge).edge;
}

InTransit Topology::take_message(NodeId u, Port port, const MessageId& id) {
  check_node(u);
  std::vector<InTransit>* q = nullptr;
  if (port == kSelfPort) {
    q = &loopback_[u];
  } else if (port <= delta_ && slot(u, port).bound) {
    Channel& ch = channels_.at(slot(u, port).edge);
    q = ch.edge.node_a == u ? &ch.in_transit_ba : &ch.in_transit_ab;
  }
  if (q != nullptr) {
    auto it = std::find_if(q->begin(), q->end(), [&](const InTransit& m) { return m.id == id; });
    if (it != q->end()) {
      InTransit out = *it;
      q->erase(it);
      ++counters_.delivered;
      return out;
    }
  }
  throw TopologyError(TopologyErrorCode::MessageNotFound,
                      "no such message at node " + std::to_string(u) + " port " + std::to_string(port));
}

bool Topology::present_throughout(NodeId u, NodeId v, Round from, Round to) const {
  auto it = presence_.find(ordered(u, v));
  if (it == presence_.end()) return false;
  for (const Interval& iv : it->second) {
    if (iv.since <= from && (!iv.until || *iv.until > to)) return true;
  }
  return false;
}

void Topology::inject_in_transit(NodeId from, NodeId to, const InTransit& m) {
  const auto port = port_to(from, to);
  if (!port) throw TopologyError(TopologyErrorCode::NotAdjacent, pair_text(from, to) + " not adjacent");
  outbound(from, *port).push_back(m);
}

}  // namespace lme
