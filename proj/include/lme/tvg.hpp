#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lme/message.hpp"
#include "lme/ports.hpp"

namespace lme {

using EdgeId = std::uint64_t;

/// Stable message identity: the sending node, the sender's execution index
/// and the position of the send within that execution. It does not depend on
/// the global order of events.
struct MessageId {
  NodeId sender = 0;
  std::uint64_t exec = 0;
  std::uint32_t slot = 0;

  auto operator<=>(const MessageId&) const = default;
};

struct InTransit {
  Message msg;
  MessageId id;
  Round sent = 0;
};

struct PortBinding {
  NodeId node_a = 0;
  Port port_a = 0;
  NodeId node_b = 0;
  Port port_b = 0;
  Round since = 0;
  EdgeId id = 0;

  bool operator==(const PortBinding&) const = default;
};

/// One incarnation of an edge. A reconnection always creates a new channel.
struct Channel {
  PortBinding edge;
  std::vector<InTransit> in_transit_ab;  ///< node_a -> node_b
  std::vector<InTransit> in_transit_ba;  ///< node_b -> node_a

  std::size_t occupancy() const { return in_transit_ab.size() + in_transit_ba.size(); }
};

struct PresenceEvent {
  Round round = 0;
  bool added = false;
  PortBinding binding;
};

enum class TopologyErrorCode {
  NoOpenPort,
  AlreadyAdjacent,
  NotAdjacent,
  DuplicateSendOnPort,
  SelfLoop,
  InvalidNode,
  PortUnavailable,
  RepeatedPresenceChange,
  MessageNotFound,
};

class TopologyError : public std::runtime_error {
 public:
  TopologyError(TopologyErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  TopologyErrorCode code() const { return code_; }

 private:
  TopologyErrorCode code_;
};

enum class SendOutcome { Queued, Dropped };

struct MessageCounters {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped_unbound = 0;
  std::uint64_t lost_on_disconnect = 0;
};

/// Time-varying graph: port bindings, per-edge channels, loopback queues and
/// disconnection detectors. All mutation happens from the simulation loop.
class Topology {
 public:
  Topology(int node_count, int delta);

  int node_count() const { return node_count_; }
  int delta() const { return delta_; }
  Round round() const { return round_; }
  /// Advances the clock. Rounds never go backwards.
  void set_round(Round r);

  /// Binds the lowest open port on each endpoint.
  PortBinding connect(NodeId u, NodeId v);
  /// Binds explicit ports (trace replay).
  PortBinding connect_at(NodeId u, Port pu, NodeId v, Port pv);
  /// Removes the edge, drops its in-transit messages and records the
  /// severed labels in both endpoints' detectors. Returns the removed
  /// binding and the number of messages lost.
  std::pair<PortBinding, std::size_t> disconnect(NodeId u, NodeId v);

  PortSet take_detector_snapshot(NodeId u);
  PortSet pending_detections(NodeId u) const { return detector_[u]; }

  /// Starts a new action execution scope for u's sends.
  void begin_execution(NodeId u);
  SendOutcome send(NodeId u, Port port, const Message& m, const MessageId& id);

  std::vector<std::pair<Port, NodeId>> neighborhood(NodeId u) const;
  PortSet bound_ports(NodeId u) const;
  std::optional<NodeId> peer(NodeId u, Port port) const;
  std::optional<Port> port_to(NodeId u, NodeId v) const;
  bool adjacent(NodeId u, NodeId v) const { return port_to(u, v).has_value(); }
  const PortBinding* binding(NodeId u, Port port) const;

  /// Calls f(port_at_u, InTransit) for every message u could receive now,
  /// in (port, send order) order.
  template <typename F>
  void for_each_inbound(NodeId u, F&& f) const {
    for (const auto& m : loopback_[u]) f(kSelfPort, m);
    for (int p = 1; p <= delta_; ++p) {
      const Slot& s = slot(u, static_cast<Port>(p));
      if (!s.bound) continue;
      const Channel& ch = channels_.at(s.edge);
      const auto& q = ch.edge.node_a == u ? ch.in_transit_ba : ch.in_transit_ab;
      for (const auto& m : q) f(static_cast<Port>(p), m);
    }
  }

  /// Removes and returns the identified message arriving at u via port.
  InTransit take_message(NodeId u, Port port, const MessageId& id);

  const std::map<EdgeId, Channel>& channels() const { return channels_; }
  std::size_t loopback_size(NodeId u) const { return loopback_[u].size(); }
  std::size_t edge_count() const { return channels_.size(); }

  const std::vector<PresenceEvent>& presence_log() const { return presence_log_; }
  /// True iff an edge {u,v} existed at every round in [from, to].
  bool present_throughout(NodeId u, NodeId v, Round from, Round to) const;

  const MessageCounters& counters() const { return counters_; }

  // Test hooks for fault injection. They bypass protocol rules, never the
  // port invariants.
  void inject_in_transit(NodeId from, NodeId to, const InTransit& m);

 private:
  struct Slot {
    bool bound = false;
    NodeId peer = 0;
    Port peer_port = 0;
    EdgeId edge = 0;
  };
  struct Interval {
    Round since = 0;
    std::optional<Round> until;  ///< first round the edge is absent
  };

  Slot& slot(NodeId u, Port p) { return slots_[u * (delta_ + 1) + p]; }
  const Slot& slot(NodeId u, Port p) const { return slots_[u * (delta_ + 1) + p]; }
  void check_node(NodeId u) const;
  void check_pair_change(NodeId u, NodeId v) const;
  std::vector<InTransit>& outbound(NodeId u, Port port);

  int node_count_;
  int delta_;
  Round round_ = 0;
  EdgeId next_edge_ = 1;
  std::vector<Slot> slots_;
  std::vector<PortSet> detector_;
  std::vector<PortSet> sent_this_execution_;
  std::vector<std::vector<InTransit>> loopback_;
  std::map<EdgeId, Channel> channels_;
  std::vector<PresenceEvent> presence_log_;
  std::map<std::pair<NodeId, NodeId>, std::vector<Interval>> presence_;
  MessageCounters counters_;
};

}  // namespace lme
