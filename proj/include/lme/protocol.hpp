#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lme/message.hpp"
#include "lme/ports.hpp"
#include "lme/random.hpp"

namespace lme {

enum class LockState : std::uint8_t { None, Prepare, Compete, Win, Locked, Unlock };
enum class Phase : std::uint8_t { None, Prepare, Compete };

const char* to_string(LockState s);
const char* to_string(Phase p);

/// Port -> win outcome, at most one entry per label.
class PortOutcomes {
 public:
  void insert(Port p, bool outcome) {
    has_.insert(p);
    if (outcome) value_.insert(p); else value_.erase(p);
  }
  void erase(Port p) { has_.erase(p); value_.erase(p); }
  void clear() { *this = PortOutcomes{}; }
  bool contains(Port p) const { return has_.contains(p); }
  bool outcome(Port p) const { return value_.contains(p); }
  int size() const { return has_.size(); }
  bool any_false() const { return !(has_ - value_).empty(); }
  PortSet ports() const { return has_; }
  PortSet true_ports() const { return value_; }
  bool operator==(const PortOutcomes&) const = default;

 private:
  PortSet has_;
  PortSet value_;
};

/// Port -> priority, at most one entry per label.
class PortPriorities {
 public:
  void insert(Port p, std::uint8_t priority) { has_.insert(p); priority_[p] = priority; }
  void erase(Port p) { has_.erase(p); priority_[p] = 0; }
  void clear() { *this = PortPriorities{}; }
  bool contains(Port p) const { return has_.contains(p); }
  std::uint8_t priority(Port p) const { return priority_[p]; }
  int size() const { return has_.size(); }
  PortSet ports() const { return has_; }
  /// Port holding the strictly highest priority, if exactly one does.
  std::optional<Port> unique_highest() const;
  bool operator==(const PortPriorities&) const = default;

 private:
  PortSet has_;
  std::array<std::uint8_t, kMaxDelta + 1> priority_{};
};

/// Local variables of one node. Default construction gives the initial
/// values: everything unset or empty.
struct NodeState {
  std::optional<Port> lock;  ///< nullopt = unlocked, 0 = self, l = locked via port l
  LockState state = LockState::None;
  Phase phase = Phase::None;
  PortSet L;  ///< ports to lock
  PortSet R;  ///< ports that answered ready / ack-lock / ack-unlock
  PortOutcomes W;
  PortSet H;  ///< on hold for the next competition
  PortSet A;  ///< applicants
  PortSet C;  ///< candidates
  PortPriorities P;

  bool operator==(const NodeState&) const = default;
};

enum class ActionId : std::uint8_t {
  InitLock,
  ReceivePrepare,
  ReceiveReady,
  CheckStart,
  CleanUpAction,
  ReceiveRequest,
  CheckPriorities,
  ReceiveWin,
  CheckWin,
  ReceiveSetLock,
  ReceiveAckLock,
  CheckDone,
  InitUnlock,
  ReceiveRelease,
  ReceiveAckUnlock,
  CheckUnlocked,
};

inline constexpr int kActionCount = 16;

const char* to_string(ActionId a);
/// Throws std::invalid_argument on unknown names.
ActionId parse_action(const std::string& name);

/// The Receive* action that consumes messages of this kind.
ActionId receive_action(MessageKind kind);
/// The message kind a Receive* action consumes; nullopt for other actions.
std::optional<MessageKind> consumed_kind(ActionId a);

class ActionSet {
 public:
  constexpr ActionSet() = default;
  void insert(ActionId a) { bits_ |= bit(a); }
  void erase(ActionId a) { bits_ &= ~bit(a); }
  bool contains(ActionId a) const { return bits_ & bit(a); }
  bool empty() const { return bits_ == 0; }
  std::uint16_t bits() const { return bits_; }
  ActionSet operator-(ActionSet o) const { ActionSet s; s.bits_ = bits_ & ~o.bits_; return s; }
  ActionSet operator|(ActionSet o) const { ActionSet s; s.bits_ = bits_ | o.bits_; return s; }
  bool operator==(const ActionSet&) const = default;
  std::vector<ActionId> to_vector() const;

 private:
  static constexpr std::uint16_t bit(ActionId a) { return static_cast<std::uint16_t>(1u << static_cast<int>(a)); }
  std::uint16_t bits_ = 0;
};

/// Bit i set iff a message of MessageKind i is receivable.
using KindMask = std::uint8_t;
inline KindMask kind_bit(MessageKind k) { return static_cast<KindMask>(1u << static_cast<int>(k)); }

enum class ApiResult : std::uint8_t { None, LockSucceeded, UnlockSucceeded, RequestRejected };
const char* to_string(ApiResult r);

using Send = std::pair<Port, Message>;

/// Outputs of one action execution. Sends made by the CleanUp helper at the
/// start of the action and sends made by the action body are kept apart; each
/// list holds at most one message per port.
struct Effects {
  std::vector<Send> cleanup_sends;
  std::vector<Send> sends;
  ApiResult api_result = ApiResult::None;
  PortSet locked;  ///< returned lock set (as port labels) with LockSucceeded

  /// Records a body send; throws ProtocolError on a second one to the same port.
  void send(Port p, const Message& m);
  void send_from_cleanup(Port p, const Message& m);
  std::size_t send_count() const { return cleanup_sends.size() + sends.size(); }
  bool operator==(const Effects&) const = default;
};

enum class ProtocolErrorCode { NotEnabled, DuplicateSend, BadMessage };

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ProtocolErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ProtocolErrorCode code() const { return code_; }

 private:
  ProtocolErrorCode code_;
};

struct Enablement {
  ActionSet enabled;
  /// Disabled now, enabled once CleanUp has processed the pending detections.
  ActionSet pre_enabled;
};

/// Guards of all actions. Receive* actions are enabled by message
/// availability alone; InitLock/InitUnlock by a pending API call.
ActionSet guards(const NodeState& s, KindMask available, bool lock_called, bool unlock_called);

Enablement enabled_actions(const NodeState& s, KindMask available, bool lock_called, bool unlock_called,
                           PortSet pending_detections);

/// Everything execute() needs besides the node state.
struct ActionContext {
  int k = 8;
  PortSet neighbor_ports;  ///< currently bound physical ports
  bool lock_called = false;
  bool unlock_called = false;
  /// Restricts InitLock to these ports (pair-only locking); N[u] otherwise.
  std::optional<PortSet> lock_target;
  /// A request from an applicant that arrives after the participant already
  /// decided is answered with a losing win at once. Off reproduces the
  /// plain rule, which can deadlock two crossing competitions.
  bool late_applicant_loses = true;
};

struct Incoming {
  Port port = 0;
  Message msg;
};

struct Transition {
  NodeState state;
  Effects effects;
};

/// The CleanUp helper: processes a detector snapshot, then promotes held
/// initiators once no candidates remain.
void clean_up(NodeState& s, PortSet snapshot, Effects& out);

std::uint8_t draw_priority(Rng& rng, int k);

/// Runs one action. Throws ProtocolError(NotEnabled) if the guard (or the
/// message kind for Receive*) does not hold on the pre-execution state.
Transition execute(const NodeState& s, ActionId a, PortSet snapshot, const std::optional<Incoming>& incoming,
                   Rng& rng, const ActionContext& ctx);

/// Allowed moves of the lock state machine (self-loops included).
bool legal_state_transition(LockState from, LockState to);

/// Fixed-width bit serialization of NodeState.
struct EncodedState {
  std::vector<std::uint8_t> bytes;
  std::size_t bits = 0;
};

std::size_t state_bits(int delta, int k);
EncodedState encode_state(const NodeState& s, int delta, int k);
NodeState decode_state(const EncodedState& e, int delta, int k);

}  // namespace lme
