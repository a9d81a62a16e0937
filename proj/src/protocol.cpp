#include "lme/protocol.hpp"

#include <algorithm>
#include <string_view>

namespace lme {

namespace {

constexpr std::array<std::string_view, kActionCount> kActionNames = {
    "InitLock",       "ReceivePrepare", "ReceiveReady",  "CheckStart",
    "CleanUpAction",  "ReceiveRequest", "CheckPriorities", "ReceiveWin",
    "CheckWin",       "ReceiveSetLock", "ReceiveAckLock", "CheckDone",
    "InitUnlock",     "ReceiveRelease", "ReceiveAckUnlock", "CheckUnlocked"};

void require_unique(const std::vector<Send>& sends, Port p) {
  for (const auto& [port, m] : sends) {
    if (port == p) {
      throw ProtocolError(ProtocolErrorCode::DuplicateSend, "second send on port " + std::to_string(p));
    }
  }
}

void send_to_all(Effects& out, PortSet ports, const Message& m) {
  ports.for_each([&](Port p) { out.send(p, m); });
}

[[noreturn]] void not_enabled(ActionId a) {
  throw ProtocolError(ProtocolErrorCode::NotEnabled, std::string(to_string(a)) + " is not enabled");
}

}  // namespace

const char* to_string(LockState s) {
  switch (s) {
    case LockState::None: return "NONE";
    case LockState::Prepare: return "PREPARE";
    case LockState::Compete: return "COMPETE";
    case LockState::Win: return "WIN";
    case LockState::Locked: return "LOCKED";
    case LockState::Unlock: return "UNLOCK";
  }
  return "?";
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::None: return "NONE";
    case Phase::Prepare: return "PREPARE";
    case Phase::Compete: return "COMPETE";
  }
  return "?";
}

const char* to_string(ActionId a) { return kActionNames[static_cast<int>(a)].data(); }

ActionId parse_action(const std::string& name) {
  for (int i = 0; i < kActionCount; ++i) {
    if (kActionNames[i] == name) return static_cast<ActionId>(i);
  }
  throw std::invalid_argument("unknown action: " + name);
}

const char* to_string(ApiResult r) {
  switch (r) {
    case ApiResult::None: return "NONE";
    case ApiResult::LockSucceeded: return "LOCKED";
    case ApiResult::UnlockSucceeded: return "UNLOCKED";
    case ApiResult::RequestRejected: return "REJECTED";
  }
  return "?";
}

ActionId receive_action(MessageKind kind) {
  switch (kind) {
    case MessageKind::Prepare: return ActionId::ReceivePrepare;
    case MessageKind::Ready: return ActionId::ReceiveReady;
    case MessageKind::RequestLock: return ActionId::ReceiveRequest;
    case MessageKind::Win: return ActionId::ReceiveWin;
    case MessageKind::SetLock: return ActionId::ReceiveSetLock;
    case MessageKind::AckLock: return ActionId::ReceiveAckLock;
    case MessageKind::ReleaseLock: return ActionId::ReceiveRelease;
    case MessageKind::AckUnlock: return ActionId::ReceiveAckUnlock;
  }
  throw std::invalid_argument("bad message kind");
}

std::optional<MessageKind> consumed_kind(ActionId a) {
  switch (a) {
    case ActionId::ReceivePrepare: return MessageKind::Prepare;
    case ActionId::ReceiveReady: return MessageKind::Ready;
    case ActionId::ReceiveRequest: return MessageKind::RequestLock;
    case ActionId::ReceiveWin: return MessageKind::Win;
    case ActionId::ReceiveSetLock: return MessageKind::SetLock;
    case ActionId::ReceiveAckLock: return MessageKind::AckLock;
    case ActionId::ReceiveRelease: return MessageKind::ReleaseLock;
    case ActionId::ReceiveAckUnlock: return MessageKind::AckUnlock;
    default: return std::nullopt;
  }
}

std::vector<ActionId> ActionSet::to_vector() const {
  std::vector<ActionId> out;
  for (int i = 0; i < kActionCount; ++i) {
    if (bits_ & (1u << i)) out.push_back(static_cast<ActionId>(i));
  }
  return out;
}

std::optional<Port> PortPriorities::unique_highest() const {
  std::optional<Port> best;
  int best_priority = -1;
  bool tied = false;
  has_.for_each([&](Port p) {
    const int pr = priority_[p];
    if (pr > best_priority) {
      best_priority = pr;
      best = p;
      tied = false;
    } else if (pr == best_priority) {
      tied = true;
    }
  });
  if (tied) return std::nullopt;
  return best;
}

void Effects::send(Port p, const Message& m) {
  require_unique(sends, p);
  sends.emplace_back(p, m);
}

void Effects::send_from_cleanup(Port p, const Message& m) {
  require_unique(cleanup_sends, p);
  cleanup_sends.emplace_back(p, m);
}

ActionSet guards(const NodeState& s, KindMask available, bool lock_called, bool unlock_called) {
  ActionSet out;
  if (lock_called) out.insert(ActionId::InitLock);
  if (unlock_called) out.insert(ActionId::InitUnlock);
  for (int k = 0; k < kMessageKindCount; ++k) {
    if (available & (1u << k)) out.insert(receive_action(static_cast<MessageKind>(k)));
  }
  if (s.state == LockState::Prepare && s.R == s.L) out.insert(ActionId::CheckStart);
  if (s.phase != Phase::None || s.state == LockState::Unlock) out.insert(ActionId::CleanUpAction);
  if (s.phase == Phase::Compete && s.C.size() == s.P.size()) out.insert(ActionId::CheckPriorities);
  if (s.state == LockState::Compete && s.W.size() == s.L.size()) out.insert(ActionId::CheckWin);
  if (s.state == LockState::Win && s.R == s.L) out.insert(ActionId::CheckDone);
  if (s.state == LockState::Unlock && s.R == s.L) out.insert(ActionId::CheckUnlocked);
  return out;
}

Enablement enabled_actions(const NodeState& s, KindMask available, bool lock_called, bool unlock_called,
                           PortSet pending_detections) {
  Enablement e;
  e.enabled = guards(s, available, lock_called, unlock_called);
  NodeState cleaned = s;
  Effects scratch;
  clean_up(cleaned, pending_detections, scratch);
  e.pre_enabled = guards(cleaned, available, lock_called, unlock_called) - e.enabled;
  // A check waiting only on a vanished neighbor must not hinge on an
  // unrelated action happening to be enabled.
  e.pre_enabled.erase(ActionId::CleanUpAction);
  if (!e.pre_enabled.empty()) e.enabled.insert(ActionId::CleanUpAction);
  return e;
}

void clean_up(NodeState& s, PortSet snapshot, Effects& out) {
  snapshot.erase(kSelfPort);
  snapshot.for_each([&](Port l) {
    if (s.lock == l) s.lock.reset();
    s.L.erase(l);
    s.R.erase(l);
    s.W.erase(l);
    s.H.erase(l);
    s.A.erase(l);
    s.C.erase(l);
    s.P.erase(l);
  });
  if (s.C.empty()) {
    s.H.for_each([&](Port l) { out.send_from_cleanup(l, Message::ready()); });
    s.A |= s.H;
    s.H = PortSet{};
    s.phase = s.A.empty() ? Phase::None : Phase::Prepare;
  }
}

std::uint8_t draw_priority(Rng& rng, int k) {
  return static_cast<std::uint8_t>(uniform_below(rng, static_cast<std::uint64_t>(k)));
}

Transition execute(const NodeState& s, ActionId a, PortSet snapshot, const std::optional<Incoming>& incoming,
                   Rng& rng, const ActionContext& ctx) {
  const auto kind = consumed_kind(a);
  if (kind) {
    if (!incoming || incoming->msg.kind != *kind) not_enabled(a);
  } else {
    if (incoming) throw ProtocolError(ProtocolErrorCode::BadMessage, std::string(to_string(a)) + " takes no message");
    const KindMask none = 0;
    const bool ok = a == ActionId::CleanUpAction
                        ? enabled_actions(s, none, ctx.lock_called, ctx.unlock_called, snapshot).enabled.contains(a)
                        : guards(s, none, ctx.lock_called, ctx.unlock_called).contains(a);
    if (!ok) not_enabled(a);
  }

  Transition t{s, {}};
  NodeState& n = t.state;
  Effects& out = t.effects;
  const Port from = incoming ? incoming->port : kSelfPort;

  switch (a) {
    case ActionId::InitLock:
      clean_up(n, snapshot, out);
      if (n.state != LockState::None) {
        out.api_result = ApiResult::RequestRejected;
        break;
      }
      n.state = LockState::Prepare;
      if (ctx.lock_target) {
        n.L = (*ctx.lock_target & ctx.neighbor_ports) - snapshot;
      } else {
        n.L = ctx.neighbor_ports;
      }
      n.L.insert(kSelfPort);
      send_to_all(out, n.L, Message::prepare());
      break;

    case ActionId::ReceivePrepare:
      clean_up(n, snapshot, out);
      if (n.phase == Phase::Compete) {
        n.H.insert(from);
      } else {
        n.A.insert(from);
        n.phase = Phase::Prepare;
        out.send(from, Message::ready());
      }
      break;

    case ActionId::ReceiveReady:
    case ActionId::ReceiveAckLock:
    case ActionId::ReceiveAckUnlock:
      clean_up(n, snapshot, out);
      n.R.insert(from);
      break;

    case ActionId::CheckStart: {
      clean_up(n, snapshot, out);
      n.state = LockState::Compete;
      n.R = PortSet{};
      n.W.clear();
      const auto p = draw_priority(rng, ctx.k);
      send_to_all(out, n.L, Message::request_lock(p));
      break;
    }

    case ActionId::CleanUpAction:
      clean_up(n, snapshot, out);
      break;

    case ActionId::ReceiveRequest:
      clean_up(n, snapshot, out);
      n.phase = Phase::Compete;
      if (n.A.contains(from)) {
        n.A.erase(from);
        // Candidates without a priority mean a decision is already out.
        // A late applicant lost that decision and must retry.
        const bool decided = ctx.late_applicant_loses && !(n.C - n.P.ports()).empty();
        n.C.insert(from);
        if (decided) {
          out.send(from, Message::win(false));
          break;
        }
      }
      n.P.insert(from, incoming->msg.priority);
      break;

    case ActionId::CheckPriorities: {
      clean_up(n, snapshot, out);
      const auto winner = n.P.unique_highest();
      if (!n.lock && winner) {
        out.send(*winner, Message::win(true));
        (n.C - PortSet{*winner}).for_each([&](Port l) { out.send(l, Message::win(false)); });
      } else {
        send_to_all(out, n.C, Message::win(false));
      }
      n.P.clear();
      break;
    }

    case ActionId::ReceiveWin:
      clean_up(n, snapshot, out);
      n.W.insert(from, incoming->msg.outcome);
      break;

    case ActionId::CheckWin:
      clean_up(n, snapshot, out);
      if (n.W.any_false()) {
        const auto p = draw_priority(rng, ctx.k);
        send_to_all(out, n.L, Message::request_lock(p));
      } else {
        n.state = LockState::Win;
        n.R = PortSet{};
        send_to_all(out, n.L, Message::set_lock());
      }
      n.W.clear();
      break;

    case ActionId::ReceiveSetLock:
      n.lock = from;
      n.C.erase(from);
      clean_up(n, snapshot, out);
      out.send(from, Message::ack_lock());
      break;

    case ActionId::CheckDone:
      clean_up(n, snapshot, out);
      n.state = LockState::Locked;
      n.R = PortSet{};
      out.api_result = ApiResult::LockSucceeded;
      out.locked = n.L;
      break;

    case ActionId::InitUnlock:
      clean_up(n, snapshot, out);
      if (n.state != LockState::Locked) {
        out.api_result = ApiResult::RequestRejected;
        break;
      }
      n.state = LockState::Unlock;
      n.R = PortSet{};
      send_to_all(out, n.L, Message::release_lock());
      break;

    case ActionId::ReceiveRelease:
      clean_up(n, snapshot, out);
      n.lock.reset();
      out.send(from, Message::ack_unlock());
      break;

    case ActionId::CheckUnlocked:
      clean_up(n, snapshot, out);
      n.state = LockState::None;
      n.R = PortSet{};
      out.api_result = ApiResult::UnlockSucceeded;
      break;
  }
  return t;
}

bool legal_state_transition(LockState from, LockState to) {
  if (from == to) return true;
  switch (from) {
    case LockState::None: return to == LockState::Prepare;
    case LockState::Prepare: return to == LockState::Compete;
    case LockState::Compete: return to == LockState::Win;
    case LockState::Win: return to == LockState::Locked;
    case LockState::Locked: return to == LockState::Unlock;
    case LockState::Unlock: return to == LockState::None;
  }
  return false;
}

// ---- state codec ---------------------------------------------------------

namespace {

int bits_for(int values) {
  int b = 0;
  while ((1 << b) < values) ++b;
  return b;
}

class BitWriter {
 public:
  void put(std::uint32_t value, int width) {
    for (int i = 0; i < width; ++i) {
      if (bits_ % 8 == 0) bytes_.push_back(0);
      if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(1u << (bits_ % 8));
      ++bits_;
    }
  }
  EncodedState finish() { return {std::move(bytes_), bits_}; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t bits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const EncodedState& e) : e_(e) {}
  std::uint32_t get(int width) {
    std::uint32_t v = 0;
    for (int i = 0; i < width; ++i) {
      if (pos_ >= e_.bits) throw std::invalid_argument("encoded state truncated");
      if ((e_.bytes[pos_ / 8] >> (pos_ % 8)) & 1u) v |= 1u << i;
      ++pos_;
    }
    return v;
  }

 private:
  const EncodedState& e_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t state_bits(int delta, int k) {
  const int set_width = delta + 1;
  return static_cast<std::size_t>(bits_for(delta + 2) + 3 + 2 + 5 * set_width + 2 * set_width + set_width +
                                  set_width * priority_bits(k));
}

EncodedState encode_state(const NodeState& s, int delta, int k) {
  const int set_width = delta + 1;
  const int pbits = priority_bits(k);
  BitWriter w;
  w.put(s.lock ? *s.lock + 1u : 0u, bits_for(delta + 2));
  w.put(static_cast<std::uint32_t>(s.state), 3);
  w.put(static_cast<std::uint32_t>(s.phase), 2);
  for (PortSet set : {s.L, s.R, s.H, s.A, s.C}) w.put(set.bits(), set_width);
  w.put(s.W.ports().bits(), set_width);
  w.put(s.W.true_ports().bits(), set_width);
  w.put(s.P.ports().bits(), set_width);
  for (int p = 0; p <= delta; ++p) w.put(s.P.priority(static_cast<Port>(p)), pbits);
  return w.finish();
}

NodeState decode_state(const EncodedState& e, int delta, int k) {
  const int set_width = delta + 1;
  const int pbits = priority_bits(k);
  BitReader r(e);
  NodeState s;
  const auto lock = r.get(bits_for(delta + 2));
  if (lock != 0) s.lock = static_cast<Port>(lock - 1);
  s.state = static_cast<LockState>(r.get(3));
  s.phase = static_cast<Phase>(r.get(2));
  for (PortSet* set : {&s.L, &s.R, &s.H, &s.A, &s.C}) *set = PortSet(r.get(set_width));
  const PortSet w_has(r.get(set_width));
  const PortSet w_true(r.get(set_width));
  w_has.for_each([&](Port p) { s.W.insert(p, w_true.contains(p)); });
  const PortSet p_has(r.get(set_width));
  for (int p = 0; p <= delta; ++p) {
    const auto pr = static_cast<std::uint8_t>(r.get(pbits));
    if (p_has.contains(static_cast<Port>(p))) s.P.insert(static_cast<Port>(p), pr);
  }
  return s;
}

}  // namespace lme
