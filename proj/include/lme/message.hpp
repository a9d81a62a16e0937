#pragma once

#include <cstdint>
#include <string>

namespace lme {

enum class MessageKind : std::uint8_t {
  Prepare = 0,
  Ready = 1,
  RequestLock = 2,
  Win = 3,
  SetLock = 4,
  AckLock = 5,
  ReleaseLock = 6,
  AckUnlock = 7,
};

inline constexpr int kMessageKindCount = 8;

/// Protocol message. `priority` is meaningful only for RequestLock and
/// `outcome` only for Win; both are zero otherwise.
struct Message {
  MessageKind kind = MessageKind::Prepare;
  std::uint8_t priority = 0;
  bool outcome = false;

  static Message prepare() { return {MessageKind::Prepare, 0, false}; }
  static Message ready() { return {MessageKind::Ready, 0, false}; }
  static Message request_lock(std::uint8_t p) { return {MessageKind::RequestLock, p, false}; }
  static Message win(bool b) { return {MessageKind::Win, 0, b}; }
  static Message set_lock() { return {MessageKind::SetLock, 0, false}; }
  static Message ack_lock() { return {MessageKind::AckLock, 0, false}; }
  static Message release_lock() { return {MessageKind::ReleaseLock, 0, false}; }
  static Message ack_unlock() { return {MessageKind::AckUnlock, 0, false}; }

  bool operator==(const Message&) const = default;
};

const char* kind_name(MessageKind kind);

/// Trace spelling: KIND, REQUEST_LOCK/p or WIN/0|1.
std::string to_string(const Message& m);
/// Throws std::invalid_argument on malformed text.
Message parse_message(const std::string& text);

// Wire format, least significant bit first:
//   bits 0..2  kind code (MessageKind value)
//   bit  3     win outcome
//   bits 4..   priority, priority_bits(k) wide
// The encoded width depends only on K, never on the port count.

/// ceil(log2(k)); 0 when k == 1.
int priority_bits(int k);
/// Total encoded width in bits for priority range k.
int wire_bits(int k);

std::uint32_t encode_wire(const Message& m, int k);
/// Throws std::invalid_argument if the code has bits beyond wire_bits(k) or
/// the priority is out of range.
Message decode_wire(std::uint32_t code, int k);

}  // namespace lme
