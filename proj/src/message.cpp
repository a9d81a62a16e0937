#include "lme/message.hpp"

#include <array>
#include <stdexcept>
#include <string_view>

namespace lme {

namespace {

constexpr std::array<std::string_view, kMessageKindCount> kKindNames = {
    "PREPARE", "READY", "REQUEST_LOCK", "WIN", "SET_LOCK", "ACK_LOCK", "RELEASE_LOCK", "ACK_UNLOCK"};

}  // namespace

const char* kind_name(MessageKind kind) {
  return kKindNames[static_cast<int>(kind)].data();
}

std::string to_string(const Message& m) {
  std::string out(kind_name(m.kind));
  if (m.kind == MessageKind::RequestLock) {
    out += '/';
    out += std::to_string(m.priority);
  } else if (m.kind == MessageKind::Win) {
    out += m.outcome ? "/1" : "/0";
  }
  return out;
}

Message parse_message(const std::string& text) {
  const auto slash = text.find('/');
  const std::string_view name = std::string_view(text).substr(0, slash);
  for (int i = 0; i < kMessageKindCount; ++i) {
    if (kKindNames[i] != name) continue;
    Message m;
    m.kind = static_cast<MessageKind>(i);
    const bool has_arg = m.kind == MessageKind::RequestLock || m.kind == MessageKind::Win;
    if (has_arg != (slash != std::string::npos)) {
      throw std::invalid_argument("bad message argument: " + text);
    }
    if (!has_arg) return m;
    const std::string arg = text.substr(slash + 1);
    if (arg.empty() || arg.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("bad message argument: " + text);
    }
    const unsigned long v = std::stoul(arg);
    if (m.kind == MessageKind::Win) {
      if (v > 1) throw std::invalid_argument("bad win outcome: " + text);
      m.outcome = v == 1;
    } else {
      if (v > 255) throw std::invalid_argument("priority out of range: " + text);
      m.priority = static_cast<std::uint8_t>(v);
    }
    return m;
  }
  throw std::invalid_argument("unknown message kind: " + text);
}

int priority_bits(int k) {
  if (k < 1) throw std::invalid_argument("K must be positive");
  int bits = 0;
  while ((1 << bits) < k) ++bits;
  return bits;
}

int wire_bits(int k) { return 4 + priority_bits(k); }

std::uint32_t encode_wire(const Message& m, int k) {
  std::uint32_t code = static_cast<std::uint32_t>(m.kind) & 0x7u;
  if (m.kind == MessageKind::Win && m.outcome) code |= 1u << 3;
  if (m.kind == MessageKind::RequestLock) {
    if (m.priority >= k) throw std::invalid_argument("priority out of range");
    code |= static_cast<std::uint32_t>(m.priority) << 4;
  }
  return code;
}

Message decode_wire(std::uint32_t code, int k) {
  const int width = wire_bits(k);
  if (width < 32 && (code >> width) != 0) throw std::invalid_argument("wire code too wide");
  Message m;
  m.kind = static_cast<MessageKind>(code & 0x7u);
  const bool outcome = (code >> 3) & 1u;
  const std::uint32_t priority = code >> 4;
  if (m.kind == MessageKind::Win) {
    m.outcome = outcome;
  } else if (outcome) {
    throw std::invalid_argument("outcome bit set on non-win message");
  }
  if (m.kind == MessageKind::RequestLock) {
    if (priority >= static_cast<std::uint32_t>(k)) throw std::invalid_argument("priority out of range");
    m.priority = static_cast<std::uint8_t>(priority);
  } else if (priority != 0) {
    throw std::invalid_argument("priority bits set on non-request message");
  }
  return m;
}

}  // namespace lme
