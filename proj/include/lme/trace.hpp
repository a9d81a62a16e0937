#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lme/protocol.hpp"
#include "lme/tvg.hpp"

namespace lme {

// Trace file format: one record per line, fields separated by single spaces.
//
//   # lme-trace v1 key=value ...                      (header, first line)
//   <round> <seq> CONNECT <u>:<pu> <v>:<pv>
//   <round> <seq> DISCONNECT <u>:<pu> <v>:<pv> lost=<n>
//   <round> <seq> API_CALL <u> LOCK [target=<ports>]
//   <round> <seq> API_CALL <u> UNLOCK
//   <round> <seq> DELIVERY <to> <port> <msg> <sender>.<exec>.<slot> <sent>
//   <round> <seq> ACTIVATION <u> <exec> <action> <start>-<end> D=<ports>
//                 cleanup=<sends> sends=<sends> result=<r> locked=<ports> dropped=<n>
//
// <ports> is a comma list or "-"; <sends> is "-" or comma-separated
// <port>:<msg>; <msg> is the message spelling from to_string(Message).
// A DELIVERY line always directly precedes the ACTIVATION that consumes it.
// Records are totally ordered by (round, seq).

enum class TraceKind { Connect, Disconnect, ApiCall, Delivery, Activation };
const char* to_string(TraceKind k);

struct ConnectRecord {
  NodeId u = 0;
  Port pu = 0;
  NodeId v = 0;
  Port pv = 0;
  bool operator==(const ConnectRecord&) const = default;
};

struct DisconnectRecord {
  NodeId u = 0;
  Port pu = 0;
  NodeId v = 0;
  Port pv = 0;
  std::size_t lost = 0;
  bool operator==(const DisconnectRecord&) const = default;
};

enum class ApiCall { Lock, Unlock };

struct ApiCallRecord {
  NodeId node = 0;
  ApiCall call = ApiCall::Lock;
  std::optional<PortSet> target;
  bool operator==(const ApiCallRecord&) const = default;
};

struct DeliveryRecord {
  NodeId node = 0;
  Port port = 0;
  Message msg;
  MessageId id;
  Round sent = 0;
  bool operator==(const DeliveryRecord&) const = default;
};

struct ActivationRecord {
  NodeId node = 0;
  std::uint64_t exec = 0;  ///< per-node execution index, from 0
  ActionId action = ActionId::CleanUpAction;
  Round start = 0;
  Round end = 0;  ///< inclusive; equals start in semi-synchronous mode
  PortSet detector;
  Effects effects;
  std::size_t dropped = 0;
  bool operator==(const ActivationRecord&) const = default;
};

struct TraceEvent {
  Round round = 0;
  std::uint64_t seq = 0;
  std::variant<ConnectRecord, DisconnectRecord, ApiCallRecord, DeliveryRecord, ActivationRecord> payload;

  TraceKind kind() const { return static_cast<TraceKind>(payload.index()); }
  bool operator==(const TraceEvent&) const = default;
};

using TraceHeader = std::vector<std::pair<std::string, std::string>>;

struct Trace {
  TraceHeader header;
  std::vector<TraceEvent> events;

  /// Header value, or nullopt if absent.
  std::optional<std::string> get(const std::string& key) const;
};

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::string format_header(const TraceHeader& header);
/// One line, without the trailing newline.
std::string format_event(const TraceEvent& e);
void append_event(std::string& out, const TraceEvent& e);

Trace parse_trace(std::istream& in);
Trace read_trace_file(const std::string& path);
void write_trace(std::ostream& out, const Trace& trace);

}  // namespace lme
