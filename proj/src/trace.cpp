#include "lme/trace.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace lme {

namespace {

constexpr std::string_view kHeaderTag = "# lme-trace v1";

void put_uint(std::string& out, std::uint64_t v) {
  char buf[24];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

void put_ports(std::string& out, PortSet s) {
  if (s.empty()) {
    out += '-';
    return;
  }
  bool first = true;
  s.for_each([&](Port p) {
    if (!first) out += ',';
    first = false;
    put_uint(out, p);
  });
}

void put_sends(std::string& out, const std::vector<Send>& sends) {
  if (sends.empty()) {
    out += '-';
    return;
  }
  for (std::size_t i = 0; i < sends.size(); ++i) {
    if (i) out += ',';
    put_uint(out, sends[i].first);
    out += ':';
    out += to_string(sends[i].second);
  }
}

void put_endpoint(std::string& out, NodeId u, Port p) {
  put_uint(out, u);
  out += ':';
  put_uint(out, p);
}

// ---- parsing helpers ----

struct LineParser {
  std::size_t line;
  std::vector<std::string> fields;

  [[noreturn]] void fail(const std::string& what) const { throw TraceParseError(line, what); }

  const std::string& at(std::size_t i) const {
    if (i >= fields.size()) fail("missing field " + std::to_string(i + 1));
    return fields[i];
  }

  static bool parse_u64(std::string_view s, std::uint64_t& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
  }

  std::uint64_t u64(std::string_view s) const {
    std::uint64_t v = 0;
    if (!parse_u64(s, v)) fail("expected number, got '" + std::string(s) + "'");
    return v;
  }

  Port port(std::string_view s) const {
    const auto v = u64(s);
    if (v > static_cast<std::uint64_t>(kMaxDelta)) fail("port out of range");
    return static_cast<Port>(v);
  }

  std::pair<NodeId, Port> endpoint(const std::string& s) const {
    const auto colon = s.find(':');
    if (colon == std::string::npos) fail("expected node:port, got '" + s + "'");
    return {static_cast<NodeId>(u64(std::string_view(s).substr(0, colon))),
            port(std::string_view(s).substr(colon + 1))};
  }

  std::string keyed(std::size_t i, const std::string& key) const {
    const std::string& f = at(i);
    if (f.rfind(key + "=", 0) != 0) fail("expected " + key + "=, got '" + f + "'");
    return f.substr(key.size() + 1);
  }

  PortSet ports(const std::string& s) const {
    try {
      return parse_port_set(s);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }

  Message message(const std::string& s) const {
    try {
      return parse_message(s);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }

  std::vector<Send> sends(const std::string& s) const {
    std::vector<Send> out;
    if (s == "-") return out;
    std::size_t pos = 0;
    while (true) {
      const auto comma = s.find(',', pos);
      const std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      const auto colon = item.find(':');
      if (colon == std::string::npos) fail("bad send '" + item + "'");
      out.emplace_back(port(std::string_view(item).substr(0, colon)), message(item.substr(colon + 1)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    return out;
  }
};

ApiResult parse_result(const LineParser& lp, const std::string& s) {
  for (ApiResult r : {ApiResult::None, ApiResult::LockSucceeded, ApiResult::UnlockSucceeded,
                      ApiResult::RequestRejected}) {
    if (s == to_string(r)) return r;
  }
  lp.fail("unknown result '" + s + "'");
}

TraceEvent parse_event(LineParser& lp) {
  TraceEvent e;
  e.round = lp.u64(lp.at(0));
  e.seq = lp.u64(lp.at(1));
  const std::string& kind = lp.at(2);
  if (kind == "CONNECT" || kind == "DISCONNECT") {
    const auto [u, pu] = lp.endpoint(lp.at(3));
    const auto [v, pv] = lp.endpoint(lp.at(4));
    if (kind == "CONNECT") {
      if (lp.fields.size() != 5) lp.fail("trailing fields");
      e.payload = ConnectRecord{u, pu, v, pv};
    } else {
      if (lp.fields.size() != 6) lp.fail("wrong field count");
      e.payload = DisconnectRecord{u, pu, v, pv, static_cast<std::size_t>(lp.u64(lp.keyed(5, "lost")))};
    }
  } else if (kind == "API_CALL") {
    ApiCallRecord r;
    r.node = static_cast<NodeId>(lp.u64(lp.at(3)));
    const std::string& call = lp.at(4);
    if (call == "LOCK") {
      r.call = ApiCall::Lock;
      if (lp.fields.size() == 6) r.target = lp.ports(lp.keyed(5, "target"));
      else if (lp.fields.size() != 5) lp.fail("wrong field count");
    } else if (call == "UNLOCK") {
      r.call = ApiCall::Unlock;
      if (lp.fields.size() != 5) lp.fail("wrong field count");
    } else {
      lp.fail("unknown api call '" + call + "'");
    }
    e.payload = r;
  } else if (kind == "DELIVERY") {
    if (lp.fields.size() != 8) lp.fail("wrong field count");
    DeliveryRecord r;
    r.node = static_cast<NodeId>(lp.u64(lp.at(3)));
    r.port = lp.port(lp.at(4));
    r.msg = lp.message(lp.at(5));
    const std::string& id = lp.at(6);
    const auto d1 = id.find('.');
    const auto d2 = id.find('.', d1 == std::string::npos ? 0 : d1 + 1);
    if (d1 == std::string::npos || d2 == std::string::npos) lp.fail("bad message id '" + id + "'");
    r.id.sender = static_cast<NodeId>(lp.u64(std::string_view(id).substr(0, d1)));
    r.id.exec = lp.u64(std::string_view(id).substr(d1 + 1, d2 - d1 - 1));
    r.id.slot = static_cast<std::uint32_t>(lp.u64(std::string_view(id).substr(d2 + 1)));
    r.sent = lp.u64(lp.at(7));
    e.payload = r;
  } else if (kind == "ACTIVATION") {
    if (lp.fields.size() != 13) lp.fail("wrong field count");
    ActivationRecord r;
    r.node = static_cast<NodeId>(lp.u64(lp.at(3)));
    r.exec = lp.u64(lp.at(4));
    try {
      r.action = parse_action(lp.at(5));
    } catch (const std::invalid_argument& ex) {
      lp.fail(ex.what());
    }
    const std::string& span = lp.at(6);
    const auto dash = span.find('-');
    if (dash == std::string::npos) lp.fail("bad span '" + span + "'");
    r.start = lp.u64(std::string_view(span).substr(0, dash));
    r.end = lp.u64(std::string_view(span).substr(dash + 1));
    r.detector = lp.ports(lp.keyed(7, "D"));
    r.effects.cleanup_sends = lp.sends(lp.keyed(8, "cleanup"));
    r.effects.sends = lp.sends(lp.keyed(9, "sends"));
    r.effects.api_result = parse_result(lp, lp.keyed(10, "result"));
    r.effects.locked = lp.ports(lp.keyed(11, "locked"));
    r.dropped = static_cast<std::size_t>(lp.u64(lp.keyed(12, "dropped")));
    e.payload = r;
  } else {
    lp.fail("unknown record kind '" + kind + "'");
  }
  return e;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string f;
  while (ss >> f) out.push_back(f);
  return out;
}

}  // namespace

const char* to_string(TraceKind k) {
  switch (k) {
    case TraceKind::Connect: return "CONNECT";
    case TraceKind::Disconnect: return "DISCONNECT";
    case TraceKind::ApiCall: return "API_CALL";
    case TraceKind::Delivery: return "DELIVERY";
    case TraceKind::Activation: return "ACTIVATION";
  }
  return "?";
}

std::optional<std::string> Trace::get(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string format_header(const TraceHeader& header) {
  std::string out(kHeaderTag);
  for (const auto& [k, v] : header) {
    out += ' ';
    out += k;
    out += '=';
    out += v;
  }
  return out;
}

void append_event(std::string& out, const TraceEvent& e) {
  put_uint(out, e.round);
  out += ' ';
  put_uint(out, e.seq);
  out += ' ';
  out += to_string(e.kind());
  out += ' ';
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ConnectRecord>) {
          put_endpoint(out, r.u, r.pu);
          out += ' ';
          put_endpoint(out, r.v, r.pv);
        } else if constexpr (std::is_same_v<T, DisconnectRecord>) {
          put_endpoint(out, r.u, r.pu);
          out += ' ';
          put_endpoint(out, r.v, r.pv);
          out += " lost=";
          put_uint(out, r.lost);
        } else if constexpr (std::is_same_v<T, ApiCallRecord>) {
          put_uint(out, r.node);
          out += r.call == ApiCall::Lock ? " LOCK" : " UNLOCK";
          if (r.target) {
            out += " target=";
            put_ports(out, *r.target);
          }
        } else if constexpr (std::is_same_v<T, DeliveryRecord>) {
          put_uint(out, r.node);
          out += ' ';
          put_uint(out, r.port);
          out += ' ';
          out += to_string(r.msg);
          out += ' ';
          put_uint(out, r.id.sender);
          out += '.';
          put_uint(out, r.id.exec);
          out += '.';
          put_uint(out, r.id.slot);
          out += ' ';
          put_uint(out, r.sent);
        } else {
          put_uint(out, r.node);
          out += ' ';
          put_uint(out, r.exec);
          out += ' ';
          out += to_string(r.action);
          out += ' ';
          put_uint(out, r.start);
          out += '-';
          put_uint(out, r.end);
          out += " D=";
          put_ports(out, r.detector);
          out += " cleanup=";
          put_sends(out, r.effects.cleanup_sends);
          out += " sends=";
          put_sends(out, r.effects.sends);
          out += " result=";
          out += to_string(r.effects.api_result);
          out += " locked=";
          put_ports(out, r.effects.locked);
          out += " dropped=";
          put_uint(out, r.dropped);
        }
      },
      e.payload);
}

std::string format_event(const TraceEvent& e) {
  std::string out;
  append_event(out, e);
  return out;
}

Trace parse_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (lineno != 1 || line.rfind(kHeaderTag, 0) != 0) throw TraceParseError(lineno, "unexpected header line");
      for (const auto& f : split(line.substr(kHeaderTag.size()))) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw TraceParseError(lineno, "bad header field '" + f + "'");
        trace.header.emplace_back(f.substr(0, eq), f.substr(eq + 1));
      }
      continue;
    }
    LineParser lp{lineno, split(line)};
    TraceEvent e = parse_event(lp);
    if (!trace.events.empty()) {
      const auto& prev = trace.events.back();
      if (e.round < prev.round || e.seq <= prev.seq) throw TraceParseError(lineno, "records out of order");
    }
    trace.events.push_back(std::move(e));
  }
  return trace;
}

Trace read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  return parse_trace(in);
}

void write_trace(std::ostream& out, const Trace& trace) {
  if (!trace.header.empty()) out << format_header(trace.header) << '\n';
  std::string line;
  for (const auto& e : trace.events) {
    line.clear();
    append_event(line, e);
    out << line << '\n';
  }
}

}  // namespace lme
