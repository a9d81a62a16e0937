#include <doctest.h>

#include <stdexcept>

#include "lme/message.hpp"
#include "lme/ports.hpp"

using namespace lme;

TEST_CASE("port sets") {
  PortSet s{0, 3, 5};
  CHECK(s.contains(0));
  CHECK(s.contains(5));
  CHECK_FALSE(s.contains(1));
  CHECK(s.size() == 3);
  CHECK(s.lowest() == 0);
  CHECK((s - PortSet{0}).lowest() == 3);
  CHECK((s & PortSet{3, 4}) == PortSet{3});
  CHECK((s | PortSet{1}).size() == 4);
  CHECK(s.to_vector() == std::vector<Port>{0, 3, 5});
  s.erase(3);
  CHECK(s == PortSet{0, 5});
  CHECK(PortSet{}.empty());
}

TEST_CASE("port set text") {
  CHECK(to_string(PortSet{}) == "-");
  CHECK(to_string(PortSet{0, 2, 31}) == "0,2,31");
  CHECK(parse_port_set("0,2,31") == PortSet{0, 2, 31});
  CHECK(parse_port_set("-").empty());
  CHECK_THROWS_AS(parse_port_set(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_port_set("1,,2"), std::invalid_argument);
  CHECK_THROWS_AS(parse_port_set("32"), std::invalid_argument);
  CHECK_THROWS_AS(parse_port_set("a"), std::invalid_argument);
}

TEST_CASE("message text round trip") {
  const Message all[] = {Message::prepare(),     Message::ready(),        Message::request_lock(0),
                         Message::request_lock(7), Message::win(true),    Message::win(false),
                         Message::set_lock(),    Message::ack_lock(),     Message::release_lock(),
                         Message::ack_unlock()};
  for (const Message& m : all) CHECK(parse_message(to_string(m)) == m);
  CHECK(to_string(Message::request_lock(5)) == "REQUEST_LOCK/5");
  CHECK(to_string(Message::win(true)) == "WIN/1");
  CHECK_THROWS_AS(parse_message("WIN"), std::invalid_argument);
  CHECK_THROWS_AS(parse_message("READY/1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_message("HELLO"), std::invalid_argument);
}

TEST_CASE("wire format widths") {
  CHECK(priority_bits(1) == 0);
  CHECK(priority_bits(2) == 1);
  CHECK(priority_bits(8) == 3);
  CHECK(priority_bits(9) == 4);
  CHECK(wire_bits(8) == 7);
  // kind 3 bits + outcome 1 bit + priority.
  for (int k : {1, 2, 3, 8, 16, 100, 256}) CHECK(wire_bits(k) == 4 + priority_bits(k));
}

TEST_CASE("wire encoding round trip and layout") {
  const int k = 8;
  for (int kind = 0; kind < kMessageKindCount; ++kind) {
    Message m;
    m.kind = static_cast<MessageKind>(kind);
    if (m.kind == MessageKind::RequestLock) {
      for (int p = 0; p < k; ++p) {
        m.priority = static_cast<std::uint8_t>(p);
        const auto code = encode_wire(m, k);
        CHECK(code < (1u << wire_bits(k)));
        CHECK(decode_wire(code, k) == m);
      }
    } else if (m.kind == MessageKind::Win) {
      for (bool b : {false, true}) {
        m.outcome = b;
        CHECK(decode_wire(encode_wire(m, k), k) == m);
      }
    } else {
      CHECK(decode_wire(encode_wire(m, k), k) == m);
    }
  }
  CHECK(encode_wire(Message::request_lock(5), 8) == (2u | (5u << 4)));
  CHECK(encode_wire(Message::win(true), 8) == (3u | 8u));
  CHECK_THROWS_AS(encode_wire(Message::request_lock(8), 8), std::invalid_argument);
  CHECK_THROWS_AS(decode_wire(1u << 7, 8), std::invalid_argument);
  CHECK_THROWS_AS(decode_wire(0u | 8u, 8), std::invalid_argument);  // outcome bit on PREPARE
}
