#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

namespace lme {

using NodeId = std::uint32_t;
using Round = std::uint64_t;

/// Local port label. 0 is the loopback port; 1..delta are physical ports.
using Port = std::uint8_t;

inline constexpr Port kSelfPort = 0;
inline constexpr int kMaxDelta = 31;

/// Set of port labels in {0..kMaxDelta}, stored as a bit register.
class PortSet {
 public:
  constexpr PortSet() = default;
  constexpr explicit PortSet(std::uint32_t bits) : bits_(bits) {}
  PortSet(std::initializer_list<Port> ports) {
    for (Port p : ports) insert(p);
  }

  constexpr bool contains(Port p) const { return (bits_ >> p) & 1u; }
  constexpr void insert(Port p) { bits_ |= (1u << p); }
  constexpr void erase(Port p) { bits_ &= ~(1u << p); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const { return std::popcount(bits_); }
  constexpr std::uint32_t bits() const { return bits_; }

  constexpr PortSet operator|(PortSet o) const { return PortSet(bits_ | o.bits_); }
  constexpr PortSet operator&(PortSet o) const { return PortSet(bits_ & o.bits_); }
  constexpr PortSet operator-(PortSet o) const { return PortSet(bits_ & ~o.bits_); }
  constexpr PortSet& operator|=(PortSet o) { bits_ |= o.bits_; return *this; }
  constexpr PortSet& operator&=(PortSet o) { bits_ &= o.bits_; return *this; }
  constexpr PortSet& operator-=(PortSet o) { bits_ &= ~o.bits_; return *this; }
  constexpr bool operator==(const PortSet&) const = default;

  /// Ports in increasing order.
  std::vector<Port> to_vector() const {
    std::vector<Port> out;
    for (std::uint32_t b = bits_; b != 0; b &= b - 1) {
      out.push_back(static_cast<Port>(std::countr_zero(b)));
    }
    return out;
  }

  template <typename F>
  void for_each(F&& f) const {
    for (std::uint32_t b = bits_; b != 0; b &= b - 1) {
      f(static_cast<Port>(std::countr_zero(b)));
    }
  }

  /// Lowest member; undefined on empty sets.
  Port lowest() const { return static_cast<Port>(std::countr_zero(bits_)); }

 private:
  std::uint32_t bits_ = 0;
};

/// Comma-separated port list, "-" when empty.
std::string to_string(PortSet s);
/// Inverse of to_string. Throws std::invalid_argument on malformed input.
PortSet parse_port_set(const std::string& text);

}  // namespace lme
