#include "lme/ports.hpp"

#include <stdexcept>

namespace lme {

std::string to_string(PortSet s) {
  if (s.empty()) return "-";
  std::string out;
  s.for_each([&](Port p) {
    if (!out.empty()) out += ',';
    out += std::to_string(p);
  });
  return out;
}

PortSet parse_port_set(const std::string& text) {
  if (text == "-") return {};
  PortSet out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("bad port list: " + text);
    }
    const unsigned long p = std::stoul(item);
    if (p > static_cast<unsigned long>(kMaxDelta)) throw std::invalid_argument("port out of range: " + text);
    out.insert(static_cast<Port>(p));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace lme
