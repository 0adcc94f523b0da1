#include "icl/error.hpp"

namespace icl {

std::string quote_for_error(const std::string& text, std::size_t max_len) {
  std::string out = "\"";
  std::size_t n = 0;
  for (char c : text) {
    if (n++ == max_len) {
      out += "...";
      break;
    }
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  out += '"';
  return out;
}

}  // namespace icl
