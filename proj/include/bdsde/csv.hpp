#pragma once

#include <charconv>
#include <cmath>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace bdsde::csv {

/// Shortest round-trip decimal form; identical bits give identical text.
inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string num(std::size_t x) { return std::to_string(x); }
inline std::string num(int x) { return std::to_string(x); }
inline std::string num(std::uint64_t x, int) { return std::to_string(x); }

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class Writer {
 public:
  Writer(std::ostream& os, std::initializer_list<std::string_view> header) : os_(os) {
    bool first = true;
    for (auto h : header) {
      os_ << (first ? "" : ",") << h;
      first = false;
    }
    os_ << '\n';
  }
  Writer(std::ostream& os, const std::vector<std::string>& header) : os_(os) {
    for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
    os_ << '\n';
  }

  Writer& cell(const std::string& s) {
    os_ << (first_ ? "" : ",") << quote(s);
    first_ = false;
    return *this;
  }
  Writer& cell(const char* s) { return cell(std::string(s)); }
  Writer& cell(double x) { return cell(num(x)); }
  Writer& cell(std::size_t x) { return cell(num(x)); }
  Writer& cell(int x) { return cell(num(x)); }
  void end_row() {
    os_ << '\n';
    first_ = true;
  }

 private:
  std::ostream& os_;
  bool first_ = true;
};

}  // namespace bdsde::csv
