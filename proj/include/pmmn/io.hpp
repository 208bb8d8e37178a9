#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pmmn/tensor.hpp"

namespace pmmn::io {

// ---- little-endian binary primitives ----------------------------------------

template <typename T>
inline T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& os, double d) {
  write_u64(os, std::bit_cast<std::uint64_t>(d));
}
inline void write_string(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (!is || static_cast<std::size_t>(is.gcount()) != n) throw Error("unexpected end of file");
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v;
  read_exact(is, &v, sizeof v);
  return to_little(v);
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v;
  read_exact(is, &v, sizeof v);
  return to_little(v);
}
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }
inline std::string read_string(std::istream& is, std::size_t max_len = 1u << 24) {
  const std::uint32_t n = read_u32(is);
  if (n > max_len) throw Error("string field too long");
  std::string s(n, '\0');
  if (n > 0) read_exact(is, s.data(), n);
  return s;
}

// ---- hashing -----------------------------------------------------------------

/// FNV-1a 64-bit, fed with explicit little-endian encodings.
class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    v = to_little(v);
    bytes(&v, sizeof v);
  }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::uint64_t parse_hex64(const std::string& s) {
  std::size_t pos = 0;
  const std::uint64_t v = std::stoull(s, &pos, 16);
  if (pos != s.size()) throw Error("invalid hex value '" + s + "'");
  return v;
}

// ---- text helpers --------------------------------------------------------------

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits a CSV line on commas (no quoting support; fields are trimmed).
inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  return is;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  return os;
}

/// Shortest decimal text that reads back to the same double.
inline std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string fmt_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace pmmn::io
