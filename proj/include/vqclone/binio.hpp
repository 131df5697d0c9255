#pragma once

#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "vqclone/common.hpp"
#include "vqclone/tensor.hpp"

namespace vqclone::binio {

// Explicit little-endian encoding; file formats stay byte-stable across
// hosts regardless of native order.

inline void put_u64(std::ostream& o, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ConfigError("unexpected end of binary stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& o, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(o, bits);
}

inline double get_f64(std::istream& in) {
  std::uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void put_string(std::ostream& o, const std::string& s) {
  put_u64(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  std::uint64_t n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ConfigError("unexpected end of binary stream");
  return s;
}

inline void put_tensor(std::ostream& o, const Tensor& t) {
  put_u64(o, t.rows());
  put_u64(o, t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(o, t[i]);
}

inline Tensor get_tensor(std::istream& in) {
  std::uint64_t r = get_u64(in);
  std::uint64_t c = get_u64(in);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(in);
  return t;
}

}  // namespace vqclone::binio
