#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mtscan/error.hpp"

// Little-endian primitives shared by the tensor and checkpoint containers.
namespace mtscan::le {

template <typename U>
void put(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

inline void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }

template <typename U>
U get(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("truncated " + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(get<std::uint64_t>(is, what));
}

}  // namespace mtscan::le
