#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <type_traits>
#include <vector>

namespace bapm::bytes {

// Little-endian encode/decode of trivially copyable scalars.
template <class T>
void put(std::vector<unsigned char>& buf, std::size_t offset, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  if (buf.size() < offset + sizeof(T)) buf.resize(offset + sizeof(T));
  std::memcpy(buf.data() + offset, raw, sizeof(T));
}

template <class T>
void append(std::vector<unsigned char>& buf, T value) {
  put(buf, buf.size(), value);
}

template <class T>
T get(std::span<const unsigned char> buf, std::size_t offset) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, buf.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace bapm::bytes
