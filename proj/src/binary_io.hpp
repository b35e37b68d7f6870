#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace dml::detail {

// Little-endian encoding independent of host byte order.

inline void put_u8(std::vector<std::byte>& out, std::uint8_t v) { out.push_back(static_cast<std::byte>(v)); }

template <typename U>
void put_le(std::vector<std::byte>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::vector<std::byte>& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_magic(std::vector<std::byte>& out, const char (&magic)[5]) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>(magic[i]));
}

template <typename U>
U get_le(std::span<const std::byte> in, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(std::to_integer<U>(in[offset + i])) << (8 * i);
  return v;
}

inline float get_f32(std::span<const std::byte> in, std::size_t offset) {
  return std::bit_cast<float>(get_le<std::uint32_t>(in, offset));
}

inline bool has_magic(std::span<const std::byte> in, const char (&magic)[5]) {
  if (in.size() < 4) return false;
  for (int i = 0; i < 4; ++i) {
    if (in[i] != static_cast<std::byte>(magic[i])) return false;
  }
  return true;
}

}  // namespace dml::detail
