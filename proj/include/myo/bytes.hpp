#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

// Little-endian field packing shared by the wire and file formats.
namespace myo::bytes {

template <typename T>
inline void put_le(std::uint8_t* out, T value) noexcept {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::uint8_t>(u >> (8 * i));
  }
}

template <typename T>
inline T get_le(const std::uint8_t* in) noexcept {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(in[i]) << (8 * i));
  }
  return static_cast<T>(u);
}

inline void put_f32(std::uint8_t* out, float v) noexcept {
  put_le(out, std::bit_cast<std::uint32_t>(v));
}

inline float get_f32(const std::uint8_t* in) noexcept {
  return std::bit_cast<float>(get_le<std::uint32_t>(in));
}

template <typename T>
inline void append_le(std::vector<std::uint8_t>& out, T value) {
  std::size_t at = out.size();
  out.resize(at + sizeof(T));
  put_le(out.data() + at, value);
}

inline void append_f32(std::vector<std::uint8_t>& out, float v) {
  append_le(out, std::bit_cast<std::uint32_t>(v));
}

inline void append_f64(std::vector<std::uint8_t>& out, double v) {
  append_le(out, std::bit_cast<std::uint64_t>(v));
}

inline double get_f64(const std::uint8_t* in) noexcept {
  return std::bit_cast<double>(get_le<std::uint64_t>(in));
}

std::uint32_t crc32(std::span<const std::uint8_t> data) noexcept;

}  // namespace myo::bytes
