#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace tandem {

// FNV-1a 64-bit. Used for config digests, parameter digests and output
// digests in rollout reports. Not cryptographic; just a stable fingerprint.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

template <class T>
std::uint64_t fnv1a_value(const T& v, std::uint64_t h = kFnvOffset) {
  static_assert(std::is_trivially_copyable_v<T>);
  return fnv1a(&v, sizeof(T), h);
}

inline std::string hex_digest(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace tandem
