#pragma once

#include <cstdint>
#include <string>

namespace vplane {

inline constexpr const char* kVersion = "1.0.0";

// FNV-1a, used to fingerprint resolved configs in reproducibility stanzas.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string fnv1a64_hex(const std::string& s) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace vplane
