#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tilepress {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// 64-bit FNV-1a. Used for corruption detection and UID derivation only.
std::uint64_t fnv1a64(ByteView data);
inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(as_bytes(s)); }
// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

// Stateless 64-bit mixer (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

// Sequential splitmix64 generator; stable across platforms and compilers.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

std::string base64_encode(ByteView data);
// Throws std::invalid_argument on malformed input.
Bytes base64_decode(std::string_view text);

// Whole-file helpers. write_file_atomic writes a sibling temp file and renames
// it over `path`.
Bytes read_file(const std::string& path);
void write_file_atomic(const std::string& path, ByteView data);
inline void write_file_atomic(const std::string& path, std::string_view text) {
  write_file_atomic(path, as_bytes(text));
}

}  // namespace tilepress
