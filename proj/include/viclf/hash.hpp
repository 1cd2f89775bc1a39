#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace viclf {

/// Incremental 64-bit FNV-1a, used for weight, dataset and config hashes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= bytes[i];
      state_ *= 1099511628211ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 1469598103934665603ULL;
};

/// splitmix64 finalizer; derives independent per-sample seeds from counters.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace viclf
