#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ccmcf/types.hpp"

namespace ccmcf {

/// SplitMix64 finalizer, used to mix stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a hash of a role name, so streams can be keyed by readable tags.
constexpr std::uint64_t role_tag(std::string_view role) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : role) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Keyed pseudo-random stream.
///
/// A stream is identified by a 64-bit key. Child streams are derived from
/// (key, tag) without consuming the parent, so the numbers any consumer sees
/// depend only on the derivation path and never on call order or on which
/// thread runs the work. Gaussian variates use Box-Muller on top of the
/// standardized mt19937_64 output, which keeps results identical across
/// standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key), engine_(mix64(key)) {}

  /// Stream for realization `index` of a run seeded with `master_seed`, role `role`.
  static RandomStream keyed(std::uint64_t master_seed, std::uint64_t index, std::string_view role) {
    return RandomStream(mix64(mix64(master_seed) ^ mix64(index + 0x632be59bd9b4e019ULL)) ^ role_tag(role));
  }

  [[nodiscard]] RandomStream fork(std::uint64_t tag) const { return RandomStream(mix64(key_ ^ mix64(tag))); }
  [[nodiscard]] RandomStream fork(std::string_view role) const { return fork(role_tag(role)); }

  [[nodiscard]] std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1].
  double uniform() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * kPi * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  /// Circular complex Gaussian with E|z|^2 = variance.
  Complex complex_gaussian(double variance = 1.0) {
    const double s = std::sqrt(0.5 * variance);
    const double re = gaussian();
    const double im = gaussian();
    return {s * re, s * im};
  }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ccmcf
