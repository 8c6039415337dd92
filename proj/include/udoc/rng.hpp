#pragma once

#include <cmath>
#include <cstdint>

#include "udoc/types.hpp"

namespace udoc {

// Counter-based splitmix64 stream. Every random decision in the project is
// derived from a (seed, salt-path) pair, so any point in a run can be
// reproduced without replaying the stream and without platform-dependent
// std::random distributions.
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed + kGolden)) {}

  // Independent substream; does not disturb this stream's counter.
  [[nodiscard]] Rng child(std::uint64_t salt) const {
    Rng r(0);
    r.state_ = mix64(state_ ^ mix64(salt + kGolden));
    return r;
  }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix64(state_);
  }

  // Uniform on the open interval (0, 1).
  Scalar uniform() {
    return (static_cast<Scalar>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire multiply-shift; bias < n / 2^64.
  int uniform_int(int n) {
    const auto x = static_cast<unsigned __int128>(next_u64());
    return static_cast<int>((x * static_cast<std::uint64_t>(n)) >> 64);
  }

  bool bernoulli(Scalar p) { return uniform() < p; }

  // Box-Muller; the sine half is discarded to keep the stream stateless.
  Scalar normal() {
    const Scalar u1 = uniform();
    const Scalar u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Scalar gumbel() { return -std::log(-std::log(uniform())); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// FNV-1a over raw bytes; used for frozen-parameter checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t bytes,
                           std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace udoc
