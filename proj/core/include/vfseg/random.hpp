#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace vfseg {

/// splitmix64 finalizer; used to derive independent stream seeds from a run
/// seed and an index so results never depend on worker scheduling.
constexpr uint64_t mix_seed(uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr uint64_t derive_seed(uint64_t seed, uint64_t index) noexcept {
  return mix_seed(mix_seed(seed) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

constexpr uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) noexcept {
  return derive_seed(derive_seed(seed, a), b);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  // Both draws are spelled out rather than taken from <random>'s
  // distributions, whose algorithms differ between standard libraries;
  // sequences here are identical on every platform.

  /// Inclusive on both ends; always consumes at least one engine draw.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    if (span == 0) return static_cast<int64_t>(engine_());
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % span;
    uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % span);
  }
  /// Half-open [lo, hi) with 53 random mantissa bits.
  double uniform(double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  uint64_t next() { return engine_(); }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vfseg
