#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace srdo {

// Keyed, stateless-derivable random streams. Every stream is identified by a
// (seed, purpose tag, indices...) key, so draws of one purpose never shift the
// draws of another. Generator algorithms are fixed here (splitmix64 for the
// key mix and event streams, mt19937_64 for bulk sampling); floating-point
// mappings are implementation-independent.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Derives a stream key from a seed, a purpose tag and up to four indices.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view purpose,
                                std::uint64_t i0 = 0, std::uint64_t i1 = 0,
                                std::uint64_t i2 = 0, std::uint64_t i3 = 0) {
  std::uint64_t s = seed ^ fnv1a(purpose);
  std::uint64_t k = splitmix64(s);
  s ^= i0 + 0x9E3779B97F4A7C15ull;
  k ^= splitmix64(s);
  s ^= i1 + 0xD1B54A32D192ED03ull;
  k ^= splitmix64(s);
  s ^= i2 + 0x8CB92BA72F3D8DD7ull;
  k ^= splitmix64(s);
  s ^= i3 + 0xEB44ACCAB455D165ull;
  k ^= splitmix64(s);
  return k;
}

/// Small counter-based stream for per-event draws (stragglers, delays, ...).
class EventStream {
 public:
  explicit EventStream(std::uint64_t key) : state_(key) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // 53-bit mantissa mapping; uniform on [0, 1).
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased integer on [0, n) via rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Inclusive integer range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    uniform_below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::uint64_t state_;
};

/// Bulk sampler for matrices/vectors; mt19937_64 with a fixed Box-Muller
/// normal transform (two uniforms per normal, no cached spare).
class BulkSampler {
 public:
  explicit BulkSampler(std::uint64_t key) : gen_(key) {}

  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();  // guard log(0)
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace srdo
