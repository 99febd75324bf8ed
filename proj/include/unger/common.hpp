#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace unger {

// All recoverable failures surface as unger::Error with a one-line message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stable sub-stream seed: same (seed, tag) -> same stream on every platform.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  return mix64(seed ^ fnv1a64(tag));
}

// splitmix64 generator with hand-rolled distributions. std::<random>
// distributions are implementation-defined; these are bit-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x2024) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) fail("Rng::below(0)");
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t r = next_u64();
    while (r >= lim) r = next_u64();
    return r % n;
  }

  // Box-Muller; caches the second deviate.
  double gaussian() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cache_ = r * std::sin(a);
    has_cache_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double cache_ = 0.0;
  bool has_cache_ = false;
};

// Worker-pool cap for user-parallel decoding; 1 keeps runs byte-reproducible
// by default (per-user work is order-independent either way).
inline int env_thread_cap() {
  const char* v = std::getenv("UNGER_THREADS");
  if (!v) return 1;
  long n = std::strtol(v, nullptr, 10);
  if (n < 1) return 1;
  if (n > 256) return 256;
  return static_cast<int>(n);
}

}  // namespace unger
