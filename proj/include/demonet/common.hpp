#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace demonet {

// Library-level failure (bad input, contract violation, numeric fault).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration / usage failure; the CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

constexpr double kPi = 3.14159265358979323846;

// Deterministic RNG: xorshift64* core with hand-rolled uniform/normal
// transforms, so values do not depend on any standard-library distribution
// implementation and reproduce bit-for-bit everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift* step; tiny, portable, and plenty for noise/shuffling.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    require(n > 0, "Rng::below: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Standard normal via Box-Muller (cached spare).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Derive an independent substream for (seed, tag) without perturbing this
  // generator. Used to give every recording/epoch its own stream.
  static Rng fork(std::uint64_t seed, std::uint64_t tag) {
    return Rng(splitmix(seed ^ (0x9E3779B97F4A7C15ULL * (tag + 1))));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    x = x ^ (x >> 31);
    return x ? x : 0x106689D45497FDB5ULL;
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// FNV-1a, used for cache keys (not cryptographic).
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 0xCBF29CE484222325ULL) {
  return fnv1a(s.data(), s.size(), seed);
}

// Worker count: DEMONET_THREADS override, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on worker_count() threads. Deterministic work
// split; exceptions are rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace demonet
