#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace epfgnn {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Purposes for derived streams. Each purpose gets an independent key space so
/// that, e.g., the number of dropout draws never shifts the split.
enum class StreamPurpose : std::uint64_t {
  init = 1,
  dropout = 2,
  split = 3,
  synthetic = 4,
  oracle = 5,
  generic = 6,
};

/// Counter-based generator: draw k is a pure function of (key, k).
/// Output is platform independent; no std:: distributions are used.
class RandomStream {
 public:
  RandomStream() = default;
  explicit RandomStream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t next_u64() noexcept {
    return splitmix64(key_ + counter_++ * 0xD1B54A32D192ED03ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Derives the stream for (seed, purpose, a, b). Same arguments, same stream,
/// regardless of how many other streams were used before.
inline RandomStream derive_stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t a = 0,
                                  std::uint64_t b = 0) noexcept {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ static_cast<std::uint64_t>(purpose));
  k = splitmix64(k ^ a);
  k = splitmix64(k ^ (b * 0x9E3779B97F4A7C15ULL));
  return RandomStream(k);
}

}  // namespace epfgnn
