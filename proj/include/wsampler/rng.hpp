#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace wsampler {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives a stream key from a master seed and an ordered list of labels
/// (subset id, step, draw index, ...). Distinct label tuples give
/// statistically independent streams; the same tuple always gives the same one.
inline constexpr std::uint64_t stream_key(std::uint64_t master,
                                          std::initializer_list<std::uint64_t> labels) noexcept {
  std::uint64_t h = splitmix64(master ^ 0x6A09E667F3BCC909ULL);
  std::uint64_t pos = 0;
  for (auto l : labels) {
    h = splitmix64(h ^ splitmix64(l + 0x9E3779B97F4A7C15ULL * ++pos));
  }
  return h;
}

/// xoshiro256** engine. Satisfies UniformRandomBitGenerator so it plugs into
/// the <random> distributions. Every chain, rejection run and draw owns its
/// own instance; there is no global generator anywhere in the library.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

  static Rng stream(std::uint64_t master, std::initializer_list<std::uint64_t> labels) noexcept {
    return Rng(stream_key(master, labels));
  }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t x = seed;
    for (auto& s : s_) {
      x = splitmix64(x);
      s = x;
    }
    normal_.reset();
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }

  double gamma(double shape) {
    std::gamma_distribution<double> g(shape, 1.0);
    return g(*this);
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(*this);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace wsampler
