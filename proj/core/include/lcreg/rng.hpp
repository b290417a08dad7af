#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace lcreg {

/// Deterministic random stream.
///
/// Algorithm (fixed so draws are reproducible across implementations):
///   - engine: std::mt19937_64 seeded with splitmix64(seed)
///   - uniform(): top 53 bits of one engine output, scaled to [0, 1)
///   - normal(): Box-Muller, u1 = 1 - uniform(), u2 = uniform(),
///     z = sqrt(-2 ln u1) * cos(2 pi u2); two engine outputs per draw
///   - uniform_index(n): floor(uniform() * n)
///   - derive(k): new Rng seeded with splitmix64(seed ^ splitmix64(k + 1))
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::size_t uniform_index(std::size_t n);

  /// Independent child stream keyed by `stream`; does not advance this one.
  Rng derive(std::uint64_t stream) const;

  /// Fisher-Yates with uniform_index.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace lcreg
