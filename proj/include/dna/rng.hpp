#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>

namespace dna {

// Seeded random source used by every stochastic step (sample splits, random
// masks, synthetic dumps).
//
// Uniforms come from the raw 64-bit output of MT19937-64, whose sequence is
// fixed by the C++ standard. Normals use the basic Box-Muller transform on
// those uniforms, and bounded integers use rejection sampling, so streams are
// reproducible across standard library implementations for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform double in (0, 1).
  double uniform_open();

  /// Standard normal draw; the second Box-Muller output is cached.
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace dna
