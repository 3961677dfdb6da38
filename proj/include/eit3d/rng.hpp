#pragma once

#include <cstdint>
#include <random>

namespace eit3d {

/// SplitMix64 finalizer. Used to derive independent child seeds from a
/// master seed and a stream index.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b);

/// Platform-independent random stream.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the
/// standard. The floating-point transforms are implemented here rather than
/// through <random> distributions, whose algorithms are implementation
/// defined, so that datasets reproduce byte for byte across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (both variates used).
  double normal();

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eit3d
