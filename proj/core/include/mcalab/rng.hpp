#pragma once

#include <cmath>
#include <cstdint>

namespace mcalab {

// SplitMix64 stream (Steele, Lea, Flood 2014). Chosen over std::mt19937 +
// std::normal_distribution because the distribution adapters in the standard
// library are implementation-defined; this generator is fully pinned down by
// the constants below and therefore bit-reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller transform; the spare variate is cached so a fixed seed yields
  // a fixed sequence regardless of call grouping.
  double gaussian(double mean, double std) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + std * spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + std * r * std::cos(theta);
  }

  // Derives an independent stream; used to give each consumer (matrix init,
  // noise, shuffling) its own seed from one master seed.
  std::uint64_t fork() { return next_u64(); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mcalab
