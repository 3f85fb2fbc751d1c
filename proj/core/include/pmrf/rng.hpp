#pragma once

#include <cstdint>
#include <random>

namespace pmrf {

// splitmix64 finalizer. Stateless 64-bit mixing function.
std::uint64_t splitmix64(std::uint64_t x);

// Seed splitting rule used everywhere a child stream is derived from a parent
// seed: seed_n = split_seed(seed, n). Distinct purposes (dataset split, sample
// index, Monte Carlo draw, ...) pass distinct stream ids.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic random source. The engine is the standardized mt19937_64, and
// all variate transforms (normal, log-normal, gamma) are implemented locally
// rather than via std::*_distribution so that a given seed reproduces the
// same stream regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe to pass to log().
  double uniform_pos() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Draws a pair and caches the second value.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double lognormal(double mu, double sigma);

  // Gamma(shape, rate) via Marsaglia-Tsang squeeze, with the standard
  // power-of-uniform boost for shape < 1.
  double gamma(double shape, double rate);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace pmrf
