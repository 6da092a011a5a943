#pragma once

#include <cstdint>
#include <random>

namespace smart {

/// Sequential generator for initialisation and data synthesis. Built on
/// mt19937_64 (fully specified by the standard) with hand-rolled
/// distributions so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal(double mean = 0.0, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

/// Counter-based uniform in [0, 1): a pure function of its four inputs.
double counter_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t site,
                       std::uint64_t index);

}  // namespace smart
