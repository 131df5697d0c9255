#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vqclone {

// Error taxonomy. The CLI maps these onto exit codes, everything else just
// lets them propagate.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct StateError : std::runtime_error {
  explicit StateError(const std::string& m) : std::runtime_error(m) {}
};

// Deterministic RNG. mt19937_64 output is pinned by the standard; the float
// mappings below are ours, so streams are bit-identical across stdlibs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without the cached second variate, so the stream position is
  // a pure function of the number of calls.
  double normal();

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

// splitmix64-style seed mixing for deriving per-object seeds from a root.
std::uint64_t mix_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace vqclone
