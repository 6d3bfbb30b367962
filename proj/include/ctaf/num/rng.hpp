#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ctaf::num {

// Deterministic RNG. std::mt19937_64 is bit-exact across platforms; the
// distribution mappings below are hand-rolled because the std distribution
// objects are not (their algorithms vary between standard libraries).
//
// Streams are derived from a (root seed, purpose string, index list), never
// from engine state, so consumers cannot perturb each other: the synth
// stream for (subject 3, clip 17) is identical no matter what was drawn
// before it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  // [0, 1), 53-bit resolution.
  double uniform01();
  double uniform(double a, double b);

  // Standard normal via Box-Muller; the second value is cached.
  double normal();
  double normal(double mu, double sigma);

  // Unbiased integer in [0, bound); bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Child stream keyed on (this stream's seed, purpose, indices).
  Rng derive(std::string_view purpose,
             std::initializer_list<std::uint64_t> idx = {}) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 mixing step; the building block for stream derivation.
std::uint64_t mix64(std::uint64_t x);

}  // namespace ctaf::num
