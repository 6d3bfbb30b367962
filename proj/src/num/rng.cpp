#include "ctaf/num/rng.hpp"

#include <cmath>

namespace ctaf::num {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

std::uint64_t Rng::next() { return eng_(); }

double Rng::uniform01() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform01(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

double Rng::normal(double mu, double sigma) { return mu + sigma * normal(); }

std::uint64_t Rng::uniform_int(std::uint64_t bound) {
  // Lemire's multiply-shift rejection method.
  unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
  auto l = static_cast<std::uint64_t>(m);
  if (l < bound) {
    const std::uint64_t t = (0 - bound) % bound;
    while (l < t) {
      m = static_cast<unsigned __int128>(next()) * bound;
      l = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::derive(std::string_view purpose,
                std::initializer_list<std::uint64_t> idx) const {
  std::uint64_t h = mix64(seed_ ^ fnv1a(purpose));
  for (std::uint64_t i : idx) h = mix64(h ^ i);
  return Rng(h);
}

}  // namespace ctaf::num
