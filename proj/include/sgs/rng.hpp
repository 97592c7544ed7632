#pragma once
// Seeded random number generation with explicit, platform-independent
// transforms. std::mt19937_64 is the bit source; uniform/normal draws are
// written out here instead of using std:: distributions, whose outputs are
// implementation defined. Derived streams let independent consumers (one
// per episode, per video) share a master seed without coupling.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace sgs {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); rejection sampling keeps the draw exact.
  int uniform_int(int n) {
    if (n <= 0) return 0;
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  // Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; mixing is FNV-1a over (seed, label).
  Rng derive(const std::string& label) const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix_byte = [&h](unsigned char b) {
      h ^= b;
      h *= 1099511628211ull;
    };
    for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>((seed_ >> (8 * i)) & 0xff));
    for (char c : label) mix_byte(static_cast<unsigned char>(c));
    return Rng(h);
  }

  Rng derive(const std::string& label, std::uint64_t index) const {
    return derive(label + "#" + std::to_string(index));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sgs
