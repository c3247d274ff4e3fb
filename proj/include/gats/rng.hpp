#pragma once

#include <array>
#include <cstdint>
#include <cmath>
#include <vector>

namespace gats {

// Deterministic random source used everywhere randomness is needed (synthetic
// data, corruption, seeded projection weights). The exact generation
// algorithm is fixed so that any other implementation can reproduce the same
// streams from the same seed:
//
//   * state seeding: four rounds of splitmix64 starting from the user seed
//   * generator:     xoshiro256** (Blackman/Vigna, public domain)
//   * uniform():     (next_u64() >> 11) * 2^-53, i.e. 53 high bits -> [0,1)
//   * normal():      Box-Muller, one sample per call:
//                        z = sqrt(-2 ln(1-u1)) * cos(2*pi*u2)
//                    with u1 drawn before u2 (the sine branch is discarded)
//   * bounded(n):    multiply-shift: high 64 bits of next_u64() * n
//   * shuffle:       Fisher-Yates from the back using bounded()
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal deviate.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace gats
