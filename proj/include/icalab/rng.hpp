#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace icalab {

// Deterministic counter-free PRNG with named-stream derivation.
// All randomness in the project flows from one master seed through
// Rng::stream(master, name, index) so that generation order never
// affects results and parallel workers stay reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // avoid the all-zero fixed point and decorrelate small seeds
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    // splitmix64 step
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform integer in [0, n). Lemire multiply-shift; bias < 2^-64.
  int below(int n) {
    return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                             static_cast<uint64_t>(n)) >> 64);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller, caching the spare draw.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = below(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // Derive an independent stream seed from (master, name, index).
  static uint64_t derive(uint64_t master, std::string_view name, uint64_t index = 0);
  static Rng stream(uint64_t master, std::string_view name, uint64_t index = 0) {
    return Rng(derive(master, name, index));
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace icalab
