#include "icalab/rng.hpp"

#include <cmath>

namespace icalab {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0,1] x [0,1)
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

uint64_t Rng::derive(uint64_t master, std::string_view name, uint64_t index) {
  // FNV-1a over the stream name, then two splitmix rounds folding in
  // master and index so nearby (master, index) pairs decorrelate.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  auto mix = [](uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  uint64_t s = mix(h + 0x9e3779b97f4a7c15ULL * master);
  s = mix(s + 0x9e3779b97f4a7c15ULL * (index + 1));
  return s;
}

}  // namespace icalab
