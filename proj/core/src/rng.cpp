#include "ghnsearch/rng.hpp"

#include <cmath>

#include "ghnsearch/errors.hpp"

namespace ghn {

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

Rng Rng::derive(uint64_t seed, uint64_t a, uint64_t b) {
  uint64_t s = seed;
  uint64_t mixed = splitmix64(s);
  s ^= a * 0xff51afd7ed558ccdULL;
  mixed ^= splitmix64(s);
  s ^= b;
  mixed ^= splitmix64(s);
  return Rng(mixed);
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

uint64_t Rng::next_below(uint64_t bound) {
  if (bound == 0) throw InputError("Rng::next_below: bound must be positive");
  // Rejection sampling to avoid modulo bias.
  uint64_t threshold = (0ULL - bound) % bound;
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double Rng::next_normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = next_double();
  } while (u1 <= 0.0);
  double u2 = next_double();
  double mag = std::sqrt(-2.0 * std::log(u1));
  double two_pi = 6.283185307179586476925286766559;
  spare_ = mag * std::sin(two_pi * u2);
  have_spare_ = true;
  return mag * std::cos(two_pi * u2);
}

std::vector<int> Rng::permutation(int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(next_below(static_cast<uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace ghn
