#include "biopt/rng.hpp"

#include <cmath>

namespace biopt {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(uint64_t seed, uint64_t stream_tag, uint64_t step) {
  uint64_t k = mix64(seed);
  k = mix64(k ^ (stream_tag * 0xd6e8feb86659fd93ull));
  k = mix64(k ^ (step * 0xa0761d6478bd642full));
  key_ = k;
}

uint64_t CounterRng::next_u64() { return mix64(key_ + (++counter_)); }

double CounterRng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::next_gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  /* Box-Muller; guard u1 away from 0. */
  double u1 = next_double();
  if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

double CounterRng::next_student_t2() {
  /* t_2 = Z / sqrt(chi^2_2 / 2) with chi^2_2 = -2 log U. */
  const double z = next_gaussian();
  double u = next_double();
  if (u < 0x1.0p-53) u = 0x1.0p-53;
  return z / std::sqrt(-std::log(u));
}

uint64_t CounterRng::next_below(uint64_t n) {
  /* rejection below the largest multiple of n to stay unbiased */
  const uint64_t limit = n * (~0ull / n);
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace biopt
