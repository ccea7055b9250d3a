#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace steerkit::rng {

// mt19937_64's raw output sequence is pinned down by the standard; the
// <random> distributions are not. Everything here derives from raw draws
// only, so two conforming builds produce identical streams.

// Uniform on [0, 1), 53 bits.
inline double uniform01(std::mt19937_64& g) {
  return double(g() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; u1 is kept strictly positive.
inline double normal(std::mt19937_64& g) {
  const double u1 = double((g() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Uniform integer on [0, n) by rejection; unbiased.
inline std::uint64_t bounded(std::mt19937_64& g, std::uint64_t n) {
  const std::uint64_t min = (std::uint64_t(0) - n) % n;
  std::uint64_t x;
  do {
    x = g();
  } while (x < min);
  return x % n;
}

// Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = std::size_t(bounded(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace steerkit::rng
