#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "vamp/tensor.hpp"

namespace vamp {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive hash of a key path, e.g. (seed, epoch, example, draw).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

inline Rng make_stream(std::initializer_list<std::uint64_t> keys) { return Rng(derive_seed(keys)); }

// Tensor of i.i.d. N(0, stddev^2) draws.
inline Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = normal(rng);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace vamp
