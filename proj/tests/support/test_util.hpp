#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "compad/tensor.hpp"

namespace compad::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = u(rng);
  return t;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -2.0,
                                         double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace compad::testing
