#pragma once

#include <cmath>
#include <vector>

#include "smart/parameters.hpp"
#include "smart/random.hpp"
#include "smart/tensor.hpp"

namespace test {

inline smart::Tensor random_tensor(smart::Shape shape, smart::Rng& rng, double scale = 1.0) {
  std::vector<double> v(smart::shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return smart::Tensor(std::move(shape), std::move(v));
}

inline smart::Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return smart::Tensor({rows, cols}, std::move(values));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace test
