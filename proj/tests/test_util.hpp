#pragma once

#include <cmath>
#include <vector>

#include "trigait/rng.hpp"
#include "trigait/tensor.hpp"

namespace trigait::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = false, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor(shape, std::move(d), grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace trigait::test
