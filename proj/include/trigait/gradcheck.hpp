#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trigait/tensor.hpp"

namespace trigait {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates sampled per input tensor; 0 checks every coordinate.
  std::size_t max_coords = 0;
  // Denominator floor so that near-zero gradients are compared absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 7;
  // Coordinates whose error exceeds `retry_above` are re-measured at these smaller
  // steps and keep the best agreement. Central differences across a ReLU or max kink
  // within `step` of the point are meaningless; a smaller step avoids the kink.
  std::vector<double> retry_steps;
  double retry_above = 1e-4;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_retried = 0;
  std::string worst;  // "input#k[i] analytic=.. numeric=.."
};

// Compares reverse-mode gradients of L = sum(f(inputs) * R), R a fixed random
// projection, against central finite differences on every listed input.
GradCheckReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          const std::vector<Tensor>& inputs, const GradCheckOptions& options = {});

}  // namespace trigait
