#pragma once

#include <string>
#include <vector>

#include "trigait/nn.hpp"

namespace trigait {

struct SgdOptions {
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// v <- momentum * v + (g + wd * w);  w <- w - lr * v.
// Gradients are left in place. Returns the names of parameters skipped for lack of a gradient.
std::vector<std::string> sgd_step(const std::vector<Parameter*>& params, const SgdOptions& options);

// Piecewise-constant schedule: `base` until `boundary`, then base * factor.
struct StepSchedule {
  double base = 1e-4;
  double factor = 0.1;
  long boundary = 30000;

  double at(long iteration) const { return iteration < boundary ? base : base * factor; }
};

}  // namespace trigait
