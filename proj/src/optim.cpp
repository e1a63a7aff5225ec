#include "trigait/optim.hpp"

namespace trigait {

std::vector<std::string> sgd_step(const std::vector<Parameter*>& params, const SgdOptions& options) {
  std::vector<std::string> skipped;
  for (Parameter* p : params) {
    if (!p->value.has_grad()) {
      skipped.push_back(p->name);
      continue;
    }
    if (!p->momentum) p->momentum = Tensor::zeros(p->value.shape());
    auto w = p->value.data();
    auto g = p->value.grad();
    auto v = p->momentum->data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = options.momentum * v[i] + (g[i] + options.weight_decay * w[i]);
      w[i] -= options.lr * v[i];
    }
  }
  return skipped;
}

}  // namespace trigait
