#include "trigait/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trigait/ops.hpp"
#include "trigait/rng.hpp"

namespace trigait {

GradCheckReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          const std::vector<Tensor>& inputs, const GradCheckOptions& options) {
  Rng rng(options.seed);
  Tensor probe = f(inputs);
  std::vector<double> weights(probe.numel());
  for (double& w : weights) w = rng.uniform(-1.0, 1.0);
  const Tensor projection(probe.shape(), weights);

  auto loss_value = [&]() {
    NoGradGuard guard;
    return sum_all(mul(f(inputs), projection)).item();
  };

  for (Tensor t : inputs) t.zero_grad();
  Tensor loss = sum_all(mul(f(inputs), projection));
  loss.backward();

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor x = inputs[k];
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords && coords.size() > options.max_coords) {
      for (std::size_t i = 0; i < options.max_coords; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords);
    }
    auto data = x.data();
    for (std::size_t i : coords) {
      const double saved = data[i];
      const double a = analytic[i];
      auto measure = [&](double step, double& numeric) {
        data[i] = saved + step;
        const double up = loss_value();
        data[i] = saved - step;
        const double down = loss_value();
        data[i] = saved;
        numeric = (up - down) / (2.0 * step);
        const double e = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
        return std::isfinite(e) ? e : INFINITY;
      };
      double numeric = 0.0;
      double err = measure(options.step, numeric);
      if (err > options.retry_above && !options.retry_steps.empty()) {
        ++report.coords_retried;
        for (double step : options.retry_steps) {
          double n2 = 0.0;
          const double e2 = measure(step, n2);
          if (e2 < err) err = e2, numeric = n2;
        }
      }
      ++report.coords_checked;
      if (report.coords_checked == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        std::ostringstream os;
        os << "input#" << k << "[" << i << "] analytic=" << a << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

}  // namespace trigait
