#include "trigait/nn.hpp"

#include <algorithm>
#include <cmath>

namespace trigait {

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> params;
  std::vector<Buffer> buffers;
  collect(params, buffers);
  return params;
}

void Module::zero_grad() {
  for (Parameter* p : parameters()) p->value.zero_grad();
}

Tensor init_he(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor(shape, std::move(data));
}

Tensor init_uniform(const Shape& shape, double bound, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(data));
}

Conv::Conv(std::string name, ConvSpec s, Rng& rng) : spec(std::move(s)) {
  if (spec.kernel.empty() || spec.kernel.size() > 3) throw Error("conv '" + name + "' needs 1-3 kernel axes");
  Shape shape = {spec.out_channels, spec.in_channels};
  std::size_t fan_in = spec.in_channels;
  for (std::size_t k : spec.kernel) {
    shape.push_back(k);
    fan_in *= k;
  }
  weight = Parameter(name + ".weight", init_he(shape, fan_in, rng));
  if (spec.bias) bias = Parameter(name + ".bias", Tensor::zeros({spec.out_channels}));
}

Tensor Conv::forward(const Tensor& x) const {
  ConvOptions opt;
  opt.dilation = spec.dilation;
  opt.padding = spec.padding;
  return conv(x, weight.value, bias ? bias->value : Tensor{}, opt);
}

void Conv::collect(std::vector<Parameter*>& params, std::vector<Buffer>&) {
  params.push_back(&weight);
  if (bias) params.push_back(&*bias);
}

BatchNorm::BatchNorm(std::string n, std::size_t channels)
    : gamma(n + ".gamma", Tensor::ones({channels})),
      beta(n + ".beta", Tensor::zeros({channels})),
      stats(channels),
      name(std::move(n)) {}

Tensor BatchNorm::forward(const Tensor& x, NormMode mode) {
  return batch_norm(x, gamma.value, beta.value, stats, mode, kMomentum, kEps);
}

void BatchNorm::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  params.push_back(&gamma);
  params.push_back(&beta);
  buffers.push_back({name + ".running_mean", &stats.mean});
  buffers.push_back({name + ".running_var", &stats.var});
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Parameter(name + ".weight", init_uniform({in, out}, bound, rng));
  if (with_bias) bias = Parameter(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const {
  return linear(x, weight.value, bias ? bias->value : Tensor{});
}

void Linear::collect(std::vector<Parameter*>& params, std::vector<Buffer>&) {
  params.push_back(&weight);
  if (bias) params.push_back(&*bias);
}

LayerNorm::LayerNorm(std::string name, std::size_t dim)
    : gamma(name + ".gamma", Tensor::ones({dim})), beta(name + ".beta", Tensor::zeros({dim})) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma.value, beta.value); }

void LayerNorm::collect(std::vector<Parameter*>& params, std::vector<Buffer>&) {
  params.push_back(&gamma);
  params.push_back(&beta);
}

void fill_parameter(Parameter& p, double value) {
  auto d = p.value.data();
  std::fill(d.begin(), d.end(), value);
}

}  // namespace trigait
