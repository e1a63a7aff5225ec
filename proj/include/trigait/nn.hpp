#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trigait/ops.hpp"
#include "trigait/rng.hpp"
#include "trigait/tensor.hpp"

namespace trigait {

struct Parameter {
  std::string name;
  Tensor value;                    // requires_grad == true
  std::optional<Tensor> momentum;  // allocated by the optimizer on first step

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
  }
};

// Non-trainable persistent state (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<double>* values = nullptr;
};

// Anything that owns parameters or buffers exposes them for the optimizer and
// checkpointing. Registration order defines checkpoint order.
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) = 0;

  std::vector<Parameter*> parameters();
  void zero_grad();
};

// He-normal initialization with the given fan-in.
Tensor init_he(const Shape& shape, std::size_t fan_in, Rng& rng);
Tensor init_uniform(const Shape& shape, double bound, Rng& rng);

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::vector<std::size_t> kernel;  // one entry per spatial axis
  std::vector<std::size_t> dilation;
  std::vector<std::size_t> padding;
  bool bias = false;
};

class Conv : public Module {
 public:
  Conv() = default;
  Conv(std::string name, ConvSpec spec, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Parameter weight;
  std::optional<Parameter> bias;
  ConvSpec spec;
};

class BatchNorm : public Module {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels);

  Tensor forward(const Tensor& x, NormMode mode);
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Parameter gamma;
  Parameter beta;
  RunningStats stats;
  std::string name;
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
};

// y = x W + b with W stored [in, out].
class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Parameter weight;
  std::optional<Parameter> bias;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t dim);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Parameter gamma;
  Parameter beta;
};

// Fills every element of a parameter with `value` (used by tests and ablations).
void fill_parameter(Parameter& p, double value);

}  // namespace trigait
