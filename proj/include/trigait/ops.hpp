#pragma once

#include <cstddef>
#include <vector>

#include "trigait/tensor.hpp"

namespace trigait {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor softplus(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double exponent);

// Reductions over `axes` (negative axes count from the end).
Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);
Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);
// Gradient flows to the first maximal element in row-major order.
Tensor max(const Tensor& x, const std::vector<int>& axes, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

enum class PoolKind { Max, Avg };
Tensor pool(const Tensor& x, const std::vector<int>& axes, PoolKind kind, bool keepdim = false);

// Shape manipulation (all copy).
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack(const std::vector<Tensor>& parts, int axis);
Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices);
Tensor unsqueeze(const Tensor& x, int axis);

// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// input [N, Din] (or [..., Din]), weight [Din, Dout], optional bias [Dout].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias = {});

struct ConvOptions {
  std::vector<std::size_t> stride;    // defaults to 1 per spatial axis
  std::vector<std::size_t> dilation;  // defaults to 1
  std::vector<std::size_t> padding;   // defaults to 0
};

// Cross-correlation. input [N, Cin, S1..Sd], kernel [Cout, Cin, k1..kd], d in 1..3,
// optional bias [Cout].
Tensor conv(const Tensor& input, const Tensor& kernel, const Tensor& bias = {},
            const ConvOptions& options = {});

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  explicit RunningStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

enum class NormMode { Train, Eval };

// Normalizes over every axis except axis 1 (channels).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  NormMode mode, double momentum = 0.1, double eps = 1e-5);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// Normalizes the last axis, then applies gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace trigait
