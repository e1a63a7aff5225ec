#pragma once

#include <array>
#include <vector>

#include "trigait/nn.hpp"
#include "trigait/synth.hpp"

namespace trigait {

inline constexpr std::size_t kMultiInputChannels = 10;
inline constexpr double kDefaultCoordScale = 1.0 / 64.0;

// Per-joint channels: absolute (2), one-step motion (2), two-step motion (2),
// bone vector to parent (2), bone unit direction (2). Motion entries without a
// future frame are zero. Returns [10, T, K] for raw joints laid out [T, K, 2].
Tensor multi_input(const std::vector<double>& joints, std::size_t frames, double coord_scale = kDefaultCoordScale);
Tensor multi_input(const synth::SkeletonSequence& seq, double coord_scale = kDefaultCoordScale);

// Average pooling of the last axis from `in` to `out` bins with adaptive windows
// [floor(i*in/out), ceil((i+1)*in/out)).
Tensor adaptive_avg_pool_last(const Tensor& x, std::size_t out);
// The [in, out] averaging matrix used above.
Tensor adaptive_pool_matrix(std::size_t in, std::size_t out);

class JointSelfAttention : public Module {
 public:
  JointSelfAttention() = default;
  JointSelfAttention(const std::string& name, std::size_t in, std::size_t out, std::size_t heads, Rng& rng);

  // x: [N, Cin, T, K] -> [N, Cout, T, K]. Attention probabilities [N, heads, T, K, K] into *probs.
  Tensor forward(const Tensor& x, Tensor* probs = nullptr) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Conv query, key, value;
  std::size_t heads = 1;
};

class JsaTcBlock : public Module {
 public:
  JsaTcBlock() = default;
  JsaTcBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t heads, Rng& rng);

  // y = act(BN(TC(act(BN(JSA(x)))))) + residual(x)
  Tensor forward(const Tensor& x, NormMode mode, Tensor* probs = nullptr);
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  JointSelfAttention jsa;
  BatchNorm bn_jsa;
  Conv tc;
  BatchNorm bn_tc;
  std::optional<Conv> projection;  // present when in != out
};

struct SkeletonConfig {
  std::array<std::size_t, 4> channels = {64, 64, 128, 256};  // block outputs; input is 10
  std::size_t heads = 8;
  std::size_t parts = 16;  // P1
  double coord_scale = kDefaultCoordScale;

  std::size_t out_channels() const { return channels[3]; }
};

struct SkeletonFeatures {
  Tensor input;   // [N, 10, T, K]
  Tensor f_y;     // first block output, [N, C1, T, K]
  Tensor blocks;  // last block output, [N, C, T, K]
  Tensor f_ske;   // temporal max, [N, C, K]
  Tensor gait;    // Gait_ske, [N, C, P1]
  std::vector<Tensor> attention;  // per block, [N, heads, T, K, K]
};

class SkeletonBranch : public Module {
 public:
  SkeletonBranch() = default;
  SkeletonBranch(const SkeletonConfig& config, Rng& rng);

  // input: [N, 10, T, K] multi-input tensor.
  SkeletonFeatures forward(const Tensor& input, NormMode mode);
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  SkeletonConfig config;
  std::array<JsaTcBlock, 4> blocks;
};

}  // namespace trigait
