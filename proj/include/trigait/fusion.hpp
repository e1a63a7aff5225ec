#pragma once

#include <array>
#include <string>
#include <vector>

#include "trigait/nn.hpp"
#include "trigait/synth.hpp"

namespace trigait {

struct PartDef {
  std::string name;
  std::vector<std::size_t> joints;  // COCO keypoint indices
};

// head, shoulder, elbow, wrist, hip, knee, ankle
const std::vector<PartDef>& body_parts();

struct PartRange {
  double h_f = 0.0;  // flexion (min normalized vertical position)
  double h_e = 0.0;  // extension (max)
  std::size_t row_lo = 0;
  std::size_t row_hi = 0;  // inclusive
};

enum class PartitionMode { Motion, Uniform };
std::string partition_mode_name(PartitionMode m);
PartitionMode parse_partition_mode(const std::string& s);

// Per frame: hip midpoint to the origin, shoulder midpoint at unit vertical distance.
// Input and output are [T, K, 2] flattened.
std::vector<double> neck_normalize(const std::vector<double>& joints, std::size_t frames);

std::vector<PartRange> motion_ranges(const std::vector<double>& normalized, std::size_t frames,
                                     const std::vector<PartDef>& parts, std::size_t feature_rows);

// Equal contiguous bands over [0, rows); leftover rows go to the top bands.
std::vector<PartRange> uniform_partition_ranges(std::size_t rows, std::size_t count = 7);

std::vector<PartRange> partition_ranges(PartitionMode mode, const synth::SkeletonSequence& seq, std::size_t feature_rows);

// TSV with header "part\tH_f\tH_e\trow_lo\trow_hi".
std::string ranges_tsv(const std::vector<PartRange>& ranges, const std::vector<PartDef>& parts);

// Sum of max and mean over rows [lo, hi] x all of the last axis, per part.
// x: [N, C, T, R, W]; ranges[n][p] = {lo, hi}. Returns [N, C, T, P].
Tensor part_pool(const Tensor& x, const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& ranges);

// PT_fuse [N, C1 + C2, T, P] from f_X [N, C1, T, H, W] and f_Y [N, C2, T, K].
Tensor cross_modal_tokens(const Tensor& f_x, const Tensor& f_y, const std::vector<std::vector<PartRange>>& ranges,
                          const std::vector<PartDef>& parts);

class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);

  // x: [B, L, D] -> [B, L, D]
  Tensor forward(const Tensor& x, Tensor* probs = nullptr) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Linear query, key, value, output;
  std::size_t heads = 1;
};

// Post-norm encoder layer: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
class TransformerLayer : public Module {
 public:
  TransformerLayer() = default;
  TransformerLayer(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  MultiHeadAttention attention;
  LayerNorm norm1, norm2;
  Linear ffn1, ffn2;
};

struct FusionConfig {
  std::size_t token_channels = 96;  // C1 + C2
  std::size_t dim = 256;
  std::size_t heads = 8;
  std::size_t layers = 1;
};

class FusionBranch : public Module {
 public:
  FusionBranch() = default;
  FusionBranch(const FusionConfig& config, Rng& rng);

  // tokens: [N, Cf, T, P] -> Gait_fuse [N, D, P]
  Tensor forward(const Tensor& tokens) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  FusionConfig config;
  Linear entry;
  std::vector<TransformerLayer> layers;
};

}  // namespace trigait
