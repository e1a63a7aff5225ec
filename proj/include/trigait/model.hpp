#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trigait/fusion.hpp"
#include "trigait/nn.hpp"
#include "trigait/silhouette.hpp"
#include "trigait/skeleton.hpp"
#include "trigait/synth.hpp"

namespace trigait {

struct ModelConfig {
  SilhouetteConfig silhouette;
  SkeletonConfig skeleton;
  std::size_t fusion_heads = 8;
  std::size_t fusion_layers = 1;
  std::size_t embed_dim = 256;
  std::size_t frame_size = 64;  // silhouettes are area-downsampled from 64 to this
  std::size_t num_classes = 8;
  double alpha_init = 1.0;
  PartitionMode partition = PartitionMode::Motion;

  // Height of the stem output (two 2x2 pools).
  std::size_t feature_rows() const { return frame_size / 4; }
  std::size_t unimodal_parts() const { return feature_rows(); }
  std::size_t total_parts() const { return feature_rows() + body_parts().size(); }
  // Every inconsistency, one message each.
  std::vector<std::string> problems() const;
  // Throws listing every problem.
  void validate() const;
};

// Canonical text of every shape-affecting field except num_classes, and its FNV-1a hash.
std::string model_signature(const ModelConfig& config);
std::uint64_t model_config_hash(const ModelConfig& config);

struct ModelInputs {
  Tensor silhouettes;  // [N, 1, T, S, S]
  Tensor skeletons;    // [N, 10, T, K]
  std::vector<std::vector<PartRange>> ranges;  // per sample, rows of f_X
};

// Area-average downsampling of one 64x64 binary sequence to `size` x `size`; [T, size, size].
std::vector<double> downsample_silhouette(const synth::SilhouetteSequence& s, std::size_t size);

ModelInputs prepare_inputs(const std::vector<synth::RenderedSequence>& batch, const ModelConfig& config);

struct ModelOutput {
  SilhouetteFeatures sil;
  SkeletonFeatures ske;
  Tensor tokens;      // PT_fuse, [N, C1 + C2, T, 7]
  Tensor gait_fuse;   // [N, E, 7]
  Tensor gait_prime;  // [N, E, P1]
  Tensor embedding;   // [N, E, P1 + 7]
};

class TriGaitModel : public Module {
 public:
  TriGaitModel() = default;
  TriGaitModel(const ModelConfig& config, std::uint64_t seed);

  ModelOutput forward(const ModelInputs& inputs, NormMode mode);
  // Gait' = per-part FC(concat(Gait_sil, alpha * Gait_ske)); Gait = concat(Gait', Gait_fuse) over parts.
  Tensor assemble(const Tensor& gait_sil, const Tensor& gait_ske, const Tensor& gait_fuse, Tensor* gait_prime = nullptr) const;
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  ModelConfig config;
  SilhouetteBranch sil;
  SkeletonBranch ske;
  FusionBranch fuse;
  Parameter alpha;
  Parameter fc_weight;  // [P1, 2C + C_ske, E]
  Parameter fc_bias;    // [P1, E]
  Linear classifier;    // [E, num_classes], no bias
};

// Pairwise Euclidean distances within each group: x [G, N, D] -> [G, N, N].
// Squared distances are clamped at 1e-12 before the root.
Tensor pairwise_distance(const Tensor& x);

struct TripletResult {
  Tensor loss;
  double active_fraction = 0.0;
  std::size_t triplets = 0;  // valid (anchor, positive, negative) triples per part
};

// Batch-all hinge max(0, m + d_ap - d_an) per part, averaged over the non-zero
// terms of that part, then over parts. embeddings [N, E, P].
TripletResult triplet_ba_loss(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, double margin);

// Softmax cross-entropy of the classifier on the part-mean embedding, mean over the batch.
Tensor ce_loss(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, const Linear& classifier);

struct LossReport {
  double l_tri = 0.0;
  double l_ce = 0.0;
  double l = 0.0;
  double active_fraction = 0.0;
};

struct LossTerms {
  Tensor total;
  LossReport report;
};

LossTerms combined_loss(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, const Linear& classifier,
                        double margin);

}  // namespace trigait
