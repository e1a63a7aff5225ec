#pragma once

#include <array>
#include <vector>

#include "trigait/nn.hpp"

namespace trigait {

// Generalized mean over the last axis: (mean x^p)^(1/p). `p` is a one-element
// tensor (differentiable); x must be non-negative.
Tensor gem_pool(const Tensor& x, const Tensor& p);

// p = softplus(raw) + 1e-3, and its inverse for initialization.
Tensor gem_exponent(const Tensor& raw);
double gem_raw_for(double p);

// 2x2 spatial max pool on the last two axes (extents must be even).
Tensor max_pool2x2(const Tensor& x);

struct SilhouetteConfig {
  std::array<std::size_t, 4> channels = {32, 64, 128, 128};
  std::size_t parts = 8;       // horizontal strips in the spatial stream
  std::size_t reduction = 16;  // channel reduction inside the spatial attention
  std::array<std::size_t, 3> dilations = {1, 2, 3};
  double gem_p_init = 3.0;

  std::size_t out_channels() const { return channels[3]; }
};

class SpatialRefine : public Module {
 public:
  SpatialRefine() = default;
  SpatialRefine(const std::string& name, std::size_t channels, std::size_t reduction, Rng& rng);

  struct Output {
    Tensor refined;    // F_S' = F_S + F_S * S_A
    Tensor attention;  // S_A, [N, 1, h, w]
  };
  // f_s: [N, C, h, w]
  Output forward(const Tensor& f_s, NormMode mode);
  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  Conv reduce, dilated0, dilated1, expand;
  BatchNorm bn;
};

struct SilhouetteFeatures {
  Tensor f_x;       // first stem block output before pooling, [N, C1, T, H, W]
  Tensor stem;      // F, [N, C, T, H', W']
  Tensor f_s;       // temporal max of F, [N, C, H', W']
  Tensor f_s_refined;  // global F_S' (diagnostic), [N, C, H', W']
  Tensor s_a;          // global S_A, [N, 1, H', W']
  Tensor appearance;   // A, [N, C, H']
  Tensor f_t;          // [N, C, T, H', 3]
  Tensor s_t;          // [N, C, T, H', 3]
  Tensor motion;       // M, [N, C, H']
  Tensor gait;         // Gait_sil, [N, 2C, H']
};

class SilhouetteBranch : public Module {
 public:
  SilhouetteBranch() = default;
  SilhouetteBranch(const SilhouetteConfig& config, Rng& rng);

  // x: [N, 1, T, H, W]; returns F and stores the block-1 output in *f_x when given.
  Tensor stem_forward(const Tensor& x, NormMode mode, Tensor* f_x = nullptr);
  // A from F_S: global refine plus per-strip refine, then GeM over width.
  Tensor appearance_feature(const Tensor& f_s, NormMode mode, SpatialRefine::Output* global = nullptr);
  // M from F: GeM over width, dilated temporal convs, MTA attention, max over time and scale.
  Tensor temporal_feature(const Tensor& f, Tensor* f_t = nullptr, Tensor* s_t = nullptr);
  SilhouetteFeatures forward(const Tensor& x, NormMode mode);

  void collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) override;

  SilhouetteConfig config;
  std::array<Conv, 4> stem_convs;
  std::array<BatchNorm, 4> stem_bns;
  SpatialRefine global_refine;
  std::vector<SpatialRefine> local_refine;
  Parameter gem_spatial;   // raw exponent
  Parameter gem_temporal;  // raw exponent
  std::array<Conv, 3> temporal_convs;
  Conv mta0, mta1;
};

}  // namespace trigait
