#include "trigait/model.hpp"

#include <cmath>
#include <sstream>

namespace trigait {

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> errors;
  if (frame_size == 0 || frame_size % 4 || synth::kFrameSize % frame_size) {
    errors.push_back("frame_size must divide 64 and be a multiple of 4 (got " + std::to_string(frame_size) + ")");
  } else {
    if (silhouette.parts == 0 || feature_rows() % silhouette.parts) {
      errors.push_back("silhouette parts " + std::to_string(silhouette.parts) + " must divide feature height " +
                       std::to_string(feature_rows()));
    }
    if (skeleton.parts != feature_rows()) {
      errors.push_back("skeleton parts " + std::to_string(skeleton.parts) + " must equal feature height " +
                       std::to_string(feature_rows()));
    }
    if (frame_size < body_parts().size()) errors.push_back("frame_size must be at least 7 for the part bands");
  }
  for (std::size_t c : silhouette.channels) {
    if (c == 0) errors.push_back("silhouette channels must be positive");
  }
  if (silhouette.reduction == 0 || silhouette.channels[3] % silhouette.reduction) {
    errors.push_back("silhouette reduction " + std::to_string(silhouette.reduction) + " must divide " +
                     std::to_string(silhouette.channels[3]));
  }
  for (std::size_t c : skeleton.channels) {
    if (skeleton.heads == 0 || c == 0 || c % skeleton.heads) {
      errors.push_back("skeleton channels " + std::to_string(c) + " must be a positive multiple of heads " +
                       std::to_string(skeleton.heads));
    }
  }
  if (fusion_heads == 0 || embed_dim == 0 || embed_dim % fusion_heads) {
    errors.push_back("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of fusion heads " +
                     std::to_string(fusion_heads));
  }
  if (fusion_layers == 0) errors.push_back("fusion_layers must be positive");
  if (num_classes == 0) errors.push_back("num_classes must be positive");
  if (!std::isfinite(alpha_init)) errors.push_back("alpha must be finite");
  if (!(silhouette.gem_p_init > 1e-3) || !std::isfinite(silhouette.gem_p_init)) {
    errors.push_back("gem_p_init must be finite and above 0.001");
  }
  for (std::size_t d : silhouette.dilations) {
    if (d == 0) errors.push_back("temporal dilations must be positive");
  }
  if (!(skeleton.coord_scale > 0.0) || !std::isfinite(skeleton.coord_scale)) errors.push_back("coord_scale must be positive");
  return errors;
}

void ModelConfig::validate() const {
  const auto errors = problems();
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid model configuration:";
    for (const auto& e : errors) os << "\n  - " << e;
    throw Error(os.str());
  }
}

std::string model_signature(const ModelConfig& c) {
  std::ostringstream os;
  auto list = [&](const auto& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  os << "frame_size=" << c.frame_size << ";sil_channels=";
  list(c.silhouette.channels);
  os << ";dilations=";
  list(c.silhouette.dilations);
  os << ";sil_parts=" << c.silhouette.parts << ";sil_reduction=" << c.silhouette.reduction << ";ske_channels=";
  list(c.skeleton.channels);
  os << ";ske_heads=" << c.skeleton.heads << ";ske_parts=" << c.skeleton.parts << ";fusion_heads=" << c.fusion_heads
     << ";fusion_layers=" << c.fusion_layers << ";embed_dim=" << c.embed_dim
     << ";partition=" << partition_mode_name(c.partition);
  return os.str();
}

std::uint64_t model_config_hash(const ModelConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : model_signature(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> downsample_silhouette(const synth::SilhouetteSequence& s, std::size_t size) {
  if (size == 0 || s.height % size || s.width % size) {
    throw Error("downsample: " + std::to_string(s.height) + "x" + std::to_string(s.width) + " not divisible into " +
                std::to_string(size));
  }
  const std::size_t fy = s.height / size, fx = s.width / size;
  const double inv = 1.0 / static_cast<double>(fy * fx);
  std::vector<double> out(s.frames * size * size, 0.0);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        if (s.pixels[(t * s.height + y) * s.width + x]) out[(t * size + y / fy) * size + x / fx] += inv;
      }
  return out;
}

ModelInputs prepare_inputs(const std::vector<synth::RenderedSequence>& batch, const ModelConfig& config) {
  if (batch.empty()) throw Error("prepare_inputs: empty batch");
  const std::size_t frames = batch[0].silhouette.frames;
  const std::size_t s = config.frame_size;
  std::vector<double> sil;
  std::vector<Tensor> ske;
  ModelInputs in;
  for (const auto& seq : batch) {
    if (seq.silhouette.frames != frames || seq.skeleton.frames != frames) {
      throw Error("prepare_inputs: all sequences in a batch need " + std::to_string(frames) + " frames");
    }
    const auto d = downsample_silhouette(seq.silhouette, s);
    sil.insert(sil.end(), d.begin(), d.end());
    ske.push_back(multi_input(seq.skeleton, config.skeleton.coord_scale));
    in.ranges.push_back(partition_ranges(config.partition, seq.skeleton, s));
  }
  in.silhouettes = Tensor({batch.size(), 1, frames, s, s}, std::move(sil));
  in.skeletons = stack(ske, 0);
  return in;
}

TriGaitModel::TriGaitModel(const ModelConfig& c, std::uint64_t seed) : config(c) {
  c.validate();
  Rng rng(mix_seed(seed, 0x7219a17ULL));
  sil = SilhouetteBranch(c.silhouette, rng);
  ske = SkeletonBranch(c.skeleton, rng);
  FusionConfig fc;
  fc.token_channels = c.silhouette.channels[0] + c.skeleton.channels[0];
  fc.dim = c.embed_dim;
  fc.heads = c.fusion_heads;
  fc.layers = c.fusion_layers;
  fuse = FusionBranch(fc, rng);
  alpha = Parameter("assemble.alpha", Tensor({1}, {c.alpha_init}));
  const std::size_t din = 2 * c.silhouette.out_channels() + c.skeleton.out_channels();
  const std::size_t p1 = c.unimodal_parts();
  fc_weight = Parameter("assemble.fc.weight", init_uniform({p1, din, c.embed_dim}, 1.0 / std::sqrt(double(din)), rng));
  fc_bias = Parameter("assemble.fc.bias", Tensor::zeros({p1, c.embed_dim}));
  classifier = Linear("classifier", c.embed_dim, c.num_classes, rng, false);
}

Tensor TriGaitModel::assemble(const Tensor& gait_sil, const Tensor& gait_ske, const Tensor& gait_fuse,
                              Tensor* gait_prime) const {
  const std::size_t p1 = fc_weight.value.dim(0), din = fc_weight.value.dim(1), e = fc_weight.value.dim(2);
  if (gait_sil.rank() != 3 || gait_ske.rank() != 3 || gait_fuse.rank() != 3 || gait_sil.dim(2) != p1 ||
      gait_ske.dim(2) != p1 || gait_sil.dim(1) + gait_ske.dim(1) != din || gait_fuse.dim(1) != e ||
      gait_sil.dim(0) != gait_ske.dim(0) || gait_sil.dim(0) != gait_fuse.dim(0)) {
    throw Error("assemble: incompatible Gait_sil " + shape_str(gait_sil.shape()) + ", Gait_ske " +
                shape_str(gait_ske.shape()) + ", Gait_fuse " + shape_str(gait_fuse.shape()) + " for FC " +
                shape_str(fc_weight.value.shape()));
  }
  const Tensor cat = concat({gait_sil, gait_ske * alpha.value}, 1);                      // [N, Din, P1]
  const Tensor per_part = matmul(permute(cat, {2, 0, 1}), fc_weight.value);             // [P1, N, E]
  const Tensor prime = permute(per_part + reshape(fc_bias.value, {p1, 1, e}), {1, 2, 0});  // [N, E, P1]
  if (gait_prime) *gait_prime = prime;
  return concat({prime, gait_fuse}, 2);
}

ModelOutput TriGaitModel::forward(const ModelInputs& in, NormMode mode) {
  ModelOutput out;
  out.sil = sil.forward(in.silhouettes, mode);
  out.ske = ske.forward(in.skeletons, mode);
  out.tokens = cross_modal_tokens(out.sil.f_x, out.ske.f_y, in.ranges, body_parts());
  out.gait_fuse = fuse.forward(out.tokens);
  out.embedding = assemble(out.sil.gait, out.ske.gait, out.gait_fuse, &out.gait_prime);
  return out;
}

void TriGaitModel::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  sil.collect(params, buffers);
  ske.collect(params, buffers);
  fuse.collect(params, buffers);
  params.push_back(&alpha);
  params.push_back(&fc_weight);
  params.push_back(&fc_bias);
  classifier.collect(params, buffers);
}

Tensor pairwise_distance(const Tensor& x) {
  if (x.rank() != 3) throw Error("pairwise_distance: expected [G, N, D], got " + shape_str(x.shape()));
  const std::size_t g = x.dim(0), n = x.dim(1), d = x.dim(2);
  const auto& xs = x.values();
  std::vector<double> out(g * n * n, 0.0);
  for (std::size_t p = 0; p < g; ++p)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        const double* a = &xs[(p * n + i) * d];
        const double* b = &xs[(p * n + j) * d];
        for (std::size_t k = 0; k < d; ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
        out[(p * n + i) * n + j] = std::sqrt(std::max(acc, 1e-12));
      }
  return make_result({g, n, n}, std::move(out), {x}, [g, n, d](const TensorImpl& o, std::span<TensorImpl* const> in) {
    const auto& xs = in[0]->data;
    auto gx = grad_sink(*in[0]);
    for (std::size_t p = 0; p < g; ++p)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t oi = (p * n + i) * n + j;
          const double gr = o.grad[oi];
          const double dist = o.data[oi];
          if (gr == 0.0 || dist * dist <= 1e-12) continue;
          const double s = gr / dist;
          for (std::size_t k = 0; k < d; ++k) {
            const double diff = xs[(p * n + i) * d + k] - xs[(p * n + j) * d + k];
            gx[(p * n + i) * d + k] += s * diff;
            gx[(p * n + j) * d + k] -= s * diff;
          }
        }
  });
}

TripletResult triplet_ba_loss(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, double margin) {
  if (embeddings.rank() != 3 || embeddings.dim(0) != labels.size()) {
    throw Error("triplet loss: expected [N, E, P] with N labels, got " + shape_str(embeddings.shape()) + " and " +
                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size(), parts = embeddings.dim(2);
  const Tensor dist = pairwise_distance(permute(embeddings, {2, 0, 1}));  // [P, N, N]
  const auto& ds = dist.values();

  std::size_t per_part = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t q = 0; q < n; ++q) per_part += labels[q] != labels[a];
    }
  if (per_part == 0) throw Error("triplet loss: batch has no valid (anchor, positive, negative) triplet");

  std::vector<double> part_loss(parts, 0.0);
  std::vector<std::size_t> active(parts, 0);
  for (std::size_t k = 0; k < parts; ++k) {
    const double* d = &ds[k * n * n];
    double sum = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t p = 0; p < n; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (std::size_t q = 0; q < n; ++q) {
          if (labels[q] == labels[a]) continue;
          const double term = margin + d[a * n + p] - d[a * n + q];
          if (term > 0.0) {
            sum += term;
            ++active[k];
          }
        }
      }
    part_loss[k] = active[k] ? sum / static_cast<double>(active[k]) : 0.0;
  }
  double total = 0.0;
  std::size_t total_active = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    total += part_loss[k];
    total_active += active[k];
  }
  total /= static_cast<double>(parts);

  TripletResult result;
  result.triplets = per_part;
  result.active_fraction = static_cast<double>(total_active) / static_cast<double>(per_part * parts);
  result.loss = make_result({}, {total}, {dist},
                            [labels, margin, n, parts, active](const TensorImpl& o, std::span<TensorImpl* const> in) {
                              const auto& ds = in[0]->data;
                              auto gd = grad_sink(*in[0]);
                              const double g = o.grad[0];
                              for (std::size_t k = 0; k < parts; ++k) {
                                if (!active[k]) continue;
                                const double w = g / (static_cast<double>(parts) * static_cast<double>(active[k]));
                                const double* d = &ds[k * n * n];
                                double* gk = &gd[k * n * n];
                                for (std::size_t a = 0; a < n; ++a)
                                  for (std::size_t p = 0; p < n; ++p) {
                                    if (p == a || labels[p] != labels[a]) continue;
                                    for (std::size_t q = 0; q < n; ++q) {
                                      if (labels[q] == labels[a]) continue;
                                      if (margin + d[a * n + p] - d[a * n + q] > 0.0) {
                                        gk[a * n + p] += w;
                                        gk[a * n + q] -= w;
                                      }
                                    }
                                  }
                              }
                            });
  return result;
}

Tensor ce_loss(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, const Linear& classifier) {
  if (embeddings.rank() != 3 || embeddings.dim(0) != labels.size()) {
    throw Error("ce loss: expected [N, E, P] with N labels, got " + shape_str(embeddings.shape()));
  }
  const std::size_t n = labels.size(), classes = classifier.weight.value.dim(1);
  std::vector<double> onehot(n * classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) {
      throw Error("ce loss: label " + std::to_string(labels[i]) + " outside " + std::to_string(classes) + " classes");
    }
    onehot[i * classes + labels[i]] = 1.0;
  }
  const Tensor logp = log_softmax(classifier.forward(mean(embeddings, {2})), 1);
  return mul_scalar(sum_all(logp * Tensor({n, classes}, std::move(onehot))), -1.0 / static_cast<double>(n));
}

LossTerms combined_loss(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, const Linear& classifier,
                        double margin) {
  auto tri = triplet_ba_loss(embeddings, labels, margin);
  Tensor ce = ce_loss(embeddings, labels, classifier);
  LossTerms out;
  out.total = tri.loss + ce;
  out.report.l_tri = tri.loss.item();
  out.report.l_ce = ce.item();
  out.report.l = out.total.item();
  out.report.active_fraction = tri.active_fraction;
  return out;
}

}  // namespace trigait
