#include "trigait/skeleton.hpp"

#include <cmath>
#include <string>

namespace trigait {

using synth::kNumJoints;
using synth::kParent;

Tensor multi_input(const std::vector<double>& joints, std::size_t frames, double scale) {
  const std::size_t K = kNumJoints;
  if (frames < 3) throw Error("multi_input: need at least 3 frames, got " + std::to_string(frames));
  if (joints.size() != frames * K * 2) {
    throw Error("multi_input: expected " + std::to_string(frames * K * 2) + " coordinates, got " +
                std::to_string(joints.size()));
  }
  const std::size_t plane = frames * K;
  std::vector<double> out(kMultiInputChannels * plane, 0.0);
  auto at = [&](std::size_t t, std::size_t k, std::size_t c) { return joints[(t * K + k) * 2 + c]; };
  auto put = [&](std::size_t ch, std::size_t t, std::size_t k, double v) { out[ch * plane + t * K + k] = v; };
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t c = 0; c < 2; ++c) {
        put(c, t, k, at(t, k, c) * scale);
        if (t + 1 < frames) put(2 + c, t, k, (at(t + 1, k, c) - at(t, k, c)) * scale);
        if (t + 2 < frames) put(4 + c, t, k, (at(t + 2, k, c) - at(t, k, c)) * scale);
      }
      const std::size_t parent = kParent[k];
      if (parent == k) continue;
      const double bu = at(t, k, 0) - at(t, parent, 0);
      const double bv = at(t, k, 1) - at(t, parent, 1);
      put(6, t, k, bu * scale);
      put(7, t, k, bv * scale);
      const double len = std::hypot(bu, bv);
      if (len > 1e-12) {
        put(8, t, k, bu / len);
        put(9, t, k, bv / len);
      }
    }
  }
  return Tensor({kMultiInputChannels, frames, K}, std::move(out));
}

Tensor multi_input(const synth::SkeletonSequence& seq, double scale) { return multi_input(seq.joints, seq.frames, scale); }

Tensor adaptive_pool_matrix(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw Error("adaptive pool: extents must be positive");
  std::vector<double> m(in * out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    const std::size_t lo = j * in / out;
    const std::size_t hi = ((j + 1) * in + out - 1) / out;
    for (std::size_t i = lo; i < hi; ++i) m[i * out + j] = 1.0 / static_cast<double>(hi - lo);
  }
  return Tensor({in, out}, std::move(m));
}

Tensor adaptive_avg_pool_last(const Tensor& x, std::size_t out) {
  if (x.rank() < 2) return reshape(matmul(reshape(x, {1, x.numel()}), adaptive_pool_matrix(x.numel(), out)), {out});
  return matmul(x, adaptive_pool_matrix(x.shape().back(), out));
}

JointSelfAttention::JointSelfAttention(const std::string& name, std::size_t in, std::size_t out, std::size_t h,
                                       Rng& rng)
    : heads(h) {
  if (h == 0 || out % h) {
    throw Error("joint self-attention: " + std::to_string(out) + " channels not divisible by " + std::to_string(h) +
                " heads");
  }
  const ConvSpec spec{in, out, {1, 1}, {1, 1}, {0, 0}, true};
  query = Conv(name + ".query", spec, rng);
  key = Conv(name + ".key", spec, rng);
  value = Conv(name + ".value", spec, rng);
}

Tensor JointSelfAttention::forward(const Tensor& x, Tensor* probs) const {
  if (x.rank() != 4 || x.dim(1) != query.spec.in_channels) {
    throw Error("joint self-attention: expected [N, " + std::to_string(query.spec.in_channels) + ", T, K], got " +
                shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = query.spec.out_channels, t = x.dim(2), k = x.dim(3);
  const std::size_t dk = c / heads;
  const Shape split = {n, heads, dk, t, k};
  const Tensor q = permute(reshape(query.forward(x), split), {0, 1, 3, 4, 2});     // [N, h, T, K, dk]
  const Tensor kt = permute(reshape(key.forward(x), split), {0, 1, 3, 2, 4});      // [N, h, T, dk, K]
  const Tensor v = permute(reshape(value.forward(x), split), {0, 1, 3, 4, 2});     // [N, h, T, K, dk]
  const Tensor p = softmax(mul_scalar(matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(dk))), -1);
  if (probs) *probs = p;
  return reshape(permute(matmul(p, v), {0, 1, 4, 2, 3}), {n, c, t, k});
}

void JointSelfAttention::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  query.collect(params, buffers);
  key.collect(params, buffers);
  value.collect(params, buffers);
}

JsaTcBlock::JsaTcBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t heads, Rng& rng)
    : jsa(name + ".jsa", in, out, heads, rng),
      bn_jsa(name + ".bn_jsa", out),
      tc(name + ".tc", {out, out, {3, 1}, {1, 1}, {1, 0}, false}, rng),
      bn_tc(name + ".bn_tc", out) {
  if (in != out) projection = Conv(name + ".residual", {in, out, {1, 1}, {1, 1}, {0, 0}, false}, rng);
}

Tensor JsaTcBlock::forward(const Tensor& x, NormMode mode, Tensor* probs) {
  Tensor h = leaky_relu(bn_jsa.forward(jsa.forward(x, probs), mode));
  h = leaky_relu(bn_tc.forward(tc.forward(h), mode));
  return h + (projection ? projection->forward(x) : x);
}

void JsaTcBlock::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  jsa.collect(params, buffers);
  bn_jsa.collect(params, buffers);
  tc.collect(params, buffers);
  bn_tc.collect(params, buffers);
  if (projection) projection->collect(params, buffers);
}

SkeletonBranch::SkeletonBranch(const SkeletonConfig& c, Rng& rng) : config(c) {
  std::size_t in = kMultiInputChannels;
  for (std::size_t i = 0; i < 4; ++i) {
    blocks[i] = JsaTcBlock("ske.block" + std::to_string(i), in, c.channels[i], c.heads, rng);
    in = c.channels[i];
  }
}

SkeletonFeatures SkeletonBranch::forward(const Tensor& input, NormMode mode) {
  if (input.rank() != 4 || input.dim(1) != kMultiInputChannels) {
    throw Error("skeleton branch: expected [N, 10, T, K], got " + shape_str(input.shape()));
  }
  SkeletonFeatures out;
  out.input = input;
  Tensor h = input;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor probs;
    h = blocks[i].forward(h, mode, &probs);
    out.attention.push_back(probs);
    if (i == 0) out.f_y = h;
  }
  out.blocks = h;
  out.f_ske = max(h, {2});
  out.gait = adaptive_avg_pool_last(out.f_ske, config.parts);
  return out;
}

void SkeletonBranch::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  for (auto& b : blocks) b.collect(params, buffers);
}

}  // namespace trigait
