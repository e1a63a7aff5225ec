#include "trigait/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace trigait {

using synth::kNumJoints;

const std::vector<PartDef>& body_parts() {
  static const std::vector<PartDef> parts = {
      {"head", {0, 1, 2, 3, 4}}, {"shoulder", {5, 6}}, {"elbow", {7, 8}}, {"wrist", {9, 10}},
      {"hip", {11, 12}},         {"knee", {13, 14}},   {"ankle", {15, 16}},
  };
  return parts;
}

std::string partition_mode_name(PartitionMode m) { return m == PartitionMode::Motion ? "motion" : "uniform"; }

PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "motion") return PartitionMode::Motion;
  if (s == "uniform") return PartitionMode::Uniform;
  throw Error("unknown partition mode '" + s + "' (expected motion or uniform)");
}

std::vector<double> neck_normalize(const std::vector<double>& joints, std::size_t frames) {
  const std::size_t K = kNumJoints;
  if (joints.size() != frames * K * 2) throw Error("neck_normalize: joint buffer does not match frame count");
  std::vector<double> out(joints.size());
  for (std::size_t t = 0; t < frames; ++t) {
    const double* f = &joints[t * K * 2];
    const double ou = (f[11 * 2] + f[12 * 2]) / 2, ov = (f[11 * 2 + 1] + f[12 * 2 + 1]) / 2;
    const double neck = (f[5 * 2 + 1] + f[6 * 2 + 1]) / 2 - ov;
    if (!(std::abs(neck) > 1e-12)) throw Error("neck_normalize: zero neck height at frame " + std::to_string(t));
    const double s = 1.0 / std::abs(neck);
    for (std::size_t k = 0; k < K; ++k) {
      out[(t * K + k) * 2] = (f[k * 2] - ou) * s;
      out[(t * K + k) * 2 + 1] = (f[k * 2 + 1] - ov) * s;
    }
  }
  return out;
}

std::vector<PartRange> motion_ranges(const std::vector<double>& y, std::size_t frames, const std::vector<PartDef>& parts,
                                     std::size_t rows) {
  const std::size_t K = kNumJoints;
  if (frames == 0) throw Error("motion_ranges: need at least one frame");
  if (rows == 0) throw Error("motion_ranges: feature height must be positive");
  if (y.size() != frames * K * 2) throw Error("motion_ranges: joint buffer does not match frame count");
  double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
  for (std::size_t i = 1; i < y.size(); i += 2) {
    gmin = std::min(gmin, y[i]);
    gmax = std::max(gmax, y[i]);
  }
  const double span = gmax - gmin;
  const double top = static_cast<double>(rows - 1);
  std::vector<PartRange> out;
  for (const auto& part : parts) {
    if (part.joints.empty()) throw Error("motion_ranges: part '" + part.name + "' has no joints");
    PartRange r;
    r.h_f = std::numeric_limits<double>::infinity();
    r.h_e = -r.h_f;
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t k : part.joints) {
        if (k >= K) throw Error("motion_ranges: joint index " + std::to_string(k) + " out of range");
        const double v = y[(t * K + k) * 2 + 1];
        r.h_f = std::min(r.h_f, v);
        r.h_e = std::max(r.h_e, v);
      }
    }
    if (span > 0.0) {
      // The small slack keeps exact row positions from rounding outward through float noise.
      const double lo = std::floor((r.h_f - gmin) / span * top + 1e-9);
      const double hi = std::ceil((r.h_e - gmin) / span * top - 1e-9);
      r.row_lo = static_cast<std::size_t>(std::clamp(lo, 0.0, top));
      r.row_hi = static_cast<std::size_t>(std::clamp(hi, 0.0, top));
      r.row_hi = std::max(r.row_hi, r.row_lo);
    } else {
      r.row_lo = 0;
      r.row_hi = rows - 1;
    }
    out.push_back(r);
  }
  return out;
}

std::vector<PartRange> uniform_partition_ranges(std::size_t rows, std::size_t count) {
  if (count == 0) throw Error("uniform partition: need at least one band");
  if (rows < count) throw Error("uniform partition: " + std::to_string(rows) + " rows cannot hold " +
                                std::to_string(count) + " bands");
  const std::size_t base = rows / count, extra = rows % count;
  std::vector<PartRange> out;
  std::size_t row = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t h = base + (i < extra ? 1 : 0);
    PartRange r;
    r.row_lo = row;
    r.row_hi = row + h - 1;
    r.h_f = static_cast<double>(r.row_lo) / static_cast<double>(rows);
    r.h_e = static_cast<double>(r.row_hi + 1) / static_cast<double>(rows);
    out.push_back(r);
    row += h;
  }
  return out;
}

std::vector<PartRange> partition_ranges(PartitionMode mode, const synth::SkeletonSequence& seq, std::size_t rows) {
  if (mode == PartitionMode::Uniform) return uniform_partition_ranges(rows, body_parts().size());
  return motion_ranges(neck_normalize(seq.joints, seq.frames), seq.frames, body_parts(), rows);
}

std::string ranges_tsv(const std::vector<PartRange>& ranges, const std::vector<PartDef>& parts) {
  std::ostringstream os;
  os.precision(9);
  os << "part\tH_f\tH_e\trow_lo\trow_hi\n";
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    os << (i < parts.size() ? parts[i].name : std::to_string(i)) << '\t' << ranges[i].h_f << '\t' << ranges[i].h_e
       << '\t' << ranges[i].row_lo << '\t' << ranges[i].row_hi << '\n';
  }
  return os.str();
}

Tensor part_pool(const Tensor& x, const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& ranges) {
  if (x.rank() != 5) throw Error("part_pool: expected [N, C, T, R, W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), rows = x.dim(3), w = x.dim(4);
  if (ranges.size() != n) throw Error("part_pool: need one range list per sample");
  const std::size_t parts = ranges.empty() ? 0 : ranges[0].size();
  for (const auto& list : ranges) {
    if (list.size() != parts || parts == 0) throw Error("part_pool: every sample needs the same non-zero part count");
    for (const auto& [lo, hi] : list) {
      if (lo > hi || hi >= rows) {
        throw Error("part_pool: row range [" + std::to_string(lo) + ", " + std::to_string(hi) + "] invalid for " +
                    std::to_string(rows) + " rows");
      }
    }
  }
  const auto& xs = x.values();
  std::vector<double> out(n * c * t * parts);
  // argmax offsets inside each input plane, kept for backward
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t f = 0; f < t; ++f) {
        const std::size_t plane = ((b * c + ch) * t + f) * rows * w;
        for (std::size_t p = 0; p < parts; ++p) {
          const auto [lo, hi] = ranges[b][p];
          double best = xs[plane + lo * w];
          std::size_t best_at = lo * w;
          double acc = 0.0;
          for (std::size_t i = lo * w; i < (hi + 1) * w; ++i) {
            const double v = xs[plane + i];
            acc += v;
            if (v > best) {
              best = v;
              best_at = i;
            }
          }
          const std::size_t o = ((b * c + ch) * t + f) * parts + p;
          out[o] = best + acc / static_cast<double>((hi - lo + 1) * w);
          (*argmax)[o] = best_at;
        }
      }
  return make_result({n, c, t, parts}, std::move(out), {x},
                     [ranges, argmax, n, c, t, rows, w, parts](const TensorImpl& o, std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t ch = 0; ch < c; ++ch)
                           for (std::size_t f = 0; f < t; ++f) {
                             const std::size_t plane = ((b * c + ch) * t + f) * rows * w;
                             for (std::size_t p = 0; p < parts; ++p) {
                               const std::size_t oi = ((b * c + ch) * t + f) * parts + p;
                               const double g = o.grad[oi];
                               const auto [lo, hi] = ranges[b][p];
                               const double share = g / static_cast<double>((hi - lo + 1) * w);
                               for (std::size_t i = lo * w; i < (hi + 1) * w; ++i) gx[plane + i] += share;
                               gx[plane + (*argmax)[oi]] += g;
                             }
                           }
                     });
}

Tensor cross_modal_tokens(const Tensor& f_x, const Tensor& f_y, const std::vector<std::vector<PartRange>>& ranges,
                          const std::vector<PartDef>& parts) {
  if (f_x.rank() != 5 || f_y.rank() != 4 || f_x.dim(0) != f_y.dim(0) || f_x.dim(2) != f_y.dim(2)) {
    throw Error("cross_modal_tokens: incompatible f_X " + shape_str(f_x.shape()) + " and f_Y " + shape_str(f_y.shape()));
  }
  const std::size_t n = f_x.dim(0);
  if (ranges.size() != n) throw Error("cross_modal_tokens: need one range list per sample");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rows(n), joints(n);
  for (std::size_t b = 0; b < n; ++b) {
    if (ranges[b].size() != parts.size()) throw Error("cross_modal_tokens: range count differs from part count");
    for (std::size_t p = 0; p < parts.size(); ++p) {
      rows[b].emplace_back(ranges[b][p].row_lo, ranges[b][p].row_hi);
      const auto& js = parts[p].joints;
      if (js.empty()) throw Error("cross_modal_tokens: part '" + parts[p].name + "' has no joints");
      for (std::size_t i = 1; i < js.size(); ++i) {
        if (js[i] != js[i - 1] + 1) throw Error("cross_modal_tokens: joints of '" + parts[p].name + "' must be contiguous");
      }
      joints[b].emplace_back(js.front(), js.back());
    }
  }
  const Tensor xs = part_pool(f_x, rows);
  const Tensor ys = part_pool(unsqueeze(f_y, 4), joints);
  return concat({xs, ys}, 1);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t h, Rng& rng)
    : query(name + ".query", dim, dim, rng),
      key(name + ".key", dim, dim, rng),
      value(name + ".value", dim, dim, rng),
      output(name + ".output", dim, dim, rng),
      heads(h) {
  if (h == 0 || dim % h) throw Error("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(h) + " heads");
}

Tensor MultiHeadAttention::forward(const Tensor& x, Tensor* probs) const {
  if (x.rank() != 3) throw Error("attention: expected [B, L, D], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2), dk = d / heads;
  const Shape split = {b, l, heads, dk};
  const Tensor q = permute(reshape(query.forward(x), split), {0, 2, 1, 3});
  const Tensor kt = permute(reshape(key.forward(x), split), {0, 2, 3, 1});
  const Tensor v = permute(reshape(value.forward(x), split), {0, 2, 1, 3});
  const Tensor p = softmax(mul_scalar(matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(dk))), -1);
  if (probs) *probs = p;
  return output.forward(reshape(permute(matmul(p, v), {0, 2, 1, 3}), {b, l, d}));
}

void MultiHeadAttention::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  query.collect(params, buffers);
  key.collect(params, buffers);
  value.collect(params, buffers);
  output.collect(params, buffers);
}

TransformerLayer::TransformerLayer(const std::string& name, std::size_t dim, std::size_t heads, Rng& rng)
    : attention(name + ".attn", dim, heads, rng),
      norm1(name + ".norm1", dim),
      norm2(name + ".norm2", dim),
      ffn1(name + ".ffn1", dim, 2 * dim, rng),
      ffn2(name + ".ffn2", 2 * dim, dim, rng) {}

Tensor TransformerLayer::forward(const Tensor& x) const {
  const Tensor h = norm1.forward(x + attention.forward(x));
  return norm2.forward(h + ffn2.forward(relu(ffn1.forward(h))));
}

void TransformerLayer::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  attention.collect(params, buffers);
  norm1.collect(params, buffers);
  norm2.collect(params, buffers);
  ffn1.collect(params, buffers);
  ffn2.collect(params, buffers);
}

FusionBranch::FusionBranch(const FusionConfig& c, Rng& rng) : config(c), entry("fuse.entry", c.token_channels, c.dim, rng) {
  for (std::size_t i = 0; i < c.layers; ++i) layers.emplace_back("fuse.layer" + std::to_string(i), c.dim, c.heads, rng);
}

Tensor FusionBranch::forward(const Tensor& tokens) const {
  if (tokens.rank() != 4 || tokens.dim(1) != config.token_channels) {
    throw Error("fusion: expected [N, " + std::to_string(config.token_channels) + ", T, P], got " +
                shape_str(tokens.shape()));
  }
  const std::size_t n = tokens.dim(0), t = tokens.dim(2), p = tokens.dim(3);
  Tensor h = entry.forward(reshape(permute(tokens, {0, 2, 3, 1}), {n * t, p, config.token_channels}));
  for (const auto& layer : layers) h = layer.forward(h);
  return permute(max(reshape(h, {n, t, p, config.dim}), {1}), {0, 2, 1});
}

void FusionBranch::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  entry.collect(params, buffers);
  for (auto& l : layers) l.collect(params, buffers);
}

}  // namespace trigait
