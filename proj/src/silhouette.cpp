#include "trigait/silhouette.hpp"

#include <cmath>
#include <string>

namespace trigait {

Tensor gem_pool(const Tensor& x, const Tensor& p) {
  if (p.numel() != 1) throw Error("gem_pool: exponent must have one element, got " + shape_str(p.shape()));
  if (x.rank() < 1) throw Error("gem_pool: input must have rank >= 1");
  const double pv = p.item();
  if (!(pv > 0.0)) throw Error("gem_pool: exponent must be positive");
  const std::size_t w = x.shape().back();
  const std::size_t rows = x.numel() / w;
  const auto& xs = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      const double v = xs[r * w + i];
      if (v < 0.0) throw Error("gem_pool: negative input " + std::to_string(v) + " at element " + std::to_string(r * w + i));
      acc += std::pow(v, pv);
    }
    out[r] = std::pow(acc / static_cast<double>(w), 1.0 / pv);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  return make_result(shape, std::move(out), {x, p}, [w, rows, pv](const TensorImpl& o, std::span<TensorImpl* const> in) {
    const auto& xs = in[0]->data;
    auto gx = grad_sink(*in[0]);
    auto gp = grad_sink(*in[1]);
    const double inv_w = 1.0 / static_cast<double>(w);
    double dp = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double y = o.data[r];
      const double g = o.grad[r];
      if (y <= 0.0 || g == 0.0) continue;
      if (!gx.empty()) {
        for (std::size_t i = 0; i < w; ++i) {
          const double v = xs[r * w + i];
          if (v > 0.0) gx[r * w + i] += g * std::pow(v / y, pv - 1.0) * inv_w;
        }
      }
      if (!gp.empty()) {
        double m = 0.0, s = 0.0;
        for (std::size_t i = 0; i < w; ++i) {
          const double v = xs[r * w + i];
          if (v > 0.0) {
            const double vp = std::pow(v, pv);
            m += vp;
            s += vp * std::log(v);
          }
        }
        m *= inv_w;
        s *= inv_w;
        dp += g * y * (s / (pv * m) - std::log(m) / (pv * pv));
      }
    }
    if (!gp.empty()) gp[0] += dp;
  });
}

Tensor gem_exponent(const Tensor& raw) { return add_scalar(softplus(raw), 1e-3); }

double gem_raw_for(double p) { return std::log(std::expm1(p - 1e-3)); }

Tensor max_pool2x2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2 || s[s.size() - 1] % 2 || s[s.size() - 2] % 2) {
    throw Error("max_pool2x2: last two extents must be even, got " + shape_str(s));
  }
  Shape split(s.begin(), s.end() - 2);
  split.insert(split.end(), {s[s.size() - 2] / 2, 2, s[s.size() - 1] / 2, 2});
  return max(reshape(x, split), {-3, -1});
}

SpatialRefine::SpatialRefine(const std::string& name, std::size_t channels, std::size_t reduction, Rng& rng) {
  if (reduction == 0 || channels % reduction) {
    throw Error("spatial refine: channels " + std::to_string(channels) + " not divisible by reduction " +
                std::to_string(reduction));
  }
  const std::size_t mid = channels / reduction;
  reduce = Conv(name + ".reduce", {channels, mid, {1, 1}, {1, 1}, {0, 0}, false}, rng);
  dilated0 = Conv(name + ".dilated0", {mid, mid, {3, 3}, {2, 2}, {2, 2}, false}, rng);
  dilated1 = Conv(name + ".dilated1", {mid, mid, {3, 3}, {2, 2}, {2, 2}, false}, rng);
  expand = Conv(name + ".expand", {mid, 1, {1, 1}, {1, 1}, {0, 0}, false}, rng);
  bn = BatchNorm(name + ".bn", 1);
}

SpatialRefine::Output SpatialRefine::forward(const Tensor& f_s, NormMode mode) {
  if (f_s.rank() != 4 || f_s.dim(1) != reduce.spec.in_channels) {
    throw Error("spatial refine: expected [N, " + std::to_string(reduce.spec.in_channels) + ", h, w], got " +
                shape_str(f_s.shape()));
  }
  Tensor s = expand.forward(dilated1.forward(dilated0.forward(reduce.forward(f_s))));
  Tensor attention = sigmoid(bn.forward(s, mode));
  return {f_s + f_s * attention, attention};
}

void SpatialRefine::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  reduce.collect(params, buffers);
  dilated0.collect(params, buffers);
  dilated1.collect(params, buffers);
  expand.collect(params, buffers);
  bn.collect(params, buffers);
}

SilhouetteBranch::SilhouetteBranch(const SilhouetteConfig& c, Rng& rng) : config(c) {
  std::size_t in = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = "sil.stem" + std::to_string(i);
    stem_convs[i] = Conv(name + ".conv", {in, c.channels[i], {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false}, rng);
    stem_bns[i] = BatchNorm(name + ".bn", c.channels[i]);
    in = c.channels[i];
  }
  const std::size_t ch = c.out_channels();
  if (c.parts == 0) throw Error("silhouette branch: parts must be positive");
  global_refine = SpatialRefine("sil.refine.global", ch, c.reduction, rng);
  for (std::size_t i = 0; i < c.parts; ++i) {
    local_refine.emplace_back("sil.refine.local" + std::to_string(i), ch, c.reduction, rng);
  }
  gem_spatial = Parameter("sil.gem_spatial.p", Tensor({1}, {gem_raw_for(c.gem_p_init)}));
  gem_temporal = Parameter("sil.gem_temporal.p", Tensor({1}, {gem_raw_for(c.gem_p_init)}));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t d = c.dilations[i];
    temporal_convs[i] = Conv("sil.temporal" + std::to_string(i), {ch, ch, {3, 1}, {d, 1}, {d, 0}, false}, rng);
  }
  mta0 = Conv("sil.mta0", {ch, ch, {3, 3}, {1, 1}, {1, 1}, false}, rng);
  mta1 = Conv("sil.mta1", {ch, ch, {3, 3}, {1, 1}, {1, 1}, false}, rng);
}

Tensor SilhouetteBranch::stem_forward(const Tensor& x, NormMode mode, Tensor* f_x) {
  if (x.rank() != 5 || x.dim(1) != 1) throw Error("silhouette stem: expected [N, 1, T, H, W], got " + shape_str(x.shape()));
  if (x.dim(2) < 3) throw Error("silhouette stem: need at least 3 frames, got " + std::to_string(x.dim(2)));
  Tensor h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    h = stem_bns[i].forward(stem_convs[i].forward(h), mode);
    // The last block feeds GeM, which needs non-negative inputs.
    h = i == 3 ? relu(h) : leaky_relu(h, 0.01);
    if (i == 0 && f_x) *f_x = h;
    if (i < 2) h = max_pool2x2(h);
  }
  return h;
}

Tensor SilhouetteBranch::appearance_feature(const Tensor& f_s, NormMode mode, SpatialRefine::Output* global) {
  const std::size_t height = f_s.dim(2);
  if (height % config.parts) {
    throw Error("appearance feature: height " + std::to_string(height) + " not divisible by " +
                std::to_string(config.parts) + " parts");
  }
  const std::size_t strip = height / config.parts;
  auto g = global_refine.forward(f_s, mode);
  std::vector<Tensor> strips;
  for (std::size_t i = 0; i < config.parts; ++i) {
    strips.push_back(local_refine[i].forward(narrow(f_s, 2, i * strip, strip), mode).refined);
  }
  Tensor a = gem_pool(g.refined + concat(strips, 2), gem_exponent(gem_spatial.value));
  if (global) *global = g;
  return a;
}

Tensor SilhouetteBranch::temporal_feature(const Tensor& f, Tensor* f_t, Tensor* s_t) {
  if (f.rank() != 5) throw Error("temporal feature: expected [N, C, T, H, W], got " + shape_str(f.shape()));
  if (f.dim(2) < 5) throw Error("temporal feature: need at least 5 frames, got " + std::to_string(f.dim(2)));
  const Tensor pooled = gem_pool(f, gem_exponent(gem_temporal.value));  // [N, C, T, H]
  std::vector<Tensor> scales;
  for (auto& c : temporal_convs) scales.push_back(c.forward(pooled));
  const Tensor ft = stack(scales, 4);  // [N, C, T, H, 3]
  const Shape& s = ft.shape();
  const Tensor flat = reshape(ft, {s[0], s[1], s[2], s[3] * 3});
  const Tensor st = sigmoid(reshape(mta1.forward(mta0.forward(flat)), s));
  if (f_t) *f_t = ft;
  if (s_t) *s_t = st;
  return max(ft * st, {2, 4});
}

SilhouetteFeatures SilhouetteBranch::forward(const Tensor& x, NormMode mode) {
  SilhouetteFeatures out;
  out.stem = stem_forward(x, mode, &out.f_x);
  out.f_s = max(out.stem, {2});
  SpatialRefine::Output g;
  out.appearance = appearance_feature(out.f_s, mode, &g);
  out.f_s_refined = g.refined;
  out.s_a = g.attention;
  out.motion = temporal_feature(out.stem, &out.f_t, &out.s_t);
  out.gait = concat({out.appearance, out.motion}, 1);
  return out;
}

void SilhouetteBranch::collect(std::vector<Parameter*>& params, std::vector<Buffer>& buffers) {
  for (std::size_t i = 0; i < 4; ++i) {
    stem_convs[i].collect(params, buffers);
    stem_bns[i].collect(params, buffers);
  }
  global_refine.collect(params, buffers);
  for (auto& l : local_refine) l.collect(params, buffers);
  params.push_back(&gem_spatial);
  params.push_back(&gem_temporal);
  for (auto& c : temporal_convs) c.collect(params, buffers);
  mta0.collect(params, buffers);
  mta1.collect(params, buffers);
}

}  // namespace trigait
