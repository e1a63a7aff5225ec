#include <cmath>

#include "trigait/ops.hpp"

namespace trigait {

namespace {

struct AxisLayout {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLayout layout_around(const Shape& shape, std::size_t axis) {
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

std::size_t checked_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error("softmax axis out of range");
  return static_cast<std::size_t>(axis);
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  NormMode mode, double momentum, double eps) {
  if (x.rank() < 2) throw Error("batch_norm expects [N, C, ...], got " + shape_str(x.shape()));
  const AxisLayout l = layout_around(x.shape(), 1);
  const std::size_t C = l.extent;
  if (gamma.numel() != C || beta.numel() != C || stats.mean.size() != C || stats.var.size() != C) {
    throw Error("batch_norm parameters do not match channel extent " + std::to_string(C));
  }
  const std::size_t count = l.outer * l.inner;
  if (mode == NormMode::Train && count == 0) throw Error("batch_norm on an empty batch in train mode");

  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> mu(C), inv_std(C);
  if (mode == NormMode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < l.outer; ++o) {
        const double* row = px + (o * C + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) s += row[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t o = 0; o < l.outer; ++o) {
        const double* row = px + (o * C + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) ss += (row[i] - m) * (row[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * m;
      stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
    }
  }

  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (o * C + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        const double h = (px[base + i] - mu[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = pg[c] * h + pb[c];
      }
    }

  const bool train = mode == NormMode::Train;
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [l, C, count, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](
          const TensorImpl& res, std::span<TensorImpl* const> in) {
        auto gx = grad_sink(*in[0]);
        auto gg = grad_sink(*in[1]);
        auto gb = grad_sink(*in[2]);
        const double* gy = res.grad.data();
        const double* pg = in[1]->data.data();
        for (std::size_t c = 0; c < C; ++c) {
          double sum_gy = 0.0;
          double sum_gy_h = 0.0;
          for (std::size_t o = 0; o < l.outer; ++o) {
            const std::size_t base = (o * C + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) {
              sum_gy += gy[base + i];
              sum_gy_h += gy[base + i] * xhat[base + i];
            }
          }
          if (!gg.empty()) gg[c] += sum_gy_h;
          if (!gb.empty()) gb[c] += sum_gy;
          if (gx.empty()) continue;
          const double scale = pg[c] * inv_std[c];
          const double n = static_cast<double>(count);
          for (std::size_t o = 0; o < l.outer; ++o) {
            const std::size_t base = (o * C + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) {
              if (train) {
                gx[base + i] += scale * (gy[base + i] - sum_gy / n - xhat[base + i] * sum_gy_h / n);
              } else {
                gx[base + i] += scale * gy[base + i];
              }
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisLayout l = layout_around(x.shape(), checked_axis(axis, x.rank()));
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      double m = px[base];
      for (std::size_t k = 1; k < l.extent; ++k) m = std::max(m, px[base + k * l.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) {
        const double e = std::exp(px[base + k * l.inner] - m);
        out[base + k * l.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] /= s;
    }
  return make_result(x.shape(), std::move(out), {x},
                     [l](const TensorImpl& res, std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       const double* y = res.data.data();
                       const double* gy = res.grad.data();
                       for (std::size_t o = 0; o < l.outer; ++o)
                         for (std::size_t i = 0; i < l.inner; ++i) {
                           const std::size_t base = o * l.extent * l.inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < l.extent; ++k)
                             dot += gy[base + k * l.inner] * y[base + k * l.inner];
                           for (std::size_t k = 0; k < l.extent; ++k) {
                             const std::size_t at = base + k * l.inner;
                             gx[at] += y[at] * (gy[at] - dot);
                           }
                         }
                     });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisLayout l = layout_around(x.shape(), checked_axis(axis, x.rank()));
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.extent * l.inner + i;
      double m = px[base];
      for (std::size_t k = 1; k < l.extent; ++k) m = std::max(m, px[base + k * l.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) s += std::exp(px[base + k * l.inner] - m);
      const double lse = m + std::log(s);
      for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] = px[base + k * l.inner] - lse;
    }
  return make_result(x.shape(), std::move(out), {x},
                     [l](const TensorImpl& res, std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       const double* y = res.data.data();
                       const double* gy = res.grad.data();
                       for (std::size_t o = 0; o < l.outer; ++o)
                         for (std::size_t i = 0; i < l.inner; ++i) {
                           const std::size_t base = o * l.extent * l.inner + i;
                           double total = 0.0;
                           for (std::size_t k = 0; k < l.extent; ++k) total += gy[base + k * l.inner];
                           for (std::size_t k = 0; k < l.extent; ++k) {
                             const std::size_t at = base + k * l.inner;
                             gx[at] += gy[at] - std::exp(y[at]) * total;
                           }
                         }
                     });
}

}  // namespace trigait
