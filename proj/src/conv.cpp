#include <algorithm>
#include <array>

#include "trigait/ops.hpp"
#include "trigait/parallel.hpp"

namespace trigait {

namespace {

// Everything is lifted to three spatial axes; missing leading axes have extent 1.
struct ConvGeometry {
  std::size_t batch = 0, cin = 0, cout = 0;
  std::array<std::size_t, 3> in{1, 1, 1}, k{1, 1, 1}, out{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1}, dil{1, 1, 1};
  std::array<long, 3> pad{0, 0, 0};

  std::size_t in_plane() const { return in[0] * in[1] * in[2]; }
  std::size_t out_plane() const { return out[0] * out[1] * out[2]; }
  std::size_t k_volume() const { return k[0] * k[1] * k[2]; }
};

std::vector<std::size_t> option_or(const std::vector<std::size_t>& v, std::size_t d, std::size_t fallback,
                                   const char* what) {
  if (v.empty()) return std::vector<std::size_t>(d, fallback);
  if (v.size() != d) {
    throw Error(std::string("conv ") + what + " needs " + std::to_string(d) + " entries");
  }
  return v;
}

ConvGeometry plan_conv(const Shape& in, const Shape& kernel, const ConvOptions& opt) {
  if (in.size() < 3 || in.size() > 5 || kernel.size() != in.size()) {
    throw Error("conv expects input [N,Cin,S...] and kernel [Cout,Cin,k...] of equal rank, got input " +
                shape_str(in) + " kernel " + shape_str(kernel));
  }
  if (kernel[1] != in[1]) {
    throw Error("conv channel mismatch: input " + shape_str(in) + " kernel " + shape_str(kernel));
  }
  const std::size_t d = in.size() - 2;
  const auto stride = option_or(opt.stride, d, 1, "stride");
  const auto dil = option_or(opt.dilation, d, 1, "dilation");
  const auto pad = option_or(opt.padding, d, 0, "padding");
  ConvGeometry g;
  g.batch = in[0];
  g.cin = in[1];
  g.cout = kernel[0];
  const std::size_t shift = 3 - d;
  for (std::size_t i = 0; i < d; ++i) {
    g.in[shift + i] = in[2 + i];
    g.k[shift + i] = kernel[2 + i];
    g.stride[shift + i] = stride[i];
    g.dil[shift + i] = dil[i];
    g.pad[shift + i] = static_cast<long>(pad[i]);
    if (stride[i] == 0 || dil[i] == 0) throw Error("conv stride and dilation must be positive");
    const long span = static_cast<long>(dil[i] * (kernel[2 + i] - 1) + 1);
    const long avail = static_cast<long>(in[2 + i]) + 2 * static_cast<long>(pad[i]);
    if (kernel[2 + i] == 0 || avail < span) {
      throw Error("conv output would be empty: input " + shape_str(in) + " kernel " + shape_str(kernel));
    }
    g.out[shift + i] = static_cast<std::size_t>((avail - span) / static_cast<long>(stride[i]) + 1);
  }
  return g;
}

// Range of output positions o for which o*stride - pad + kk*dil lies in [0, in).
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, long pad, std::size_t dil,
                        std::size_t kk, std::size_t& lo, std::size_t& hi) {
  const long offset = static_cast<long>(kk * dil) - pad;
  const long s = static_cast<long>(stride);
  long first = offset >= 0 ? 0 : (-offset + s - 1) / s;
  long last = (static_cast<long>(in) - 1 - offset);
  last = last < 0 ? -1 : last / s;
  lo = static_cast<std::size_t>(std::max<long>(first, 0));
  hi = static_cast<std::size_t>(std::min<long>(last + 1, static_cast<long>(out)));
  if (hi < lo) hi = lo;
}

// Calls fn(out_offset, in_offset, count, in_step) for each contiguous run along the last axis
// that kernel tap (kd, kh, kw) touches.
template <typename F>
void for_each_tap_run(const ConvGeometry& g, std::size_t kd, std::size_t kh, std::size_t kw, F&& fn) {
  std::size_t d_lo, d_hi, h_lo, h_hi, w_lo, w_hi;
  valid_range(g.out[0], g.in[0], g.stride[0], g.pad[0], g.dil[0], kd, d_lo, d_hi);
  valid_range(g.out[1], g.in[1], g.stride[1], g.pad[1], g.dil[1], kh, h_lo, h_hi);
  valid_range(g.out[2], g.in[2], g.stride[2], g.pad[2], g.dil[2], kw, w_lo, w_hi);
  if (w_lo >= w_hi) return;
  for (std::size_t od = d_lo; od < d_hi; ++od) {
    const std::size_t id = od * g.stride[0] + kd * g.dil[0] - static_cast<std::size_t>(g.pad[0]);
    for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
      const std::size_t ih = oh * g.stride[1] + kh * g.dil[1] - static_cast<std::size_t>(g.pad[1]);
      const std::size_t iw = w_lo * g.stride[2] + kw * g.dil[2] - static_cast<std::size_t>(g.pad[2]);
      fn((od * g.out[1] + oh) * g.out[2] + w_lo, (id * g.in[1] + ih) * g.in[2] + iw, w_hi - w_lo);
    }
  }
}

// col[r, o] for r = (ci * kvol + tap), o over the output plane of one sample.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t kvol = g.k_volume();
  const std::size_t out_plane = g.out_plane();
  const std::size_t step = g.stride[2];
  std::fill_n(col, g.cin * kvol * out_plane, 0.0);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* src = x + ci * g.in_plane();
    for (std::size_t kd = 0; kd < g.k[0]; ++kd)
      for (std::size_t kh = 0; kh < g.k[1]; ++kh)
        for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
          double* row = col + (ci * kvol + (kd * g.k[1] + kh) * g.k[2] + kw) * out_plane;
          for_each_tap_run(g, kd, kh, kw, [&](std::size_t o, std::size_t i, std::size_t count) {
            for (std::size_t c = 0; c < count; ++c) row[o + c] = src[i + c * step];
          });
        }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* x) {
  const std::size_t kvol = g.k_volume();
  const std::size_t out_plane = g.out_plane();
  const std::size_t step = g.stride[2];
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* dst = x + ci * g.in_plane();
    for (std::size_t kd = 0; kd < g.k[0]; ++kd)
      for (std::size_t kh = 0; kh < g.k[1]; ++kh)
        for (std::size_t kw = 0; kw < g.k[2]; ++kw) {
          const double* row = col + (ci * kvol + (kd * g.k[1] + kh) * g.k[2] + kw) * out_plane;
          for_each_tap_run(g, kd, kh, kw, [&](std::size_t o, std::size_t i, std::size_t count) {
            for (std::size_t c = 0; c < count; ++c) dst[i + c * step] += row[o + c];
          });
        }
  }
}

constexpr std::size_t kColumnBlock = 128;

// C[M, P] += A[M, K] * B[K, P], all row-major and dense.
void gemm_nn(std::size_t M, std::size_t K, std::size_t P, const double* A, const double* B, double* C) {
  for (std::size_t j0 = 0; j0 < P; j0 += kColumnBlock) {
    const std::size_t jn = std::min(kColumnBlock, P - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      double* c0 = C + i * P + j0;
      double* c1 = c0 + P;
      double* c2 = c1 + P;
      double* c3 = c2 + P;
      for (std::size_t k = 0; k < K; ++k) {
        const double a0 = A[i * K + k], a1 = A[(i + 1) * K + k], a2 = A[(i + 2) * K + k], a3 = A[(i + 3) * K + k];
        const double* b = B + k * P + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const double bv = b[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < M; ++i) {
      double* c = C + i * P + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const double a = A[i * K + k];
        const double* b = B + k * P + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

// C[K, P] += A[M, K]^T * B[M, P].
void gemm_tn(std::size_t M, std::size_t K, std::size_t P, const double* A, const double* B, double* C) {
  std::vector<double> at(K * M);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) at[k * M + i] = A[i * K + k];
  gemm_nn(K, M, P, at.data(), B, C);
}

// Per-thread reusable work buffers; avoids re-faulting large allocations on every call.
double* scratch(int slot, std::size_t size) {
  thread_local std::array<std::vector<double>, 2> buffers;
  auto& b = buffers[static_cast<std::size_t>(slot)];
  if (b.size() < size) b.resize(size);
  return b.data();
}

// dst[c, r] = src[r, c] for a rows x cols source.
void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, const ConvOptions& options) {
  const ConvGeometry g = plan_conv(input.shape(), kernel.shape(), options);
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != g.cout)) {
    throw Error("conv bias " + shape_str(bias.shape()) + " does not match kernel " +
                shape_str(kernel.shape()));
  }
  Shape out_shape = {g.batch, g.cout};
  for (std::size_t i = 3 - (input.rank() - 2); i < 3; ++i) out_shape.push_back(g.out[i]);

  const std::size_t in_plane = g.in_plane();
  const std::size_t out_plane = g.out_plane();
  const std::size_t ck = g.cin * g.k_volume();
  std::vector<double> out(g.batch * g.cout * out_plane, 0.0);
  const double* px = input.data().data();
  const double* pk = kernel.data().data();
  const double* pb = bias.defined() ? bias.data().data() : nullptr;

  parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
    double* col = scratch(0, ck * out_plane);
    for (std::size_t n = begin; n < end; ++n) {
      double* dst = out.data() + n * g.cout * out_plane;
      if (pb) {
        for (std::size_t co = 0; co < g.cout; ++co) std::fill_n(dst + co * out_plane, out_plane, pb[co]);
      }
      im2col(g, px + n * g.cin * in_plane, col);
      gemm_nn(g.cout, ck, out_plane, pk, col, dst);
    }
  });

  std::vector<Tensor> inputs = {input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      out_shape, std::move(out), inputs,
      [g](const TensorImpl& res, std::span<TensorImpl* const> in) {
        const std::size_t in_plane = g.in_plane();
        const std::size_t out_plane = g.out_plane();
        const std::size_t ck = g.cin * g.k_volume();
        const double* gy = res.grad.data();
        const double* px = in[0]->data.data();
        const double* pk = in[1]->data.data();
        auto gx = grad_sink(*in[0]);
        auto gk = grad_sink(*in[1]);
        // Per-sample kernel gradients, reduced afterwards in sample order.
        std::vector<double> partial(gk.empty() ? 0 : g.batch * g.cout * ck, 0.0);
        parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
          double* col = scratch(0, ck * out_plane);
          double* col_t = scratch(1, ck * out_plane);
          for (std::size_t n = begin; n < end; ++n) {
            const double* gsrc = gy + n * g.cout * out_plane;
            if (!gk.empty()) {
              im2col(g, px + n * g.cin * in_plane, col);
              transpose(col, ck, out_plane, col_t);
              gemm_nn(g.cout, out_plane, ck, gsrc, col_t, partial.data() + n * g.cout * ck);
            }
            if (!gx.empty()) {
              std::fill_n(col, ck * out_plane, 0.0);
              gemm_tn(g.cout, ck, out_plane, pk, gsrc, col);
              col2im(g, col, gx.data() + n * g.cin * in_plane);
            }
          }
        });
        if (!gk.empty()) {
          for (std::size_t n = 0; n < g.batch; ++n) {
            const double* pw = partial.data() + n * g.cout * ck;
            for (std::size_t i = 0; i < g.cout * ck; ++i) gk[i] += pw[i];
          }
        }
        if (in.size() > 2) {
          auto gb = grad_sink(*in[2]);
          if (!gb.empty()) {
            for (std::size_t n = 0; n < g.batch; ++n)
              for (std::size_t co = 0; co < g.cout; ++co) {
                const double* gsrc = gy + (n * g.cout + co) * out_plane;
                double acc = 0.0;
                for (std::size_t o = 0; o < out_plane; ++o) acc += gsrc[o];
                gb[co] += acc;
              }
          }
        }
      });
}

}  // namespace trigait
