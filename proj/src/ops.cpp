#include "trigait/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trigait/parallel.hpp"

namespace trigait {

namespace {

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Strides of `in` viewed inside the (right-aligned) broadcast shape `out`.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const auto in_strides = contiguous_strides(in);
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != 1) strides[offset + i] = in_strides[i];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Visits every position of `shape` in row-major order with two strided offsets.
template <typename F>
void strided_for_each(const Shape& shape, const std::vector<std::size_t>& sa,
                      const std::vector<std::size_t>& sb, F&& fn) {
  const std::size_t n = shape_numel(shape);
  if (n == 0) return;
  const std::size_t rank = shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < shape[d]) break;
      ia -= sa[d] * shape[d];
      ib -= sb[d] * shape[d];
      idx[d] = 0;
    }
  }
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw Error("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

// dfa/dfb return the partial derivative of the result w.r.t. each operand.
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_numel(out_shape));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
  } else {
    strided_for_each(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = f(pa[ia], pb[ib]);
    });
  }
  return make_result(
      out_shape, std::move(out), {a, b},
      [out_shape, sa, sb, dfa, dfb](const TensorImpl& res, std::span<TensorImpl* const> in) {
        auto ga = grad_sink(*in[0]);
        auto gb = grad_sink(*in[1]);
        const auto& va = in[0]->data;
        const auto& vb = in[1]->data;
        const auto& g = res.grad;
        strided_for_each(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          if (!ga.empty()) ga[ia] += g[o] * dfa(va[ia], vb[ib]);
          if (!gb.empty()) gb[ib] += g[o] * dfb(va[ia], vb[ib]);
        });
      });
}

// df(x, y) is the derivative given input x and output y.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(px[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [df](const TensorImpl& res, std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       const auto& vx = in[0]->data;
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                         gx[i] += res.grad[i] * df(vx[i], res.data[i]);
                       }
                     });
}

struct ReducePlan {
  Shape out_shape;
  Shape keep_shape;
  std::vector<std::size_t> in_strides;
  std::vector<std::size_t> out_strides;  // over the input shape, 0 on reduced axes
  std::size_t group = 1;
};

ReducePlan plan_reduce(const Shape& shape, const std::vector<int>& axes, bool keepdim) {
  std::vector<bool> reduced(shape.size(), false);
  for (int a : axes) reduced[norm_axis(a, shape.size())] = true;
  ReducePlan plan;
  plan.keep_shape = shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) {
      plan.keep_shape[i] = 1;
      plan.group *= shape[i];
    } else {
      plan.out_shape.push_back(shape[i]);
    }
  }
  if (keepdim) plan.out_shape = plan.keep_shape;
  plan.in_strides = contiguous_strides(shape);
  plan.out_strides = contiguous_strides(plan.keep_shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) plan.out_strides[i] = 0;
  }
  return plan;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](double v) { return v > 0 ? v : 0.0; },
                  [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_op(x, [slope](double v) { return v > 0 ? v : slope * v; },
                  [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 30 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  return unary_op(x, [exponent](double v) { return std::pow(v, exponent); },
                  [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
  const ReducePlan plan = plan_reduce(x.shape(), axes, keepdim);
  std::vector<double> out(shape_numel(plan.out_shape), 0.0);
  const double* px = x.data().data();
  strided_for_each(x.shape(), plan.in_strides, plan.out_strides,
                   [&](std::size_t, std::size_t i, std::size_t o) { out[o] += px[i]; });
  return make_result(plan.out_shape, std::move(out), {x},
                     [plan](const TensorImpl& res, std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       strided_for_each(in[0]->shape, plan.in_strides, plan.out_strides,
                                        [&](std::size_t, std::size_t i, std::size_t o) {
                                          gx[i] += res.grad[o];
                                        });
                     });
}

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
  const ReducePlan plan = plan_reduce(x.shape(), axes, keepdim);
  if (plan.group == 0) throw Error("mean over an empty extent");
  return mul_scalar(sum(x, axes, keepdim), 1.0 / static_cast<double>(plan.group));
}

Tensor max(const Tensor& x, const std::vector<int>& axes, bool keepdim) {
  const ReducePlan plan = plan_reduce(x.shape(), axes, keepdim);
  if (plan.group == 0) throw Error("max over an empty extent");
  const std::size_t n_out = shape_numel(plan.out_shape);
  std::vector<double> out(n_out, 0.0);
  std::vector<std::size_t> argmax(n_out, 0);
  std::vector<bool> filled(n_out, false);
  const double* px = x.data().data();
  // Row-major traversal with a strict comparison keeps the first maximum.
  strided_for_each(x.shape(), plan.in_strides, plan.out_strides,
                   [&](std::size_t, std::size_t i, std::size_t o) {
                     if (!filled[o] || px[i] > out[o]) {
                       out[o] = px[i];
                       argmax[o] = i;
                       filled[o] = true;
                     }
                   });
  return make_result(plan.out_shape, std::move(out), {x},
                     [argmax = std::move(argmax)](const TensorImpl& res,
                                                  std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += res.grad[o];
                     });
}

Tensor sum_all(const Tensor& x) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes, false);
}

Tensor mean_all(const Tensor& x) {
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor pool(const Tensor& x, const std::vector<int>& axes, PoolKind kind, bool keepdim) {
  return kind == PoolKind::Max ? max(x, axes, keepdim) : mean(x, axes, keepdim);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw Error("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [](const TensorImpl& res, std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += res.grad[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& in_shape = x.shape();
  if (order.size() != in_shape.size()) throw Error("permute order does not match rank");
  std::vector<bool> used(order.size(), false);
  Shape out_shape(order.size());
  const auto in_strides = contiguous_strides(in_shape);
  std::vector<std::size_t> src_strides(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= order.size() || used[order[i]]) throw Error("invalid permutation");
    used[order[i]] = true;
    out_shape[i] = in_shape[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  const auto out_strides = contiguous_strides(out_shape);
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  strided_for_each(out_shape, out_strides, src_strides,
                   [&](std::size_t o, std::size_t, std::size_t s) { out[o] = px[s]; });
  return make_result(out_shape, std::move(out), {x},
                     [out_shape, out_strides, src_strides](const TensorImpl& res,
                                                           std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       strided_for_each(out_shape, out_strides, src_strides,
                                        [&](std::size_t o, std::size_t, std::size_t s) {
                                          gx[s] += res.grad[o];
                                        });
                     });
}

Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const Shape& shape = x.shape();
  if (length == 0 || start + length > shape[ax]) {
    throw Error("narrow [" + std::to_string(start) + ", +" + std::to_string(length) +
                ") out of range for axis of extent " + std::to_string(shape[ax]));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[ax];
  Shape out_shape = shape;
  out_shape[ax] = length;
  std::vector<double> out(outer * length * inner);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(px + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return make_result(out_shape, std::move(out), {x},
                     [outer, inner, extent, start, length](const TensorImpl& res,
                                                           std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       for (std::size_t o = 0; o < outer; ++o) {
                         const double* g = res.grad.data() + o * length * inner;
                         double* dst = gx.data() + (o * extent + start) * inner;
                         for (std::size_t i = 0; i < length * inner; ++i) dst[i] += g[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error("concat of zero tensors");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != out_shape.size()) throw Error("concat rank mismatch");
    for (std::size_t i = 0; i < out_shape.size(); ++i) {
      if (i != ax && p.shape()[i] != out_shape[i]) {
        throw Error("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " +
                    shape_str(p.shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  const std::size_t total = out_shape[ax];
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> extents;
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t e = p.shape()[ax];
    const double* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * e * inner, e * inner, out.data() + (o * total + offset) * inner);
    }
    offsets.push_back(offset);
    extents.push_back(e);
    offset += e;
  }
  return make_result(out_shape, std::move(out), parts,
                     [outer, inner, total, offsets, extents](const TensorImpl& res,
                                                             std::span<TensorImpl* const> in) {
                       for (std::size_t k = 0; k < in.size(); ++k) {
                         auto g = grad_sink(*in[k]);
                         if (g.empty()) continue;
                         const std::size_t e = extents[k];
                         for (std::size_t o = 0; o < outer; ++o) {
                           const double* src = res.grad.data() + (o * total + offsets[k]) * inner;
                           double* dst = g.data() + o * e * inner;
                           for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor unsqueeze(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r + 1;
  if (axis < 0 || axis > r) throw Error("unsqueeze axis out of range");
  Shape shape = x.shape();
  shape.insert(shape.begin() + axis, 1);
  return reshape(x, std::move(shape));
}

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error("stack of zero tensors");
  const int r = static_cast<int>(parts[0].rank());
  if (axis < 0) axis += r + 1;
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& p : parts) expanded.push_back(unsqueeze(p, axis));
  return concat(expanded, axis);
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const Shape& shape = x.shape();
  if (indices.empty()) throw Error("index_select with no indices");
  for (std::size_t i : indices) {
    if (i >= shape[ax]) throw Error("index_select index out of range");
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[ax];
  Shape out_shape = shape;
  out_shape[ax] = indices.size();
  std::vector<double> out(shape_numel(out_shape));
  const double* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < indices.size(); ++k) {
      std::copy_n(px + (o * extent + indices[k]) * inner, inner,
                  out.data() + (o * indices.size() + k) * inner);
    }
  }
  return make_result(out_shape, std::move(out), {x},
                     [outer, inner, extent, indices](const TensorImpl& res,
                                                     std::span<TensorImpl* const> in) {
                       auto gx = grad_sink(*in[0]);
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t k = 0; k < indices.size(); ++k) {
                           const double* src = res.grad.data() + (o * indices.size() + k) * inner;
                           double* dst = gx.data() + (o * extent + indices[k]) * inner;
                           for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw Error("matmul needs rank >= 2 operands");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t M = sa[sa.size() - 2];
  const std::size_t K = sa[sa.size() - 1];
  const std::size_t N = sb[sb.size() - 1];
  if (sb[sb.size() - 2] != K) {
    throw Error("matmul inner dimension mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const bool shared_b = sb.size() == 2;
  if (!shared_b && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
    throw Error("matmul batch dimension mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t batch = a.numel() / (M * K);
  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(batch * M * N, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  parallel_for(batch * M, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t bi = r / M;
      const double* arow = pa + r * K;
      const double* bmat = pb + (shared_b ? 0 : bi * K * N);
      double* crow = out.data() + r * N;
      for (std::size_t k = 0; k < K; ++k) {
        const double av = arow[k];
        const double* brow = bmat + k * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  });
  return make_result(
      out_shape, std::move(out), {a, b},
      [batch, M, K, N, shared_b](const TensorImpl& res, std::span<TensorImpl* const> in) {
        auto ga = grad_sink(*in[0]);
        auto gb = grad_sink(*in[1]);
        const double* pa = in[0]->data.data();
        const double* pb = in[1]->data.data();
        const double* g = res.grad.data();
        if (!ga.empty()) {
          parallel_for(batch * M, [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r) {
              const std::size_t bi = r / M;
              const double* bmat = pb + (shared_b ? 0 : bi * K * N);
              const double* grow = g + r * N;
              for (std::size_t k = 0; k < K; ++k) {
                const double* brow = bmat + k * N;
                double acc = 0.0;
                for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                ga[r * K + k] += acc;
              }
            }
          });
        }
        if (!gb.empty()) {
          const std::size_t groups = shared_b ? 1 : batch;
          parallel_for(groups * K, [&](std::size_t begin, std::size_t end) {
            for (std::size_t q = begin; q < end; ++q) {
              const std::size_t grp = q / K;
              const std::size_t k = q % K;
              double* dst = gb.data() + q * N;
              const std::size_t b_lo = shared_b ? 0 : grp;
              const std::size_t b_hi = shared_b ? batch : grp + 1;
              for (std::size_t bi = b_lo; bi < b_hi; ++bi) {
                for (std::size_t i = 0; i < M; ++i) {
                  const double av = pa[(bi * M + i) * K + k];
                  const double* grow = g + (bi * M + i) * N;
                  for (std::size_t j = 0; j < N; ++j) dst[j] += av * grow[j];
                }
              }
            }
          });
        }
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw Error("linear weight must be [Din, Dout]");
  if (input.rank() < 1 || input.shape().back() != weight.shape()[0]) {
    throw Error("linear dimension mismatch: input " + shape_str(input.shape()) + " weight " +
                shape_str(weight.shape()));
  }
  Tensor x = input;
  const bool vector_input = input.rank() == 1;
  if (vector_input) x = reshape(input, {1, input.shape()[0]});
  Tensor y = matmul(x, weight);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.shape()[0] != weight.shape()[1]) {
      throw Error("linear bias shape " + shape_str(bias.shape()) + " does not match weight " +
                  shape_str(weight.shape()));
    }
    y = add(y, bias);
  }
  if (vector_input) y = reshape(y, {weight.shape()[1]});
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (gamma.numel() != x.shape().back() || beta.numel() != x.shape().back()) {
    throw Error("layer_norm affine extent does not match last axis of " + shape_str(x.shape()));
  }
  Tensor centered = sub(x, mean(x, {-1}, true));
  Tensor var = mean(mul(centered, centered), {-1}, true);
  Tensor normalized = mul(centered, pow_scalar(add_scalar(var, eps), -0.5));
  return add(mul(normalized, gamma), beta);
}

}  // namespace trigait
