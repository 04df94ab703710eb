#include "sst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "sst/errors.hpp"

namespace sst {

namespace {

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank, const Shape& shape) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  return static_cast<std::size_t>(axis);
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// For every flat index of `out`, the flat index of `in` it reads from.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t lead = r - in.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > lead;) {
    const std::size_t e = in[i - lead];
    in_stride[i] = e == 1 ? 0 : s;
    s *= e;
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += in_stride[ax];
      if (idx[ax] < out[ax]) break;
      src -= in_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const Shape out_shape =
      a.shape() == b.shape() ? a.shape() : broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(out_shape);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> ia, ib;
  if (!same_a) ia = broadcast_index(a.shape(), out_shape);
  if (!same_b) ib = broadcast_index(b.shape(), out_shape);

  const auto& da = a.values();
  const auto& db = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = da[same_a ? i : ia[i]];
    const double y = db[same_b ? i : ib[i]];
    switch (op) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
    }
  }

  auto pa = a.impl();
  auto pb = b.impl();
  return make_result(out_shape, std::move(out), {a, b},
                     [pa, pb, op, ia = std::move(ia), ib = std::move(ib)](const TensorImpl& o) {
                       const std::size_t n = o.grad.size();
                       const bool sa = ia.empty();
                       const bool sb = ib.empty();
                       if (pa->requires_grad) {
                         auto ga = pa->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double g = op == BinOp::Mul
                                                ? o.grad[i] * pb->data[sb ? i : ib[i]]
                                                : o.grad[i];
                           ga[sa ? i : ia[i]] += g;
                         }
                       }
                       if (pb->requires_grad) {
                         auto gb = pb->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           double g = o.grad[i];
                           if (op == BinOp::Sub) g = -g;
                           if (op == BinOp::Mul) g *= pa->data[sa ? i : ia[i]];
                           gb[sb ? i : ib[i]] += g;
                         }
                       }
                     });
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto& d = x.values();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = f(d[i]);
  auto px = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [px, df](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(px->data[i], o.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(C, M, N).noalias() += ConstMap(A, M, K) * ConstMap(B, K, N);
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(C, M, K).noalias() += ConstMap(G, M, N) * ConstMap(B, K, N).transpose();
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MutMap(C, K, N).noalias() += ConstMap(A, M, K).transpose() * ConstMap(G, M, N);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v < 0.0 ? 0.0 : v; },  // NaN passes through
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, [](double v) { return v * 0.5 * std::erfc(-v * inv_sqrt2); },
      [inv_sqrt_2pi](double v, double) {
        const double cdf = 0.5 * std::erfc(-v * inv_sqrt2);
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto px = x.impl();
  return make_result(Shape{1}, {s}, {x}, [px](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = norm_axis(axis_in, x.rank(), x.shape());
  const auto s = split_at(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& d = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = d.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  auto px = x.impl();
  return make_result(out_shape, std::move(out), {x}, [px, s](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        double* dst = g.data() + (a * s.extent + e) * s.inner;
        const double* src = o.grad.data() + a * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(batch_a, batch_b, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch extents not broadcastable: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t nb = shape_numel(batch);
  std::vector<std::size_t> ia, ib;
  if (!batch.empty()) {
    ia = batch_a == batch ? std::vector<std::size_t>{} : broadcast_index(batch_a, batch);
    ib = batch_b == batch ? std::vector<std::size_t>{} : broadcast_index(batch_b, batch);
  }
  auto a_of = [ia](std::size_t i) { return ia.empty() ? i : ia[i]; };
  auto b_of = [ib](std::size_t i) { return ib.empty() ? i : ib[i]; };
  const bool a_bcast = !batch.empty() && !ia.empty();
  const bool b_bcast = !batch.empty() && !ib.empty();

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nb * m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < nb; ++i) {
    const std::size_t ai = batch_a.empty() ? 0 : (a_bcast ? a_of(i) : i);
    const std::size_t bi = batch_b.empty() ? 0 : (b_bcast ? b_of(i) : i);
    gemm_nn(A + ai * m * k, B + bi * k * n, out.data() + i * m * n, m, k, n);
  }

  auto pa = a.impl();
  auto pb = b.impl();
  const bool a_flat = batch_a.empty();
  const bool b_flat = batch_b.empty();
  return make_result(out_shape, std::move(out), {a, b},
                     [pa, pb, m, k, n, nb, a_flat, b_flat, a_bcast, b_bcast, a_of,
                      b_of](const TensorImpl& o) {
                       for (std::size_t i = 0; i < nb; ++i) {
                         const std::size_t ai = a_flat ? 0 : (a_bcast ? a_of(i) : i);
                         const std::size_t bi = b_flat ? 0 : (b_bcast ? b_of(i) : i);
                         const double* G = o.grad.data() + i * m * n;
                         if (pa->requires_grad) {
                           gemm_nt(G, pb->data.data() + bi * k * n,
                                   pa->grad_buffer().data() + ai * m * k, m, k, n);
                         }
                         if (pb->requires_grad) {
                           gemm_tn(pa->data.data() + ai * m * k, G,
                                   pb->grad_buffer().data() + bi * k * n, m, k, n);
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto px = x.impl();
  return make_result(std::move(shape), x.values(), {x}, [px](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) {
    throw DimensionError("permute order has " + std::to_string(order.size()) +
                         " axes for shape " + shape_str(x.shape()));
  }
  std::vector<bool> used(r, false);
  for (auto ax : order) {
    if (ax >= r || used[ax]) throw DimensionError("permute order is not a permutation");
    used[ax] = true;
  }
  std::vector<std::size_t> in_stride(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = s;
    s *= x.shape()[i];
  }
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[order[i]];
    stride[i] = in_stride[order[i]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  const auto& d = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = d[map[i]];
  auto px = x.impl();
  return make_result(out_shape, std::move(out), {x},
                     [px, map = std::move(map)](const TensorImpl& o) {
                       auto g = px->grad_buffer();
                       for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape) {
    throw DimensionError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  if (x.shape() == shape) return x;
  auto map = broadcast_index(x.shape(), shape);
  const auto& d = x.values();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = d[map[i]];
  auto px = x.impl();
  return make_result(shape, std::move(out), {x}, [px, map = std::move(map)](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis_in) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t axis = norm_axis(axis_in, first.size(), first);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw DimensionError("concat rank mismatch: " + shape_str(first) + " vs " +
                           shape_str(probe));
    }
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != axis && probe[i] != first[i]) {
        throw DimensionError("concat extent mismatch: " + shape_str(first) + " vs " +
                             shape_str(probe));
      }
    }
    out_shape[axis] += probe[axis];
  }
  const auto s = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.shape()[axis];
    const auto& d = p.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(d.data() + o * ext * s.inner, ext * s.inner,
                  out.data() + (o * s.extent + off) * s.inner);
    }
    off += ext;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_result(out_shape, std::move(out), parts,
                     [impls, offsets, s, axis](const TensorImpl& o) {
                       for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                         auto& p = impls[pi];
                         if (!p->requires_grad) continue;
                         const std::size_t ext = p->shape[axis];
                         auto g = p->grad_buffer();
                         for (std::size_t a = 0; a < s.outer; ++a) {
                           const double* src =
                               o.grad.data() + (a * s.extent + offsets[pi]) * s.inner;
                           double* dst = g.data() + a * ext * s.inner;
                           for (std::size_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = norm_axis(axis_in, x.rank(), x.shape());
  if (length == 0 || start + length > x.shape()[axis]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto& d = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(d.data() + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  auto px = x.impl();
  return make_result(out_shape, std::move(out), {x},
                     [px, s, start, length](const TensorImpl& o) {
                       auto g = px->grad_buffer();
                       for (std::size_t a = 0; a < s.outer; ++a) {
                         const double* src = o.grad.data() + a * length * s.inner;
                         double* dst = g.data() + (a * s.extent + start) * s.inner;
                         for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = norm_axis(axis_in, x.rank(), x.shape());
  const auto s = split_at(x.shape(), axis);
  const auto& d = x.values();
  std::vector<double> out(d.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = d[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, d[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(d[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  auto px = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [px, s](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = a * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) {
          dot += o.grad[base + e * s.inner] * o.data[base + e * s.inner];
        }
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t j = base + e * s.inner;
          g[j] += o.data[j] * (o.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = norm_axis(axis_in, x.rank(), x.shape());
  const auto s = split_at(x.shape(), axis);
  const auto& d = x.values();
  std::vector<double> out(d.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = d[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, d[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(d[base + e * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) {
        out[base + e * s.inner] = d[base + e * s.inner] - lse;
      }
    }
  }
  auto px = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [px, s](const TensorImpl& o) {
    auto g = px->grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = a * s.extent * s.inner + i;
        double gs = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) gs += o.grad[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t j = base + e * s.inner;
          g[j] += o.grad[j] - std::exp(o.data[j]) * gs;
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t D = x.dim(-1);
  if (gain.shape() != Shape{D} || bias.shape() != Shape{D}) {
    throw DimensionError("layernorm over last extent " + std::to_string(D) + " of " +
                         shape_str(x.shape()) + " got gain " + shape_str(gain.shape()) +
                         " and bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / D;
  const auto& d = x.values();
  const auto& gw = gain.values();
  const auto& bw = bias.values();
  std::vector<double> out(d.size());
  std::vector<double> xhat(d.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * D;
    double mu = 0.0;
    for (std::size_t j = 0; j < D; ++j) mu += row[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * D + j] = h;
      out[r * D + j] = h * gw[j] + bw[j];
    }
  }
  auto px = x.impl();
  auto pg = gain.impl();
  auto pb = bias.impl();
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, D, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const TensorImpl& o) {
        const double invD = 1.0 / static_cast<double>(D);
        std::vector<double> dxhat(D);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = o.grad.data() + r * D;
          const double* h = xhat.data() + r * D;
          if (pg->requires_grad) {
            auto gg = pg->grad_buffer();
            for (std::size_t j = 0; j < D; ++j) gg[j] += gy[j] * h[j];
          }
          if (pb->requires_grad) {
            auto gb = pb->grad_buffer();
            for (std::size_t j = 0; j < D; ++j) gb[j] += gy[j];
          }
          if (px->requires_grad) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
              dxhat[j] = gy[j] * pg->data[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * h[j];
            }
            m1 *= invD;
            m2 *= invD;
            auto gx = px->grad_buffer();
            for (std::size_t j = 0; j < D; ++j) {
              gx[r * D + j] += inv_std[r] * (dxhat[j] - m1 - h[j] * m2);
            }
          }
        }
      });
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || kernel.rank() != 3 || x.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv1d expects x [n,c_in,t] and kernel [c_out,c_in,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (stride == 0) throw DimensionError("conv1d stride must be positive");
  const std::size_t N = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const std::size_t Cout = kernel.dim(0), K = kernel.dim(2);
  if (K > T + 2 * padding) {
    throw DimensionError("conv1d kernel " + shape_str(kernel.shape()) +
                         " longer than padded input " + shape_str(x.shape()) + " (padding " +
                         std::to_string(padding) + ")");
  }
  const std::size_t To = (T + 2 * padding - K) / stride + 1;
  const std::size_t rows = Cin * K;

  // Column buffer: col[(ci*K + k), t] = x[ci, t*stride + k - padding], zero outside.
  auto im2col = [=](const double* xn, std::vector<double>& col) {
    col.assign(rows * To, 0.0);
    for (std::size_t ci = 0; ci < Cin; ++ci) {
      const double* xi = xn + ci * T;
      for (std::size_t k = 0; k < K; ++k) {
        double* c = col.data() + (ci * K + k) * To;
        for (std::size_t t = 0; t < To; ++t) {
          const std::size_t p = t * stride + k;
          if (p >= padding && p - padding < T) c[t] = xi[p - padding];
        }
      }
    }
  };

  const double* W = kernel.values().data();
  std::vector<double> out(N * Cout * To, 0.0);
  std::vector<double> col;
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.values().data() + n * Cin * T, col);
    gemm_nn(W, col.data(), out.data() + n * Cout * To, Cout, rows, To);
  }

  auto px = x.impl();
  auto pw = kernel.impl();
  return make_result(
      Shape{N, Cout, To}, std::move(out), {x, kernel},
      [px, pw, N, Cin, T, Cout, K, To, rows, stride, padding, im2col](const TensorImpl& o) {
        std::vector<double> col, dcol;
        for (std::size_t n = 0; n < N; ++n) {
          const double* G = o.grad.data() + n * Cout * To;
          if (pw->requires_grad) {
            im2col(px->data.data() + n * Cin * T, col);
            gemm_nt(G, col.data(), pw->grad_buffer().data(), Cout, rows, To);
          }
          if (px->requires_grad) {
            dcol.assign(rows * To, 0.0);
            gemm_tn(pw->data.data(), G, dcol.data(), Cout, rows, To);
            double* gx = px->grad_buffer().data() + n * Cin * T;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              for (std::size_t k = 0; k < K; ++k) {
                const double* c = dcol.data() + (ci * K + k) * To;
                for (std::size_t t = 0; t < To; ++t) {
                  const std::size_t p = t * stride + k;
                  if (p >= padding && p - padding < T) gx[ci * T + p - padding] += c[t];
                }
              }
            }
          }
        }
      });
}

Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_len) {
  if (x.rank() != 3) {
    throw DimensionError("adaptive_avg_pool1d expects [n,c,t], got " + shape_str(x.shape()));
  }
  const std::size_t T = x.dim(2);
  if (out_len == 0 || out_len > T) {
    throw DimensionError("adaptive_avg_pool1d output length " + std::to_string(out_len) +
                         " exceeds input length of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0) * x.dim(1);
  std::vector<std::size_t> bounds(out_len + 1);
  for (std::size_t i = 0; i <= out_len; ++i) bounds[i] = i * T / out_len;
  const auto& d = x.values();
  std::vector<double> out(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < out_len; ++i) {
      double acc = 0.0;
      for (std::size_t t = bounds[i]; t < bounds[i + 1]; ++t) acc += d[r * T + t];
      out[r * out_len + i] = acc / static_cast<double>(bounds[i + 1] - bounds[i]);
    }
  }
  auto px = x.impl();
  return make_result(Shape{x.dim(0), x.dim(1), out_len}, std::move(out), {x},
                     [px, rows, T, out_len, bounds](const TensorImpl& o) {
                       auto g = px->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t i = 0; i < out_len; ++i) {
                           const double share = o.grad[r * out_len + i] /
                                                static_cast<double>(bounds[i + 1] - bounds[i]);
                           for (std::size_t t = bounds[i]; t < bounds[i + 1]; ++t) {
                             g[r * T + t] += share;
                           }
                         }
                       }
                     });
}

}  // namespace sst
