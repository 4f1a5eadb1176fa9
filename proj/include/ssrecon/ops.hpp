#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "tape.hpp"

// Differentiable primitives. Elementwise ops accept equal shapes or a scalar
// (numel == 1) on either side; anything fancier goes through broadcast_to.
// conv2d is NHWC with im2col + dgemm; the im2col buffer is saved on the node
// for the weight-gradient gemm in the backward pass.

namespace ssr::ad {

namespace detail {

inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void check_binary_shapes(const Array& a, const Array& b, const char* op) {
  SSR_CHECK(a.same_shape(b) || a.numel() == 1 || b.numel() == 1,
            op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
}

// Accumulate g into the grad of input id, reducing if that input was a
// broadcast scalar.
inline void acc_grad(Tape& t, int id, const Array& g) {
  if (!t.node(id).requires_grad) return;
  Array& dst = t.grad(id);
  if (dst.numel() == g.numel()) {
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  } else {
    SSR_CHECK(dst.numel() == 1, "acc_grad: incompatible grad shapes");
    double s = 0;
    for (int64_t i = 0; i < g.numel(); ++i) s += g[i];
    dst[0] += s;
  }
}

inline double get(const Array& a, int64_t i) { return a.numel() == 1 ? a[0] : a[i]; }

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Var add(Var a, Var b) {
  detail::check_binary_shapes(a.val(), b.val(), "add");
  const Array &av = a.val(), &bv = b.val();
  Array out = Array::uninit(av.numel() >= bv.numel() ? av.shape() : bv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = detail::get(av, i) + detail::get(bv, i);
  int ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tape::Node& n) {
                        detail::acc_grad(t, ia, n.grad);
                        detail::acc_grad(t, ib, n.grad);
                      },
                      "add");
}

inline Var sub(Var a, Var b) {
  detail::check_binary_shapes(a.val(), b.val(), "sub");
  const Array &av = a.val(), &bv = b.val();
  Array out = Array::uninit(av.numel() >= bv.numel() ? av.shape() : bv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = detail::get(av, i) - detail::get(bv, i);
  int ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tape::Node& n) {
                        detail::acc_grad(t, ia, n.grad);
                        Array neg = Array::uninit(n.grad.shape());
                        for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -n.grad[i];
                        detail::acc_grad(t, ib, neg);
                      },
                      "sub");
}

inline Var mul(Var a, Var b) {
  detail::check_binary_shapes(a.val(), b.val(), "mul");
  const Array &av = a.val(), &bv = b.val();
  Array out = Array::uninit(av.numel() >= bv.numel() ? av.shape() : bv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = detail::get(av, i) * detail::get(bv, i);
  int ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tape::Node& n) {
                        const Array &av = t.val(ia), &bv = t.val(ib);
                        Array ga = Array::uninit(n.grad.shape());
                        Array gb = Array::uninit(n.grad.shape());
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                          ga[i] = n.grad[i] * detail::get(bv, i);
                          gb[i] = n.grad[i] * detail::get(av, i);
                        }
                        detail::acc_grad(t, ia, ga);
                        detail::acc_grad(t, ib, gb);
                      },
                      "mul");
}

inline Var div(Var a, Var b) {
  detail::check_binary_shapes(a.val(), b.val(), "div");
  const Array &av = a.val(), &bv = b.val();
  for (int64_t i = 0; i < bv.numel(); ++i)
    SSR_CHECK(bv[i] != 0.0, "div: zero denominator at index " << i);
  Array out = Array::uninit(av.numel() >= bv.numel() ? av.shape() : bv.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = detail::get(av, i) / detail::get(bv, i);
  int ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib},
                      [ia, ib](Tape& t, const Tape::Node& n) {
                        const Array &av = t.val(ia), &bv = t.val(ib);
                        Array ga = Array::uninit(n.grad.shape());
                        Array gb = Array::uninit(n.grad.shape());
                        for (int64_t i = 0; i < n.grad.numel(); ++i) {
                          double bi = detail::get(bv, i);
                          ga[i] = n.grad[i] / bi;
                          gb[i] = -n.grad[i] * detail::get(av, i) / (bi * bi);
                        }
                        detail::acc_grad(t, ia, ga);
                        detail::acc_grad(t, ib, gb);
                      },
                      "div");
}

inline Var scale(Var a, double c) {
  Array out = Array::uninit(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c;
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia, c](Tape& t, const Tape::Node& n) {
                        Array g = Array::uninit(n.grad.shape());
                        for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * c;
                        detail::acc_grad(t, ia, g);
                      },
                      "scale");
}

inline Var add_const(Var a, double c) {
  Array out = Array::uninit(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c;
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia](Tape& t, const Tape::Node& n) { detail::acc_grad(t, ia, n.grad); },
                      "add_const");
}

inline Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// unary nonlinearities

namespace detail {

template <typename FwdFn, typename BwdFn>
Var unary(Var a, const char* op, FwdFn fwd, BwdFn bwd_from_in_out) {
  Array out = Array::uninit(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(a.val()[i]);
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia, bwd_from_in_out](Tape& t, const Tape::Node& n) {
                        const Array& x = t.val(ia);
                        Array g = Array::uninit(n.grad.shape());
                        for (int64_t i = 0; i < g.numel(); ++i)
                          g[i] = n.grad[i] * bwd_from_in_out(x[i], n.value[i]);
                        detail::acc_grad(t, ia, g);
                      },
                      op);
}

}  // namespace detail

inline Var relu(Var a) {
  return detail::unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                       [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope = 0.01) {
  return detail::unary(a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
                       [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, "sigmoid",
                       [](double x) {
                         return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                       : std::exp(x) / (1.0 + std::exp(x));
                       },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log(Var a) {
  for (int64_t i = 0; i < a.val().numel(); ++i)
    SSR_CHECK(a.val()[i] > 0.0,
              "log: non-positive operand " << a.val()[i] << " at index " << i
                                           << " (clamp upstream)");
  return detail::unary(a, "log", [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var pow(Var a, double e) {
  if (e != std::floor(e))
    for (int64_t i = 0; i < a.val().numel(); ++i)
      SSR_CHECK(a.val()[i] >= 0.0, "pow: negative base with fractional exponent");
  return detail::unary(a, "pow", [e](double x) { return std::pow(x, e); },
                       [e](double x, double) { return e * std::pow(x, e - 1.0); });
}

inline Var abs(Var a) {
  return detail::unary(a, "abs", [](double x) { return std::fabs(x); },
                       [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(a, "clamp",
                       [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                       [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum(Var a) {
  double s = 0;
  for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  int ia = a.id;
  return a.tape->push(Array::scalar(s), {ia},
                      [ia](Tape& t, const Tape::Node& n) {
                        Array& dst = t.grad(ia);
                        double g = n.grad[0];
                        for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += g;
                      },
                      "sum");
}

inline Var mean(Var a) {
  int64_t n = a.val().numel();
  SSR_CHECK(n > 0, "mean of empty tensor");
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += a.val()[i];
  int ia = a.id;
  double inv = 1.0 / static_cast<double>(n);
  return a.tape->push(Array::scalar(s * inv), {ia},
                      [ia, inv](Tape& t, const Tape::Node& n_) {
                        Array& dst = t.grad(ia);
                        double g = n_.grad[0] * inv;
                        for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += g;
                      },
                      "mean");
}

// Min over one axis with argmin tracking; ties break to the lowest index and
// the gradient follows only the argmin branch.
inline Var reduce_min(Var a, int axis) {
  const Array& av = a.val();
  SSR_CHECK(axis >= 0 && axis < av.ndim(), "reduce_min: bad axis " << axis);
  int64_t outer = 1, inner = 1;
  int n = av.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= av.dim(i);
  for (int i = axis + 1; i < av.ndim(); ++i) inner *= av.dim(i);
  Shape out_shape;
  for (int i = 0; i < av.ndim(); ++i)
    if (i != axis) out_shape.push_back(av.dim(i));
  if (out_shape.empty()) out_shape = {1};
  Array out = Array::uninit(out_shape);
  std::vector<int> argmin(static_cast<size_t>(outer * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      double best = av[(o * n) * inner + in];
      int bi = 0;
      for (int j = 1; j < n; ++j) {
        double x = av[(o * n + j) * inner + in];
        if (x < best) {
          best = x;
          bi = j;
        }
      }
      out[o * inner + in] = best;
      argmin[static_cast<size_t>(o * inner + in)] = bi;
    }
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia, argmin, outer, inner, n](Tape& t, const Tape::Node& nd) {
                        Array& dst = t.grad(ia);
                        for (int64_t o = 0; o < outer; ++o)
                          for (int64_t in = 0; in < inner; ++in) {
                            int j = argmin[static_cast<size_t>(o * inner + in)];
                            dst[(o * n + j) * inner + in] += nd.grad[o * inner + in];
                          }
                        (void)n;
                      },
                      "reduce_min");
}

// ---------------------------------------------------------------------------
// shape ops

inline Var reshape(Var a, Shape s) {
  Array out = a.val().reshaped(std::move(s));
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia](Tape& t, const Tape::Node& n) {
                        Array& dst = t.grad(ia);
                        for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += n.grad[i];
                      },
                      "reshape");
}

// NumPy-style broadcast of equal-rank shapes (size-1 axes stretch); a scalar
// input broadcasts to anything.
inline Var broadcast_to(Var a, const Shape& s) {
  const Array& av = a.val();
  Shape in_shape = av.shape();
  if (av.numel() == 1) in_shape = Shape(s.size(), 1);
  SSR_CHECK(in_shape.size() == s.size(),
            "broadcast_to: rank mismatch " << shape_str(av.shape()) << " -> " << shape_str(s));
  for (size_t i = 0; i < s.size(); ++i)
    SSR_CHECK(in_shape[i] == s[i] || in_shape[i] == 1,
              "broadcast_to: cannot stretch " << shape_str(av.shape()) << " to " << shape_str(s));
  int rank = static_cast<int>(s.size());
  std::vector<int64_t> in_stride(static_cast<size_t>(rank)), out_stride(static_cast<size_t>(rank));
  int64_t acc = 1;
  for (int i = rank - 1; i >= 0; --i) {
    out_stride[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  acc = 1;
  for (int i = rank - 1; i >= 0; --i) {
    in_stride[static_cast<size_t>(i)] = (in_shape[static_cast<size_t>(i)] == 1) ? 0 : acc;
    acc *= in_shape[static_cast<size_t>(i)];
  }
  Array out = Array::uninit(s);
  std::vector<int> idx(static_cast<size_t>(rank), 0);
  for (int64_t oi = 0; oi < out.numel(); ++oi) {
    int64_t ii = 0, rem = oi;
    for (int d = 0; d < rank; ++d) {
      int64_t q = rem / out_stride[static_cast<size_t>(d)];
      rem %= out_stride[static_cast<size_t>(d)];
      ii += q * in_stride[static_cast<size_t>(d)];
    }
    out[oi] = av[ii];
  }
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia, in_stride, out_stride, rank](Tape& t, const Tape::Node& n) {
                        Array& dst = t.grad(ia);
                        for (int64_t oi = 0; oi < n.grad.numel(); ++oi) {
                          int64_t ii = 0, rem = oi;
                          for (int d = 0; d < rank; ++d) {
                            int64_t q = rem / out_stride[static_cast<size_t>(d)];
                            rem %= out_stride[static_cast<size_t>(d)];
                            ii += q * in_stride[static_cast<size_t>(d)];
                          }
                          dst[ii] += n.grad[oi];
                        }
                      },
                      "broadcast_to");
}

inline Var concat(const std::vector<Var>& xs, int axis) {
  SSR_CHECK(!xs.empty(), "concat: empty input list");
  Tape* tape = xs[0].tape;
  const Array& first = xs[0].val();
  SSR_CHECK(axis >= 0 && axis < first.ndim(), "concat: bad axis " << axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first.dim(i);
  for (int i = axis + 1; i < first.ndim(); ++i) inner *= first.dim(i);
  int total = 0;
  std::vector<int> sizes, ids;
  for (const Var& x : xs) {
    const Array& v = x.val();
    SSR_CHECK(v.ndim() == first.ndim(), "concat: rank mismatch");
    for (int i = 0; i < first.ndim(); ++i)
      if (i != axis)
        SSR_CHECK(v.dim(i) == first.dim(i), "concat: shape mismatch at non-concat axis " << i);
    sizes.push_back(v.dim(axis));
    ids.push_back(x.id);
    total += v.dim(axis);
  }
  Shape out_shape = first.shape();
  out_shape[static_cast<size_t>(axis)] = total;
  Array out = Array::uninit(out_shape);
  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const Array& v = xs[k].val();
    int64_t blk = static_cast<int64_t>(sizes[k]) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total) * inner + off, v.data() + o * blk,
                  static_cast<size_t>(blk) * sizeof(double));
    off += blk;
  }
  return tape->push(std::move(out), ids,
                    [ids, sizes, outer, inner, total](Tape& t, const Tape::Node& n) {
                      int64_t off = 0;
                      for (size_t k = 0; k < ids.size(); ++k) {
                        int64_t blk = static_cast<int64_t>(sizes[k]) * inner;
                        if (t.node(ids[k]).requires_grad) {
                          Array& dst = t.grad(ids[k]);
                          for (int64_t o = 0; o < outer; ++o)
                            for (int64_t i = 0; i < blk; ++i)
                              dst[o * blk + i] += n.grad[(o * total) * inner + off + i];
                        }
                        off += blk;
                      }
                    },
                    "concat");
}

// Stack equal-shape tensors along a new leading axis.
inline Var stack0(const std::vector<Var>& xs) {
  SSR_CHECK(!xs.empty(), "stack0: empty input list");
  const Array& first = xs[0].val();
  Shape out_shape = first.shape();
  out_shape.insert(out_shape.begin(), static_cast<int>(xs.size()));
  Array out = Array::uninit(out_shape);
  std::vector<int> ids;
  int64_t blk = first.numel();
  for (size_t k = 0; k < xs.size(); ++k) {
    SSR_CHECK(xs[k].val().same_shape(first), "stack0: shape mismatch");
    std::memcpy(out.data() + static_cast<int64_t>(k) * blk, xs[k].val().data(),
                static_cast<size_t>(blk) * sizeof(double));
    ids.push_back(xs[k].id);
  }
  return xs[0].tape->push(std::move(out), ids,
                          [ids, blk](Tape& t, const Tape::Node& n) {
                            for (size_t k = 0; k < ids.size(); ++k) {
                              if (!t.node(ids[k]).requires_grad) continue;
                              Array& dst = t.grad(ids[k]);
                              const double* g = n.grad.data() + static_cast<int64_t>(k) * blk;
                              for (int64_t i = 0; i < blk; ++i) dst[i] += g[i];
                            }
                          },
                          "stack0");
}

// x[i, ...] as a tensor of the remaining dims.
inline Var slice_dim0(Var a, int i) {
  const Array& av = a.val();
  SSR_CHECK(av.ndim() >= 1 && i >= 0 && i < av.dim(0), "slice_dim0: index out of range");
  Shape out_shape(av.shape().begin() + 1, av.shape().end());
  if (out_shape.empty()) out_shape = {1};
  int64_t blk = shape_numel(out_shape);
  Array out = Array::uninit(out_shape);
  std::memcpy(out.data(), av.data() + static_cast<int64_t>(i) * blk,
              static_cast<size_t>(blk) * sizeof(double));
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia, i, blk](Tape& t, const Tape::Node& n) {
                        Array& dst = t.grad(ia);
                        double* d = dst.data() + static_cast<int64_t>(i) * blk;
                        for (int64_t j = 0; j < blk; ++j) d[j] += n.grad[j];
                      },
                      "slice_dim0");
}

// Slice [start, start+len) over the last axis.
inline Var slice_last(Var a, int start, int len) {
  const Array& av = a.val();
  int last = av.dim(av.ndim() - 1);
  SSR_CHECK(start >= 0 && len >= 1 && start + len <= last, "slice_last: bad range");
  Shape out_shape = av.shape();
  out_shape.back() = len;
  int64_t rows = av.numel() / last;
  Array out = Array::uninit(out_shape);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out.data() + r * len, av.data() + r * last + start,
                static_cast<size_t>(len) * sizeof(double));
  int ia = a.id;
  return a.tape->push(std::move(out), {ia},
                      [ia, start, len, last, rows](Tape& t, const Tape::Node& n) {
                        Array& dst = t.grad(ia);
                        for (int64_t r = 0; r < rows; ++r)
                          for (int j = 0; j < len; ++j)
                            dst[r * last + start + j] += n.grad[r * len + j];
                      },
                      "slice_last");
}

// Copy of the value with the gradient path cut.
inline Var detach(Var a) { return a.tape->constant(a.val()); }

// ---------------------------------------------------------------------------
// matmul / linear / conv2d

inline Var matmul(Var a, Var b) {
  const Array &av = a.val(), &bv = b.val();
  SSR_CHECK(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(0),
            "matmul: incompatible shapes " << shape_str(av.shape()) << " x "
                                           << shape_str(bv.shape()));
  int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Array out = Array::uninit({m, n});
  detail::gemm(false, false, m, n, k, 1.0, av.data(), k, bv.data(), n, 0.0, out.data(), n);
  int ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {ia, ib},
                      [ia, ib, m, k, n](Tape& t, const Tape::Node& nd) {
                        const Array &av = t.val(ia), &bv = t.val(ib);
                        if (t.node(ia).requires_grad) {
                          Array& da = t.grad(ia);
                          detail::gemm(false, true, m, k, n, 1.0, nd.grad.data(), n, bv.data(), n,
                                       1.0, da.data(), k);
                        }
                        if (t.node(ib).requires_grad) {
                          Array& db = t.grad(ib);
                          detail::gemm(true, false, k, n, m, 1.0, av.data(), k, nd.grad.data(), n,
                                       1.0, db.data(), n);
                        }
                      },
                      "matmul");
}

// y = x·w + bias, x [M,K], w [K,N], bias [N].
inline Var linear(Var x, Var w, Var bias) {
  const Array &xv = x.val(), &wv = w.val(), &bv = bias.val();
  SSR_CHECK(xv.ndim() == 2 && wv.ndim() == 2 && xv.dim(1) == wv.dim(0),
            "linear: incompatible shapes " << shape_str(xv.shape()) << " x "
                                           << shape_str(wv.shape()));
  SSR_CHECK(bv.numel() == wv.dim(1), "linear: bias size mismatch");
  int m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  Array out = Array::uninit({m, n});
  for (int r = 0; r < m; ++r) std::memcpy(out.data() + r * n, bv.data(), sizeof(double) * n);
  detail::gemm(false, false, m, n, k, 1.0, xv.data(), k, wv.data(), n, 1.0, out.data(), n);
  int ix = x.id, iw = w.id, ib = bias.id;
  return x.tape->push(std::move(out), {ix, iw, ib},
                      [ix, iw, ib, m, k, n](Tape& t, const Tape::Node& nd) {
                        const Array &xv = t.val(ix), &wv = t.val(iw);
                        if (t.node(ix).requires_grad)
                          detail::gemm(false, true, m, k, n, 1.0, nd.grad.data(), n, wv.data(), n,
                                       1.0, t.grad(ix).data(), k);
                        if (t.node(iw).requires_grad)
                          detail::gemm(true, false, k, n, m, 1.0, xv.data(), k, nd.grad.data(), n,
                                       1.0, t.grad(iw).data(), n);
                        if (t.node(ib).requires_grad) {
                          Array& db = t.grad(ib);
                          for (int r = 0; r < m; ++r)
                            for (int c = 0; c < n; ++c) db[c] += nd.grad[r * n + c];
                        }
                      },
                      "linear");
}

namespace detail {

struct ConvDims {
  int b, h, w, c, kh, kw, oc, stride, pt, pl;
  int oh, ow;
  int64_t rows() const { return static_cast<int64_t>(b) * oh * ow; }
  int cols() const { return kh * kw * c; }
};

inline void im2col(const double* x, const ConvDims& d, double* xcol) {
  const int64_t hw = static_cast<int64_t>(d.h) * d.w;
  for (int bi = 0; bi < d.b; ++bi) {
    const double* xb = x + bi * hw * d.c;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        double* row =
            xcol + ((static_cast<int64_t>(bi) * d.oh + oy) * d.ow + ox) * d.cols();
        for (int ky = 0; ky < d.kh; ++ky) {
          int iy = oy * d.stride - d.pt + ky;
          for (int kx = 0; kx < d.kw; ++kx) {
            int ix = ox * d.stride - d.pl + kx;
            double* dst = row + (ky * d.kw + kx) * d.c;
            if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
              std::memcpy(dst, xb + (static_cast<int64_t>(iy) * d.w + ix) * d.c,
                          sizeof(double) * d.c);
            else
              std::memset(dst, 0, sizeof(double) * d.c);
          }
        }
      }
  }
}

inline void col2im_acc(const double* xcol, const ConvDims& d, double* dx) {
  const int64_t hw = static_cast<int64_t>(d.h) * d.w;
  for (int bi = 0; bi < d.b; ++bi) {
    double* xb = dx + bi * hw * d.c;
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        const double* row =
            xcol + ((static_cast<int64_t>(bi) * d.oh + oy) * d.ow + ox) * d.cols();
        for (int ky = 0; ky < d.kh; ++ky) {
          int iy = oy * d.stride - d.pt + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < d.kw; ++kx) {
            int ix = ox * d.stride - d.pl + kx;
            if (ix < 0 || ix >= d.w) continue;
            const double* src = row + (ky * d.kw + kx) * d.c;
            double* dst = xb + (static_cast<int64_t>(iy) * d.w + ix) * d.c;
            for (int ci = 0; ci < d.c; ++ci) dst[ci] += src[ci];
          }
        }
      }
  }
}

}  // namespace detail

// 2-D strided convolution, NHWC, weights [KH,KW,C,OC]. Output spatial size is
// (in + pt + pb - k)/stride + 1; pads may be asymmetric (needed for the
// stride-2 64->32 chain).
inline Var conv2d(Var x, Var w, Var bias, int stride, int pad_top, int pad_left, int pad_bottom,
                  int pad_right) {
  const Array &xv = x.val(), &wv = w.val();
  SSR_CHECK(xv.ndim() == 4, "conv2d: input must be [B,H,W,C], got " << shape_str(xv.shape()));
  SSR_CHECK(wv.ndim() == 4, "conv2d: weights must be [KH,KW,C,OC], got " << shape_str(wv.shape()));
  SSR_CHECK(xv.dim(3) == wv.dim(2), "conv2d: channel mismatch " << xv.dim(3) << " vs " << wv.dim(2));
  detail::ConvDims d;
  d.b = xv.dim(0);
  d.h = xv.dim(1);
  d.w = xv.dim(2);
  d.c = xv.dim(3);
  d.kh = wv.dim(0);
  d.kw = wv.dim(1);
  d.oc = wv.dim(3);
  d.stride = stride;
  d.pt = pad_top;
  d.pl = pad_left;
  d.oh = (d.h + pad_top + pad_bottom - d.kh) / stride + 1;
  d.ow = (d.w + pad_left + pad_right - d.kw) / stride + 1;
  SSR_CHECK(d.oh > 0 && d.ow > 0, "conv2d: empty output");
  SSR_CHECK(bias.val().numel() == d.oc, "conv2d: bias size mismatch");

  auto xcol = std::make_shared<Array>(Array::uninit({static_cast<int>(d.rows()), d.cols()}));
  detail::im2col(xv.data(), d, xcol->data());
  Array out = Array::uninit({d.b, d.oh, d.ow, d.oc});
  const Array& bv = bias.val();
  for (int64_t r = 0; r < d.rows(); ++r)
    std::memcpy(out.data() + r * d.oc, bv.data(), sizeof(double) * d.oc);
  detail::gemm(false, false, static_cast<int>(d.rows()), d.oc, d.cols(), 1.0, xcol->data(),
               d.cols(), wv.data(), d.oc, 1.0, out.data(), d.oc);

  int ix = x.id, iw = w.id, ib = bias.id;
  return x.tape->push(
      std::move(out), {ix, iw, ib},
      [ix, iw, ib, d, xcol](Tape& t, const Tape::Node& nd) {
        const Array& wv = t.val(iw);
        int rows = static_cast<int>(d.rows());
        if (t.node(iw).requires_grad)
          detail::gemm(true, false, d.cols(), d.oc, rows, 1.0, xcol->data(), d.cols(),
                       nd.grad.data(), d.oc, 1.0, t.grad(iw).data(), d.oc);
        if (t.node(ix).requires_grad) {
          Array dxcol = Array::uninit({rows, d.cols()});
          detail::gemm(false, true, rows, d.cols(), d.oc, 1.0, nd.grad.data(), d.oc, wv.data(),
                       d.oc, 0.0, dxcol.data(), d.cols());
          detail::col2im_acc(dxcol.data(), d, t.grad(ix).data());
        }
        if (t.node(ib).requires_grad) {
          Array& db = t.grad(ib);
          for (int64_t r = 0; r < d.rows(); ++r)
            for (int c = 0; c < d.oc; ++c) db[c] += nd.grad[r * d.oc + c];
        }
      },
      "conv2d");
}

}  // namespace ssr::ad
