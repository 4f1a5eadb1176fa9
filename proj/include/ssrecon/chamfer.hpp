#pragma once

#include <vector>

#include "ops.hpp"

// Chamfer distance: sum over both clouds of the squared distance to the
// nearest point of the other cloud (the un-normalized two-sided sum).
// Gradient follows only the argmin branch; ties break to the lowest index.

namespace ssr::geom {

namespace detail {

// One direction: for each p in P record the nearest q index and accumulate
// min squared distance.
inline double nn_sq_sum(const double* p, int n, const double* q, int m, int* argmin) {
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double px = p[3 * i], py = p[3 * i + 1], pz = p[3 * i + 2];
    double best = 1e300;
    int bj = 0;
    for (int j = 0; j < m; ++j) {
      double dx = px - q[3 * j], dy = py - q[3 * j + 1], dz = pz - q[3 * j + 2];
      double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    total += best;
    if (argmin) argmin[i] = bj;
  }
  return total;
}

}  // namespace detail

inline double chamfer(const Array& a, const Array& b) {
  SSR_CHECK(a.ndim() == 2 && a.dim(1) == 3 && a.dim(0) >= 1, "chamfer: first cloud empty or not [N,3]");
  SSR_CHECK(b.ndim() == 2 && b.dim(1) == 3 && b.dim(0) >= 1, "chamfer: second cloud empty or not [N,3]");
  return detail::nn_sq_sum(a.data(), a.dim(0), b.data(), b.dim(0), nullptr) +
         detail::nn_sq_sum(b.data(), b.dim(0), a.data(), a.dim(0), nullptr);
}

inline ad::Var chamfer(ad::Tape& tape, ad::Var a, ad::Var b) {
  const Array &av = a.val(), &bv = b.val();
  SSR_CHECK(av.ndim() == 2 && av.dim(1) == 3 && av.dim(0) >= 1, "chamfer: first cloud empty or not [N,3]");
  SSR_CHECK(bv.ndim() == 2 && bv.dim(1) == 3 && bv.dim(0) >= 1, "chamfer: second cloud empty or not [N,3]");
  int n = av.dim(0), m = bv.dim(0);
  std::vector<int> nn_ab(static_cast<size_t>(n)), nn_ba(static_cast<size_t>(m));
  double total = detail::nn_sq_sum(av.data(), n, bv.data(), m, nn_ab.data()) +
                 detail::nn_sq_sum(bv.data(), m, av.data(), n, nn_ba.data());
  int ia = a.id, ib = b.id;
  return tape.push(
      Array::scalar(total), {ia, ib},
      [ia, ib, nn_ab, nn_ba, n, m](ad::Tape& t, const ad::Tape::Node& nd) {
        const Array &av = t.val(ia), &bv = t.val(ib);
        double g = nd.grad[0];
        bool wa = t.node(ia).requires_grad, wb = t.node(ib).requires_grad;
        Array* ga = wa ? &t.grad(ia) : nullptr;
        Array* gb = wb ? &t.grad(ib) : nullptr;
        for (int i = 0; i < n; ++i) {
          int j = nn_ab[static_cast<size_t>(i)];
          for (int c = 0; c < 3; ++c) {
            double d = 2.0 * g * (av[3 * i + c] - bv[3 * j + c]);
            if (wa) (*ga)[3 * i + c] += d;
            if (wb) (*gb)[3 * j + c] -= d;
          }
        }
        for (int j = 0; j < m; ++j) {
          int i = nn_ba[static_cast<size_t>(j)];
          for (int c = 0; c < 3; ++c) {
            double d = 2.0 * g * (bv[3 * j + c] - av[3 * i + c]);
            if (wb) (*gb)[3 * j + c] += d;
            if (wa) (*ga)[3 * i + c] -= d;
          }
        }
      },
      "chamfer");
}

}  // namespace ssr::geom
