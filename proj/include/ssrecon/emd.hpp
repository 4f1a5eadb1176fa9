#pragma once

#include <cmath>
#include <deque>
#include <vector>

#include "array.hpp"

// Earth mover's distance between equal-size clouds: the minimum-cost
// bijection under unsquared euclidean distance. Exact shortest-augmenting-path
// assignment up to n = 256; above that an epsilon-scaling auction whose
// optimality gap is bounded by 1% (flagged in the result).

namespace ssr::geom {

// Jonker-Volgenant style O(n^3) exact assignment. Returns total cost and
// fills row_to_col.
inline double assign_exact(const Array& cost, std::vector<int>& row_to_col) {
  const int n = cost.dim(0);
  const double kInf = 1e300;
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int i0 = p[static_cast<size_t>(j0)], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = cost.at2(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  row_to_col.assign(static_cast<size_t>(n), -1);
  double total = 0;
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<size_t>(j)]) {
      row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
      total += cost.at2(p[static_cast<size_t>(j)] - 1, j - 1);
    }
  return total;
}

// Bertsekas forward auction with epsilon scaling. Terminates with total cost
// within n * eps_final of the optimum.
inline double assign_auction(const Array& cost, std::vector<int>& row_to_col, double rel_gap,
                             double* gap_bound_out = nullptr) {
  const int n = cost.dim(0);
  double cmax = -1e300, cmin = 1e300;
  for (int64_t i = 0; i < cost.numel(); ++i) {
    cmax = std::max(cmax, cost[i]);
    cmin = std::min(cmin, cost[i]);
  }
  double scale = cmax - cmin;
  // Row-wise min sum: a valid lower bound on the optimal assignment cost.
  double lb = 0;
  for (int i = 0; i < n; ++i) {
    double best = 1e300;
    for (int j = 0; j < n; ++j) best = std::min(best, cost.at2(i, j));
    lb += best;
  }
  double eps_final = std::max(rel_gap * lb / n, 1e-13 * std::max(scale, 1.0));
  double eps = std::max(scale / 2.0, eps_final);

  std::vector<double> price(static_cast<size_t>(n), 0.0);
  std::vector<int> col_to_row(static_cast<size_t>(n), -1);
  row_to_col.assign(static_cast<size_t>(n), -1);

  for (;;) {
    std::fill(col_to_row.begin(), col_to_row.end(), -1);
    std::fill(row_to_col.begin(), row_to_col.end(), -1);
    std::deque<int> pending;
    for (int i = 0; i < n; ++i) pending.push_back(i);
    while (!pending.empty()) {
      int i = pending.front();
      pending.pop_front();
      // benefit of column j for row i: -cost - price
      double best = -1e300, second = -1e300;
      int bj = -1;
      for (int j = 0; j < n; ++j) {
        double val = -cost.at2(i, j) - price[static_cast<size_t>(j)];
        if (val > best) {
          second = best;
          best = val;
          bj = j;
        } else if (val > second) {
          second = val;
        }
      }
      if (second < -1e290) second = best;  // n == 1
      price[static_cast<size_t>(bj)] += best - second + eps;
      int prev = col_to_row[static_cast<size_t>(bj)];
      if (prev >= 0) {
        row_to_col[static_cast<size_t>(prev)] = -1;
        pending.push_back(prev);
      }
      col_to_row[static_cast<size_t>(bj)] = i;
      row_to_col[static_cast<size_t>(i)] = bj;
    }
    if (eps <= eps_final) break;
    eps = std::max(eps / 7.0, eps_final);
  }
  if (gap_bound_out) *gap_bound_out = n * eps_final;
  double total = 0;
  for (int i = 0; i < n; ++i) total += cost.at2(i, row_to_col[static_cast<size_t>(i)]);
  return total;
}

struct EmdResult {
  double value = 0.0;
  bool approximate = false;  // auction path used
  double gap_bound = 0.0;    // absolute optimality gap bound when approximate
};

constexpr int kEmdExactLimit = 256;

inline EmdResult emd_full(const Array& a, const Array& b) {
  SSR_CHECK(a.ndim() == 2 && a.dim(1) == 3 && b.ndim() == 2 && b.dim(1) == 3,
            "emd: want [N,3] clouds");
  SSR_CHECK(a.dim(0) == b.dim(0),
            "emd: size mismatch " << a.dim(0) << " vs " << b.dim(0));
  SSR_CHECK(a.dim(0) >= 1, "emd: empty clouds");
  const int n = a.dim(0);
  Array cost({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dx = a.at2(i, 0) - b.at2(j, 0);
      double dy = a.at2(i, 1) - b.at2(j, 1);
      double dz = a.at2(i, 2) - b.at2(j, 2);
      cost.at2(i, j) = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  EmdResult res;
  std::vector<int> assign;
  if (n <= kEmdExactLimit) {
    res.value = assign_exact(cost, assign);
  } else {
    res.approximate = true;
    res.value = assign_auction(cost, assign, 0.01, &res.gap_bound);
  }
  return res;
}

inline double emd(const Array& a, const Array& b) { return emd_full(a, b).value; }

}  // namespace ssr::geom
