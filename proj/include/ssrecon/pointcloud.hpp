#pragma once

#include <optional>

#include "ops.hpp"

// Point clouds live in the canonical object frame: the object fits inside
// [-0.5, 0.5]^3, colors (when present) are per-point RGB in [0, 1].

namespace ssr::geom {

struct PointCloud {
  Array points;                 // [N,3]
  std::optional<Array> colors;  // [N,3] in [0,1]

  int size() const { return points.ndim() == 2 ? points.dim(0) : 0; }

  void validate() const {
    SSR_CHECK(points.ndim() == 2 && points.dim(1) == 3,
              "point cloud must be [N,3], got " << shape_str(points.shape()));
    SSR_CHECK(points.dim(0) >= 1, "point cloud must be nonempty");
    if (colors) {
      SSR_CHECK(colors->same_shape(points), "colors must match points shape");
      for (int64_t i = 0; i < colors->numel(); ++i)
        SSR_CHECK((*colors)[i] >= 0.0 && (*colors)[i] <= 1.0,
                  "color component " << (*colors)[i] << " outside [0,1]");
    }
  }
};

struct ReflectSplit {
  Array plus;              // points with y >= 0 (y == 0 goes to this side)
  Array minus_reflected;   // points with y < 0, y negated
  bool plus_empty = false;
  bool minus_empty = false;
};

// Split about the xz-plane and reflect the negative side onto the positive.
inline ReflectSplit reflect_xz(const Array& pts) {
  SSR_CHECK(pts.ndim() == 2 && pts.dim(1) == 3 && pts.dim(0) >= 1,
            "reflect_xz: want nonempty [N,3]");
  std::vector<double> plus, minus;
  for (int i = 0; i < pts.dim(0); ++i) {
    double x = pts.at2(i, 0), y = pts.at2(i, 1), z = pts.at2(i, 2);
    if (y >= 0.0) {
      plus.insert(plus.end(), {x, y, z});
    } else {
      minus.insert(minus.end(), {x, -y, z});
    }
  }
  ReflectSplit out;
  out.plus_empty = plus.empty();
  out.minus_empty = minus.empty();
  const int n_plus = static_cast<int>(plus.size() / 3);
  const int n_minus = static_cast<int>(minus.size() / 3);
  out.plus = Array({n_plus, 3}, std::move(plus));
  out.minus_reflected = Array({n_minus, 3}, std::move(minus));
  return out;
}

struct ReflectSplitVar {
  std::optional<ad::Var> plus;
  std::optional<ad::Var> minus_reflected;
  bool plus_empty = false;
  bool minus_empty = false;
};

// Differentiable split: membership is fixed at forward time (like an argmin);
// gradients scatter back with the y sign negated on the reflected side.
inline ReflectSplitVar split_reflect_xz(ad::Tape& tape, ad::Var pts) {
  const Array p = pts.val();  // copy: pushes below may relocate node storage
  SSR_CHECK(p.ndim() == 2 && p.dim(1) == 3 && p.dim(0) >= 1, "split_reflect_xz: want [N,3]");
  std::vector<int> plus_idx, minus_idx;
  for (int i = 0; i < p.dim(0); ++i)
    (p.at2(i, 1) >= 0.0 ? plus_idx : minus_idx).push_back(i);

  ReflectSplitVar out;
  out.plus_empty = plus_idx.empty();
  out.minus_empty = minus_idx.empty();
  int ip = pts.id;

  auto gather = [&](const std::vector<int>& idx, bool reflect) -> ad::Var {
    Array sub = Array::uninit({static_cast<int>(idx.size()), 3});
    for (size_t k = 0; k < idx.size(); ++k) {
      sub.at2(static_cast<int>(k), 0) = p.at2(idx[k], 0);
      sub.at2(static_cast<int>(k), 1) = reflect ? -p.at2(idx[k], 1) : p.at2(idx[k], 1);
      sub.at2(static_cast<int>(k), 2) = p.at2(idx[k], 2);
    }
    return tape.push(std::move(sub), {ip},
                     [ip, idx, reflect](ad::Tape& t, const ad::Tape::Node& n) {
                       Array& dst = t.grad(ip);
                       for (size_t k = 0; k < idx.size(); ++k) {
                         dst[3 * idx[k] + 0] += n.grad[3 * static_cast<int64_t>(k) + 0];
                         dst[3 * idx[k] + 1] +=
                             (reflect ? -1.0 : 1.0) * n.grad[3 * static_cast<int64_t>(k) + 1];
                         dst[3 * idx[k] + 2] += n.grad[3 * static_cast<int64_t>(k) + 2];
                       }
                     },
                     reflect ? "reflect_minus" : "reflect_plus");
  };

  if (!out.plus_empty) out.plus = gather(plus_idx, false);
  if (!out.minus_empty) out.minus_reflected = gather(minus_idx, true);
  return out;
}

}  // namespace ssr::geom
