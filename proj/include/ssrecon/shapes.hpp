#pragma once

#include <array>
#include <vector>

#include "pointcloud.hpp"
#include "rng.hpp"

// Procedural shape families standing in for category-level mesh datasets:
// box composites with part-wise randomized extents. Every shape is symmetric
// about the xz-plane by construction (off-axis boxes come in mirrored pairs
// and the sampled cloud is mirrored point-for-point), carries per-part ids
// and per-part colors, and fits inside [-0.5, 0.5]^3.

namespace ssr::data {

enum class Category : int { kChairLike = 0, kCarLike = 1, kPlaneLike = 2 };

inline const char* category_name(Category c) {
  switch (c) {
    case Category::kChairLike: return "chair-like";
    case Category::kCarLike: return "car-like";
    case Category::kPlaneLike: return "plane-like";
  }
  return "?";
}

struct Box {
  std::array<double, 3> center;
  std::array<double, 3> half;
  int part;
};

struct ShapeSpec {
  Category category;
  std::vector<Box> boxes;
  std::vector<std::array<double, 3>> part_colors;
  int num_parts = 0;
};

namespace detail {

inline void add_box(ShapeSpec& s, const Box& b) { s.boxes.push_back(b); }

// Off-axis boxes must come with their xz-plane mirror.
inline void add_mirrored(ShapeSpec& s, Box b) {
  s.boxes.push_back(b);
  b.center[1] = -b.center[1];
  s.boxes.push_back(b);
}

inline void finish(ShapeSpec& s, int num_parts, Rng& rng) {
  s.num_parts = num_parts;
  for (int p = 0; p < num_parts; ++p)
    s.part_colors.push_back({rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92),
                             rng.uniform(0.08, 0.92)});
  // uniform scale + xz recenter into [-0.5, 0.5]^3 (the y extent is already
  // symmetric about 0)
  double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1e9, -1e9, -1e9};
  for (const Box& b : s.boxes)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], b.center[d] - b.half[d]);
      hi[d] = std::max(hi[d], b.center[d] + b.half[d]);
    }
  double cx = 0.5 * (lo[0] + hi[0]), cz = 0.5 * (lo[2] + hi[2]);
  double m = 0;
  m = std::max(m, 0.5 * (hi[0] - lo[0]));
  m = std::max(m, std::max(std::fabs(lo[1]), std::fabs(hi[1])));
  m = std::max(m, 0.5 * (hi[2] - lo[2]));
  double scale = 0.48 / m;
  for (Box& b : s.boxes) {
    b.center[0] = (b.center[0] - cx) * scale;
    b.center[1] = b.center[1] * scale;
    b.center[2] = (b.center[2] - cz) * scale;
    for (int d = 0; d < 3; ++d) b.half[d] *= scale;
  }
}

}  // namespace detail

// Parts: 0 seat, 1 back, 2 legs.
inline ShapeSpec make_chair_like(Rng& rng) {
  ShapeSpec s;
  s.category = Category::kChairLike;
  double sx = rng.uniform(0.16, 0.24);   // seat depth (x)
  double sy = rng.uniform(0.16, 0.26);   // seat half-width
  double st = rng.uniform(0.02, 0.045);  // seat thickness
  double lh = rng.uniform(0.14, 0.26);   // leg height
  double lt = rng.uniform(0.018, 0.035); // leg half-thickness
  double bh = rng.uniform(0.18, 0.30);   // back height
  double bt = rng.uniform(0.02, 0.04);   // back thickness
  double z_seat = lh + st;
  detail::add_box(s, {{0, 0, z_seat}, {sx, sy, st}, 0});
  detail::add_box(s, {{-sx + bt, 0, z_seat + st + bh}, {bt, sy, bh}, 1});
  for (double xs : {-1.0, 1.0})
    detail::add_mirrored(s, {{xs * (sx - lt), sy - lt, lh * 0.5}, {lt, lt, lh * 0.5 + st}, 2});
  detail::finish(s, 3, rng);
  return s;
}

// Parts: 0 body, 1 cabin, 2 wheels.
inline ShapeSpec make_car_like(Rng& rng) {
  ShapeSpec s;
  s.category = Category::kCarLike;
  double bx = rng.uniform(0.34, 0.48);   // body half-length (x)
  double by = rng.uniform(0.13, 0.19);   // body half-width
  double bz = rng.uniform(0.07, 0.11);   // body half-height
  double cx = rng.uniform(0.14, 0.22);   // cabin half-length
  double cz = rng.uniform(0.06, 0.10);   // cabin half-height
  double coff = rng.uniform(-0.10, 0.02);
  double wr = rng.uniform(0.045, 0.07);  // wheel half-size
  double wx = bx * rng.uniform(0.52, 0.68);
  double zb = 2 * wr + bz;               // body center height
  detail::add_box(s, {{0, 0, zb}, {bx, by, bz}, 0});
  detail::add_box(s, {{coff, 0, zb + bz + cz}, {cx, by * 0.82, cz}, 1});
  for (double xs : {-1.0, 1.0})
    detail::add_mirrored(s, {{xs * wx, by, wr}, {wr, wr * 0.6, wr}, 2});
  detail::finish(s, 3, rng);
  return s;
}

// Parts: 0 fuselage, 1 wings, 2 tail fin, 3 stabilizer.
inline ShapeSpec make_plane_like(Rng& rng) {
  ShapeSpec s;
  s.category = Category::kPlaneLike;
  double fx = rng.uniform(0.38, 0.50);    // fuselage half-length
  double fr = rng.uniform(0.05, 0.08);    // fuselage half-thickness
  double wy = rng.uniform(0.34, 0.50);    // wing half-span
  double wxl = rng.uniform(0.07, 0.13);   // wing half-chord
  double wt = rng.uniform(0.012, 0.022);  // wing half-thickness
  double woff = rng.uniform(0.02, 0.14);  // wing x offset (toward nose)
  double th = rng.uniform(0.10, 0.16);    // fin height
  double tl = rng.uniform(0.05, 0.09);    // fin half-chord
  double sy = rng.uniform(0.10, 0.17);    // stabilizer half-span
  detail::add_box(s, {{0, 0, 0}, {fx, fr, fr}, 0});
  detail::add_box(s, {{woff, 0, 0}, {wxl, wy, wt}, 1});
  detail::add_box(s, {{-fx + tl, 0, fr + th * 0.5}, {tl, wt, th * 0.5}, 2});
  detail::add_box(s, {{-fx + tl, 0, 0}, {tl * 0.9, sy, wt}, 3});
  detail::finish(s, 4, rng);
  return s;
}

inline ShapeSpec make_shape(Category c, Rng& rng) {
  switch (c) {
    case Category::kChairLike: return make_chair_like(rng);
    case Category::kCarLike: return make_car_like(rng);
    case Category::kPlaneLike: return make_plane_like(rng);
  }
  SSR_CHECK(false, "make_shape: bad category");
  return {};
}

// ---------------------------------------------------------------------------
// surface sampling

struct SampledShape {
  geom::PointCloud cloud;
  std::vector<int> part_labels;
};

// Samples total_points/2 points area-uniformly on the box surfaces, then
// mirrors each across the xz-plane. The mirrored copy lands on the (mirrored)
// surface of the same shape, so the cloud is exactly symmetric as a point set
// and symmetry_loss(gt) == 0.
inline SampledShape sample_shape_surface(const ShapeSpec& spec, int total_points, Rng& rng) {
  SSR_CHECK(total_points % 2 == 0 && total_points >= 2, "sample_shape_surface: want even count");
  int half = total_points / 2;

  std::vector<double> box_area(spec.boxes.size());
  double total_area = 0;
  for (size_t b = 0; b < spec.boxes.size(); ++b) {
    const auto& h = spec.boxes[b].half;
    box_area[b] = 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
    total_area += box_area[b];
  }

  SampledShape out;
  out.cloud.points = Array({total_points, 3});
  out.cloud.colors = Array({total_points, 3});
  out.part_labels.resize(static_cast<size_t>(total_points));

  for (int i = 0; i < half; ++i) {
    // pick box by area
    double r = rng.uniform() * total_area;
    size_t b = 0;
    while (b + 1 < spec.boxes.size() && r > box_area[b]) {
      r -= box_area[b];
      ++b;
    }
    const Box& box = spec.boxes[b];
    const auto& h = box.half;
    // pick face by area: pairs (yz, xz, xy)
    double fa[3] = {4 * h[1] * h[2], 4 * h[0] * h[2], 4 * h[0] * h[1]};
    double fr = rng.uniform() * (2 * (fa[0] + fa[1] + fa[2]));
    int axis = 0;
    double acc = 2 * fa[0];
    while (axis < 2 && fr > acc) {
      ++axis;
      acc += 2 * fa[axis];
    }
    double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double p[3];
    for (int d = 0; d < 3; ++d) p[d] = rng.uniform(-h[d], h[d]);
    p[axis] = side * h[axis];
    for (int d = 0; d < 3; ++d) p[d] += box.center[d];

    const auto& col = spec.part_colors[static_cast<size_t>(box.part)];
    for (int d = 0; d < 3; ++d) {
      out.cloud.points.at2(2 * i, d) = p[d];
      out.cloud.points.at2(2 * i + 1, d) = d == 1 ? -p[d] : p[d];
      out.cloud.colors->at2(2 * i, d) = col[static_cast<size_t>(d)];
      out.cloud.colors->at2(2 * i + 1, d) = col[static_cast<size_t>(d)];
    }
    out.part_labels[static_cast<size_t>(2 * i)] = box.part;
    out.part_labels[static_cast<size_t>(2 * i + 1)] = box.part;
  }
  return out;
}

}  // namespace ssr::data
