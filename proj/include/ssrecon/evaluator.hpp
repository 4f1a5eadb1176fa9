#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "chamfer.hpp"
#include "dataset.hpp"
#include "emd.hpp"
#include "knn.hpp"
#include "networks.hpp"

// Evaluation: shape metrics (chamfer / EMD, scaled by 100), the global
// rotation alignment for pose-unsupervised models, flip-resolved pose
// metrics, the multi-view color metric, and the point-correspondence /
// part-transfer applications.
//
// Reported chamfer is the two-sided nearest-neighbour sum divided by the
// total point count, and EMD the mean per-point assignment distance; both
// are then scaled by 100 exactly once. Trends and ratios are unaffected by
// the per-point normalization and the numbers stay in a readable range.

namespace ssr::eval {

using data::Dataset;
using data::Split;

// ---------------------------------------------------------------------------
// helpers

inline Array subsample_points(const Array& pts, int n, uint64_t seed) {
  SSR_CHECK(pts.ndim() == 2 && pts.dim(1) == 3, "subsample_points: want [N,3]");
  int total = pts.dim(0);
  if (total <= n) return pts;
  Rng rng(seed);
  std::vector<int> idx(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) idx[static_cast<size_t>(i)] = i;
  rng.shuffle(idx);
  Array out({n, 3});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out.at2(i, c) = pts.at2(idx[static_cast<size_t>(i)], c);
  return out;
}

inline Array apply_rotation(const geom::Mat3& r, const Array& pts) {
  Array out(pts.shape());
  for (int i = 0; i < pts.dim(0); ++i) {
    auto q = r.apply(pts.data() + 3 * i);
    for (int c = 0; c < 3; ++c) out.at2(i, c) = q[static_cast<size_t>(c)];
  }
  return out;
}

inline double chamfer100(const Array& a, const Array& b) {
  return 100.0 * geom::chamfer(a, b) / static_cast<double>(a.dim(0) + b.dim(0));
}

// Batched plain reconstruction over a split.
inline std::vector<geom::PointCloud> predict_split(const net::ReconNet& recon, const Dataset& ds,
                                                   Split split) {
  int n = ds.count(split);
  std::vector<geom::PointCloud> preds;
  preds.reserve(static_cast<size_t>(n));
  const int kBatch = 16;
  for (int start = 0; start < n; start += kBatch) {
    int b = std::min(kBatch, n - start);
    Array batch({b, net::kImageSize, net::kImageSize, 3});
    int64_t per = batch.numel() / b;
    for (int i = 0; i < b; ++i)
      std::memcpy(batch.data() + i * per, ds.image(split, start + i).data(),
                  sizeof(double) * static_cast<size_t>(per));
    net::ReconOutPlain out = net::recon_forward_plain(recon, batch);
    for (int i = 0; i < b; ++i) {
      geom::PointCloud pc;
      pc.points = Array({net::kNumPoints, 3});
      pc.colors = Array({net::kNumPoints, 3});
      std::memcpy(pc.points.data(), out.points.data() + i * (net::kNumPoints * 3),
                  sizeof(double) * net::kNumPoints * 3);
      std::memcpy(pc.colors->data(), out.colors.data() + i * (net::kNumPoints * 3),
                  sizeof(double) * net::kNumPoints * 3);
      preds.push_back(std::move(pc));
    }
  }
  return preds;
}

// GT cloud sampled to 1024 points with a per-instance seed, so repeated
// evaluations are identical.
inline Array gt_points_1024(const Dataset& ds, Split split, int i) {
  const geom::PointCloud& gt = ds.gt_cloud(split, i);
  return subsample_points(gt.points, net::kNumPoints,
                          0xE7A1u + static_cast<uint64_t>(ds.instance_id(split, i)));
}

// ---------------------------------------------------------------------------
// global alignment: azimuth grid (1 degree) x optional 180-degree vertical
// flip, minimizing mean val chamfer; returned rotation is applied to every
// prediction before shape/pose metrics.

struct Alignment {
  geom::Mat3 rot = geom::Mat3::identity();
  double azimuth_deg = 0.0;
  bool flipped = false;
  double mean_chamfer100 = 0.0;
};

inline Alignment global_align(const std::vector<Array>& preds, const std::vector<Array>& gts,
                              double step_deg = 1.0, int search_points = 256) {
  SSR_CHECK(!preds.empty() && preds.size() == gts.size(), "global_align: bad inputs");
  std::vector<Array> ps, gs;
  for (size_t i = 0; i < preds.size(); ++i) {
    ps.push_back(subsample_points(preds[i], search_points, 11 + i));
    gs.push_back(subsample_points(gts[i], search_points, 17 + i));
  }
  Alignment best;
  double best_cost = 1e300;
  for (int flip = 0; flip < 2; ++flip) {
    geom::Mat3 f = flip ? geom::rot_x(180.0) : geom::Mat3::identity();
    for (double theta = 0.0; theta < 360.0; theta += step_deg) {
      geom::Mat3 r = geom::rot_z(theta) * f;
      double cost = 0;
      for (size_t i = 0; i < ps.size(); ++i)
        cost += chamfer100(apply_rotation(r, ps[i]), gs[i]);
      cost /= static_cast<double>(ps.size());
      if (cost < best_cost) {
        best_cost = cost;
        best.rot = r;
        best.azimuth_deg = theta;
        best.flipped = flip != 0;
        best.mean_chamfer100 = cost;
      }
    }
  }
  return best;
}

inline Alignment global_align(const net::ReconNet& recon, const Dataset& ds, Split split,
                              double step_deg = 1.0, int search_points = 256) {
  std::vector<geom::PointCloud> preds = predict_split(recon, ds, split);
  std::vector<Array> ps, gs;
  for (int i = 0; i < ds.count(split); ++i) {
    ps.push_back(preds[static_cast<size_t>(i)].points);
    gs.push_back(gt_points_1024(ds, split, i));
  }
  return global_align(ps, gs, step_deg, search_points);
}

// ---------------------------------------------------------------------------
// reconstruction metrics

struct ShapeMetrics {
  std::vector<double> chamfer100;  // per instance
  std::vector<double> emd100;
  double mean_chamfer100 = 0.0;
  double mean_emd100 = 0.0;
  bool emd_approximate = false;
  double emd_gap_bound = 0.0;
};

inline ShapeMetrics eval_reconstruction(const net::ReconNet& recon, const Dataset& ds,
                                        Split split, const Alignment& align,
                                        bool with_emd = true) {
  std::vector<geom::PointCloud> preds = predict_split(recon, ds, split);
  ShapeMetrics m;
  for (int i = 0; i < ds.count(split); ++i) {
    Array gt = gt_points_1024(ds, split, i);
    Array pred = apply_rotation(align.rot, preds[static_cast<size_t>(i)].points);
    m.chamfer100.push_back(chamfer100(pred, gt));
    if (with_emd) {
      geom::EmdResult e = geom::emd_full(pred, gt);
      m.emd100.push_back(100.0 * e.value / static_cast<double>(pred.dim(0)));
      m.emd_approximate = m.emd_approximate || e.approximate;
      m.emd_gap_bound = std::max(m.emd_gap_bound, e.gap_bound);
    }
  }
  for (double c : m.chamfer100) m.mean_chamfer100 += c;
  m.mean_chamfer100 /= static_cast<double>(m.chamfer100.size());
  if (with_emd) {
    for (double e : m.emd100) m.mean_emd100 += e;
    m.mean_emd100 /= static_cast<double>(m.emd100.size());
  }
  return m;
}

// Cheap unaligned-model validation metric for training logs: coarse
// alignment grid, chamfer only.
inline double quick_val_chamfer(const net::ReconNet& recon, const Dataset& ds, Split split) {
  Alignment a = global_align(recon, ds, split, 10.0, 128);
  ShapeMetrics m = eval_reconstruction(recon, ds, split, a, false);
  return m.mean_chamfer100;
}

// ---------------------------------------------------------------------------
// pose metrics with the flip rule

struct PoseMetrics {
  double median_noflip = 0.0;
  double median_flip = 0.0;
  double accuracy_noflip = 0.0;  // fraction with error < 30 degrees
  double accuracy_flip = 0.0;
  int count = 0;
};

constexpr double kPoseAccuracyThresholdDeg = 30.0;

namespace detail {

inline double median(std::vector<double> v) {
  SSR_CHECK(!v.empty(), "median of empty vector");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double angle_between(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  dot = std::min(1.0, std::max(-1.0, dot));
  return std::acos(dot) / geom::kDegToRad;
}

}  // namespace detail

// Per instance: angular error between the aligned predicted view direction
// and the GT view direction. Flip metrics rotate the prediction 180 degrees
// about the up axis whenever the error exceeds 90 degrees and keep the better
// of the two, so they can never be worse than the no-flip metrics.
inline PoseMetrics eval_pose(const net::PoseNet& pose, const Dataset& ds, Split split,
                             const Alignment& align,
                             const std::vector<int>* subset = nullptr) {
  const auto& cfg = ds.config();
  std::vector<int> all;
  if (!subset) {
    for (int i = 0; i < ds.count(split); ++i) all.push_back(i);
    subset = &all;
  }
  SSR_CHECK(!subset->empty(), "eval_pose: empty instance subset");
  std::vector<double> err_noflip, err_flip;
  geom::Mat3 half_turn = geom::rot_z(180.0);
  for (int i : *subset) {
    Array img({1, net::kImageSize, net::kImageSize, 3});
    std::memcpy(img.data(), ds.image(split, i).data(), sizeof(double) * static_cast<size_t>(img.numel()));
    geom::Viewpoint vp =
        net::pose_forward_plain(pose, img, cfg.elev_min, cfg.elev_max, cfg.distance)[0];
    auto pred_dir3 = geom::view_direction(vp);
    double pred_dir[3] = {pred_dir3[0], pred_dir3[1], pred_dir3[2]};
    std::array<double, 3> aligned = align.rot.apply(pred_dir);
    double flipped_dir[3] = {pred_dir[0], pred_dir[1], pred_dir[2]};
    auto fd = half_turn.apply(flipped_dir);
    std::array<double, 3> aligned_flip = align.rot.apply(fd.data());
    auto gt_dir = geom::view_direction(ds.gt_view(split, i));

    double e = detail::angle_between(aligned, gt_dir);
    err_noflip.push_back(e);
    double ef = e;
    if (e > 90.0) ef = std::min(e, detail::angle_between(aligned_flip, gt_dir));
    err_flip.push_back(ef);
  }
  PoseMetrics pm;
  pm.count = static_cast<int>(err_noflip.size());
  pm.median_noflip = detail::median(err_noflip);
  pm.median_flip = detail::median(err_flip);
  for (size_t i = 0; i < err_noflip.size(); ++i) {
    pm.accuracy_noflip += err_noflip[i] < kPoseAccuracyThresholdDeg;
    pm.accuracy_flip += err_flip[i] < kPoseAccuracyThresholdDeg;
  }
  pm.accuracy_noflip /= static_cast<double>(pm.count);
  pm.accuracy_flip /= static_cast<double>(pm.count);
  return pm;
}

// ---------------------------------------------------------------------------
// color metric: render prediction and GT cloud from the same 10 sampled
// viewpoints, mean per-pixel channelwise squared L2

inline double eval_color(const net::ReconNet& recon, const Dataset& ds, Split split,
                         int views = 10, uint64_t seed = 99) {
  const auto& cfg = ds.config();
  std::vector<geom::PointCloud> preds = predict_split(recon, ds, split);
  double total = 0;
  for (int i = 0; i < ds.count(split); ++i) {
    const geom::PointCloud& gt = ds.gt_cloud(split, i);
    Rng rng(Rng(seed).derive(static_cast<uint64_t>(ds.instance_id(split, i))).seed());
    double inst = 0;
    for (int v = 0; v < views; ++v) {
      geom::Viewpoint vp =
          geom::sample_random_viewpoint(rng, cfg.elev_min, cfg.elev_max, cfg.distance);
      Array a = render::render_color(preds[static_cast<size_t>(i)].points,
                                     *preds[static_cast<size_t>(i)].colors, vp, cfg.cam,
                                     cfg.render);
      Array b = render::render_color(gt.points, *gt.colors, vp, cfg.cam, cfg.render);
      double s = 0;
      for (int64_t p = 0; p < a.numel(); ++p) {
        double d = a[p] - b[p];
        s += d * d;
      }
      inst += s / (static_cast<double>(cfg.cam.h) * cfg.cam.w);
    }
    total += inst / views;
  }
  return total / ds.count(split);
}

// ---------------------------------------------------------------------------
// point correspondence and part transfer

// Fixed color for point index i from a 32x32 UV map over index space; the
// same index gets the same color in every exported reconstruction.
inline Array uv_index_colors(int n = net::kNumPoints) {
  Array colors({n, 3});
  int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  for (int i = 0; i < n; ++i) {
    double u = static_cast<double>(i % grid) / (grid - 1);
    double v = static_cast<double>(i / grid) / (grid - 1);
    colors.at2(i, 0) = u;
    colors.at2(i, 1) = v;
    colors.at2(i, 2) = 1.0 - 0.5 * (u + v);
  }
  return colors;
}

// Label of point i in the reference is copied to point i of every target.
inline std::vector<std::vector<int>> transfer_part_labels(
    const std::vector<int>& reference_labels, const std::vector<geom::PointCloud>& targets) {
  SSR_CHECK(static_cast<int>(reference_labels.size()) == net::kNumPoints,
            "transfer_part_labels: want " << net::kNumPoints << " labels, got "
                                          << reference_labels.size());
  std::vector<std::vector<int>> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    SSR_CHECK(t.points.dim(0) == net::kNumPoints, "transfer_part_labels: target size mismatch");
    out.push_back(reference_labels);
  }
  return out;
}

// Nearest-GT-point part id for every predicted point (the reference labeling
// an evaluation compares transfers against).
inline std::vector<int> nearest_gt_parts(const Array& pred, const Array& gt_points,
                                         const std::vector<int>& gt_parts) {
  std::vector<int> labels(static_cast<size_t>(pred.dim(0)));
  for (int i = 0; i < pred.dim(0); ++i) {
    double best = 1e300;
    int bj = 0;
    for (int j = 0; j < gt_points.dim(0); ++j) {
      double dx = pred.at2(i, 0) - gt_points.at2(j, 0);
      double dy = pred.at2(i, 1) - gt_points.at2(j, 1);
      double dz = pred.at2(i, 2) - gt_points.at2(j, 2);
      double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    labels[static_cast<size_t>(i)] = gt_parts[static_cast<size_t>(bj)];
  }
  return labels;
}

// Mean per-part IoU between two labelings of the same 1024 points.
inline double part_label_iou(const std::vector<int>& a, const std::vector<int>& b,
                             int num_parts) {
  double total = 0;
  int counted = 0;
  for (int p = 0; p < num_parts; ++p) {
    int inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      bool ia = a[i] == p, ib = b[i] == p;
      inter += ia && ib;
      uni += ia || ib;
    }
    if (uni > 0) {
      total += static_cast<double>(inter) / uni;
      ++counted;
    }
  }
  return counted ? total / counted : 0.0;
}

}  // namespace ssr::eval
