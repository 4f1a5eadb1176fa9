#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "chamfer.hpp"
#include "pointcloud.hpp"
#include "renderer.hpp"

// Projection, cycle-consistency, nearest-neighbour, symmetry and
// inference-stage objectives. Every loss here is unit-testable on its own and
// nonnegative, and is exactly zero at its perfect-input case.

namespace ssr::loss {

using ad::Tape;
using ad::Var;

struct LossWeights {
  double alpha = 100.0;          // image + mask
  double beta = 1e4;             // geometric cycle consistency
  double gamma = 1.0;            // pose-side image + mask
  double rho = 1.0;              // pose cycle consistency
  double eta_nn = 100.0;         // nearest-neighbour masks (same as alpha)
  double kappa_sym = 100.0;      // training-time symmetry
  double lambda_reg = 500.0;     // inference-stage drift regularizer
  double kappa_iso_sym = 500.0;  // inference-stage symmetry

  void validate() const {
    SSR_CHECK(alpha >= 0 && beta >= 0 && gamma >= 0 && rho >= 0 && eta_nn >= 0 &&
                  kappa_sym >= 0 && lambda_reg >= 0 && kappa_iso_sym >= 0,
              "loss weights must be nonnegative");
  }
};

constexpr double kBceEps = 1e-7;
constexpr double kMaskPosThreshold = 0.05;  // membership threshold for predicted positives

// ---------------------------------------------------------------------------
// image loss: (1/hw) sum_ij ||I_ij - Ihat_ij||^2, both composited on the
// shared background

inline Var image_loss(Tape& tape, Var rendered, const Array& gt) {
  SSR_CHECK(rendered.val().same_shape(gt), "image_loss: shape mismatch "
                                               << shape_str(rendered.val().shape()) << " vs "
                                               << shape_str(gt.shape()));
  SSR_CHECK(gt.ndim() == 3 && gt.dim(2) == 3, "image_loss: want [H,W,3]");
  double inv_hw = 1.0 / (static_cast<double>(gt.dim(0)) * gt.dim(1));
  Var d = ad::sub(rendered, tape.constant(gt));
  return ad::scale(ad::sum(ad::mul(d, d)), inv_hw);
}

// ---------------------------------------------------------------------------
// binary cross entropy over mask pixels, prediction clamped to [eps, 1-eps]

inline Var bce_mask_loss(Tape& tape, Var mask, const Array& gt) {
  SSR_CHECK(mask.val().same_shape(gt), "bce_mask_loss: shape mismatch "
                                           << shape_str(mask.val().shape()) << " vs "
                                           << shape_str(gt.shape()));
  Var m = ad::clamp(mask, kBceEps, 1.0 - kBceEps);
  Var gtc = tape.constant(gt);
  Array inv_gt(gt.shape());
  for (int64_t i = 0; i < gt.numel(); ++i) inv_gt[i] = 1.0 - gt[i];
  Var pos = ad::mul(gtc, ad::log(m));
  Var neg_term = ad::mul(tape.constant(inv_gt), ad::log(ad::add_const(ad::neg(m), 1.0)));
  return ad::neg(ad::mean(ad::add(pos, neg_term)));
}

// ---------------------------------------------------------------------------
// affinity loss (the long-range mask term): each unit of predicted mass pays
// the squared pixel distance to the nearest GT positive, and each GT positive
// pays the squared distance to the nearest predicted positive weighted by the
// predicted value there.

namespace detail {

// Exact squared euclidean distance transform with nearest-site tracking.
// Brute per-column scan then per-row combine; h*w is 4096 here so the O(h*w^2)
// row pass is fine.
inline void edt_sq(const std::vector<char>& pos, int h, int w, Array& dist2,
                   std::vector<int>* site = nullptr) {
  const double kInf = 1e18;
  // per column: nearest positive row
  std::vector<double> coldist(static_cast<size_t>(h) * w, kInf);
  std::vector<int> colsite(static_cast<size_t>(h) * w, -1);
  for (int x = 0; x < w; ++x) {
    int last = -1;
    for (int y = 0; y < h; ++y) {
      if (pos[static_cast<size_t>(y) * w + x]) last = y;
      if (last >= 0) {
        coldist[static_cast<size_t>(y) * w + x] = static_cast<double>(y - last) * (y - last);
        colsite[static_cast<size_t>(y) * w + x] = last;
      }
    }
    int next = -1;
    for (int y = h - 1; y >= 0; --y) {
      if (pos[static_cast<size_t>(y) * w + x]) next = y;
      if (next >= 0) {
        double d = static_cast<double>(next - y) * (next - y);
        if (d < coldist[static_cast<size_t>(y) * w + x]) {
          coldist[static_cast<size_t>(y) * w + x] = d;
          colsite[static_cast<size_t>(y) * w + x] = next;
        }
      }
    }
  }
  dist2 = Array({h, w}, kInf);
  if (site) site->assign(static_cast<size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double best = kInf;
      int bs = -1;
      for (int xx = 0; xx < w; ++xx) {
        double cd = coldist[static_cast<size_t>(y) * w + xx];
        if (cd >= kInf) continue;
        double d = cd + static_cast<double>(x - xx) * (x - xx);
        if (d < best) {
          best = d;
          bs = colsite[static_cast<size_t>(y) * w + xx] * w + xx;
        }
      }
      dist2.at2(y, x) = best;
      if (site) (*site)[static_cast<size_t>(y) * w + x] = bs;
    }
}

}  // namespace detail

// Squared distance to the nearest positive pixel of a binary mask, for every
// pixel. Cacheable per ground-truth mask.
inline Array mask_distance_sq(const Array& mask) {
  SSR_CHECK(mask.ndim() == 2, "mask_distance_sq: want [H,W]");
  int h = mask.dim(0), w = mask.dim(1);
  std::vector<char> pos(static_cast<size_t>(h) * w);
  bool any = false;
  for (int64_t i = 0; i < mask.numel(); ++i) {
    pos[static_cast<size_t>(i)] = mask[i] > 0.5;
    any = any || pos[static_cast<size_t>(i)];
  }
  Array d2;
  if (!any) {
    d2 = Array({h, w});  // degenerate GT: term contributes zero
    return d2;
  }
  detail::edt_sq(pos, h, w, d2, nullptr);
  return d2;
}

// Pixel centers (x, y) of the positive mask pixels; cacheable per GT mask.
inline Array mask_positive_pixels(const Array& mask) {
  SSR_CHECK(mask.ndim() == 2, "mask_positive_pixels: want [H,W]");
  std::vector<double> xy;
  for (int y = 0; y < mask.dim(0); ++y)
    for (int x = 0; x < mask.dim(1); ++x)
      if (mask.at2(y, x) > 0.5) {
        xy.push_back(static_cast<double>(x));
        xy.push_back(static_cast<double>(y));
      }
  return Array({static_cast<int>(xy.size() / 2), 2}, xy);
}

// Long-range silhouette attraction in point space: the 2D chamfer between
// the GT-positive pixel centers and the projected points. Each unexplained
// silhouette pixel pulls its nearest projection toward it and each stray
// projection is pulled toward the silhouette; this is the gradient path the
// mask-value affinity formula cannot provide (pixels cannot move).
inline Var silhouette_attraction_loss(Tape& tape, Var uvd, const Array& positives,
                                      bool* degenerate = nullptr) {
  const Array& uv = uvd.val();
  SSR_CHECK(uv.ndim() == 2 && uv.dim(1) == 3 && uv.dim(0) >= 1,
            "silhouette_attraction_loss: want projected [N,3]");
  const int np = positives.dim(0);
  if (degenerate) *degenerate = np == 0;
  if (np == 0) return tape.constant(Array::scalar(0.0));
  const int n = uv.dim(0);

  std::vector<int> nn_of_pix(static_cast<size_t>(np));
  std::vector<int> nn_of_pt(static_cast<size_t>(n));
  double total = 0;
  for (int p = 0; p < np; ++p) {
    double px = positives.at2(p, 0), py = positives.at2(p, 1);
    double best = 1e300;
    int bi = 0;
    for (int i = 0; i < n; ++i) {
      double dx = px - uv.at2(i, 0), dy = py - uv.at2(i, 1);
      double d = dx * dx + dy * dy;
      if (d < best) {
        best = d;
        bi = i;
      }
    }
    total += best;
    nn_of_pix[static_cast<size_t>(p)] = bi;
  }
  for (int i = 0; i < n; ++i) {
    double ux = uv.at2(i, 0), uy = uv.at2(i, 1);
    double best = 1e300;
    int bp = 0;
    for (int p = 0; p < np; ++p) {
      double dx = ux - positives.at2(p, 0), dy = uy - positives.at2(p, 1);
      double d = dx * dx + dy * dy;
      if (d < best) {
        best = d;
        bp = p;
      }
    }
    total += best;
    nn_of_pt[static_cast<size_t>(i)] = bp;
  }

  auto pos = std::make_shared<Array>(positives);
  int iu = uvd.id;
  return tape.push(
      Array::scalar(total), {iu},
      [iu, pos, nn_of_pix, nn_of_pt, n, np](Tape& t, const Tape::Node& nd) {
        if (!t.node(iu).requires_grad) return;
        const Array& uv = t.val(iu);
        Array& gu = t.grad(iu);
        double g = nd.grad[0];
        for (int p = 0; p < np; ++p) {
          int i = nn_of_pix[static_cast<size_t>(p)];
          gu[3 * i + 0] += 2.0 * g * (uv.at2(i, 0) - pos->at2(p, 0));
          gu[3 * i + 1] += 2.0 * g * (uv.at2(i, 1) - pos->at2(p, 1));
        }
        for (int i = 0; i < n; ++i) {
          int p = nn_of_pt[static_cast<size_t>(i)];
          gu[3 * i + 0] += 2.0 * g * (uv.at2(i, 0) - pos->at2(p, 0));
          gu[3 * i + 1] += 2.0 * g * (uv.at2(i, 1) - pos->at2(p, 1));
        }
      },
      "silhouette_attraction");
}

// `gt_dist2` is mask_distance_sq(gt) (pass the cached copy on hot paths;
// nullptr recomputes). Sets *degenerate if either positive set is empty.
inline Var affinity_loss(Tape& tape, Var mask, const Array& gt, const Array* gt_dist2 = nullptr,
                         bool* degenerate = nullptr) {
  const Array& mv = mask.val();
  SSR_CHECK(mv.same_shape(gt), "affinity_loss: shape mismatch");
  SSR_CHECK(mv.ndim() == 2, "affinity_loss: want [H,W]");
  int h = mv.dim(0), w = mv.dim(1);

  Array gt_d2_local;
  const Array* gd2 = gt_dist2;
  if (!gd2) {
    gt_d2_local = mask_distance_sq(gt);
    gd2 = &gt_d2_local;
  }
  bool gt_any = false;
  for (int64_t i = 0; i < gt.numel(); ++i) gt_any = gt_any || gt[i] > 0.5;

  // predicted positive set
  std::vector<char> pred_pos(static_cast<size_t>(h) * w);
  bool pred_any = false;
  for (int64_t i = 0; i < mv.numel(); ++i) {
    pred_pos[static_cast<size_t>(i)] = mv[i] > kMaskPosThreshold;
    pred_any = pred_any || pred_pos[static_cast<size_t>(i)];
  }
  if (degenerate) *degenerate = !gt_any || !pred_any;

  double term1 = 0.0;
  if (gt_any)
    for (int64_t i = 0; i < mv.numel(); ++i) term1 += mv[i] * (*gd2)[i];

  // term2: for each GT positive pixel, squared distance to the nearest
  // predicted positive, weighted by the predicted value at that site.
  auto pairs = std::make_shared<std::vector<std::pair<int, double>>>();  // (site, d2)
  double term2 = 0.0;
  if (pred_any) {
    Array pd2;
    std::vector<int> sites;
    detail::edt_sq(pred_pos, h, w, pd2, &sites);
    for (int64_t i = 0; i < gt.numel(); ++i) {
      if (gt[i] <= 0.5) continue;
      int q = sites[static_cast<size_t>(i)];
      double d2 = pd2[i];
      term2 += d2 * mv[q];
      if (d2 != 0.0) pairs->push_back({q, d2});
    }
  }

  auto gt_d2_keep = std::make_shared<Array>(*gd2);
  bool use_term1 = gt_any;
  int im = mask.id;
  return tape.push(Array::scalar(term1 + term2), {im},
                   [im, pairs, gt_d2_keep, use_term1](Tape& t, const Tape::Node& nd) {
                     if (!t.node(im).requires_grad) return;
                     Array& gm = t.grad(im);
                     double g = nd.grad[0];
                     if (use_term1)
                       for (int64_t i = 0; i < gm.numel(); ++i)
                         gm[i] += g * (*gt_d2_keep)[i];
                     for (const auto& [q, d2] : *pairs) gm[q] += g * d2;
                   },
                   "affinity_loss");
}

// ---------------------------------------------------------------------------
// combined mask loss (bce + affinity)

// `affinity_scale` rescales the affinity term (1/(h*w) is the
// normalized-pixel-coordinate form the training objective uses; 1 is the
// literal raw-pixel composition).
inline Var mask_loss(Tape& tape, Var mask, const Array& gt, const Array* gt_dist2 = nullptr,
                     bool* degenerate = nullptr, double affinity_scale = 1.0) {
  Var aff = affinity_loss(tape, mask, gt, gt_dist2, degenerate);
  if (affinity_scale != 1.0) aff = ad::scale(aff, affinity_scale);
  return ad::add(bce_mask_loss(tape, mask, gt), aff);
}

// ---------------------------------------------------------------------------
// the training-side mask objective: bce on the rendered mask plus the
// long-range term (point-space attraction by default, the literal mask-space
// affinity when point_space is false), with the long-range term scaled by
// affinity_scale

struct MaskObjective {
  double affinity_scale = 1.0 / 4096.0;
  bool point_space = true;
};

struct GtMaskRef {
  const Array* mask = nullptr;       // [H,W] binary
  const Array* dist2 = nullptr;      // cached mask_distance_sq (mask-space path)
  const Array* positives = nullptr;  // cached mask_positive_pixels (point-space path)
};

inline Var projection_mask_loss(Tape& tape, Var uvd, const render::CameraIntrinsics& cam,
                                double sigma, const GtMaskRef& gt, const MaskObjective& cfg) {
  Var mask = render::render_mask_from_uvd(tape, uvd, cam, sigma);
  Var total = bce_mask_loss(tape, mask, *gt.mask);
  Var longrange =
      cfg.point_space
          ? silhouette_attraction_loss(tape, uvd,
                                       gt.positives ? *gt.positives
                                                    : mask_positive_pixels(*gt.mask))
          : affinity_loss(tape, mask, *gt.mask, gt.dist2);
  return ad::add(total, ad::scale(longrange, cfg.affinity_scale));
}

// ---------------------------------------------------------------------------
// geometric cycle consistency: sum_i chamfer(P, P_i)

// `per_point` divides each chamfer by the participating point count (the
// weight-calibration convention of the training objective); false keeps the
// literal sum.
inline Var geometric_cycle_loss(Tape& tape, Var points, const std::vector<Var>& cycled,
                                bool per_point = false) {
  SSR_CHECK(!cycled.empty(), "geometric_cycle_loss: empty cycle list");
  std::optional<Var> total;
  for (const Var& c : cycled) {
    Var term = geom::chamfer(tape, points, c);
    if (per_point)
      term = ad::scale(term, 1.0 / static_cast<double>(points.val().dim(0) + c.val().dim(0)));
    total = total ? ad::add(*total, term) : term;
  }
  return *total;
}

// ---------------------------------------------------------------------------
// pose cycle consistency: (1/k) sum_i |v_i - vhat_i| with azimuth wrapped at
// 180 degrees

// |wrap(pred - target)| for circular degrees; subgradient sign at the kink.
inline Var wrap_abs_deg(Tape& tape, Var pred, double target_deg) {
  SSR_CHECK(pred.val().numel() == 1, "wrap_abs_deg: want scalar");
  double d = pred.val()[0] - target_deg;
  double wrapped = d - 360.0 * std::round(d / 360.0);
  double sign = wrapped > 0 ? 1.0 : (wrapped < 0 ? -1.0 : 0.0);
  int ip = pred.id;
  return tape.push(Array::scalar(std::fabs(wrapped)), {ip},
                   [ip, sign](Tape& t, const Tape::Node& nd) {
                     if (t.node(ip).requires_grad) t.grad(ip)[0] += sign * nd.grad[0];
                   },
                   "wrap_abs_deg");
}

struct PosePair {
  Var azimuth;    // scalar prediction, degrees
  Var elevation;  // scalar prediction, degrees
};

inline Var pose_cycle_loss(Tape& tape, const std::vector<geom::Viewpoint>& sampled,
                           const std::vector<PosePair>& predicted) {
  SSR_CHECK(!sampled.empty(), "pose_cycle_loss: empty viewpoint list");
  SSR_CHECK(sampled.size() == predicted.size(),
            "pose_cycle_loss: length mismatch " << sampled.size() << " vs " << predicted.size());
  std::optional<Var> total;
  for (size_t i = 0; i < sampled.size(); ++i) {
    Var az = wrap_abs_deg(tape, predicted[i].azimuth, sampled[i].azimuth_deg);
    Var el = ad::abs(ad::add_const(predicted[i].elevation, -sampled[i].elevation_deg));
    Var term = ad::add(az, ad::reshape(el, {1}));
    total = total ? ad::add(*total, term) : term;
  }
  return ad::scale(*total, 1.0 / static_cast<double>(sampled.size()));
}

// ---------------------------------------------------------------------------
// nearest-neighbour consistency: mask losses of the input reconstruction
// rendered from the neighbours' (detached) poses against their GT silhouettes

struct NeighborRef {
  geom::Viewpoint pose;  // pose-network prediction, already detached
  GtMaskRef gt;
};

inline Var nn_consistency_loss(Tape& tape, Var points, const std::vector<NeighborRef>& neighbors,
                               const render::CameraIntrinsics& cam, double sigma,
                               const MaskObjective& cfg = {}) {
  SSR_CHECK(!neighbors.empty(), "nn_consistency_loss: empty neighbour list");
  std::optional<Var> total;
  for (const auto& nb : neighbors) {
    Var uvd = render::project_points(tape, points, nb.pose, cam);
    Var term = projection_mask_loss(tape, uvd, cam, sigma, nb.gt, cfg);
    total = total ? ad::add(*total, term) : term;
  }
  return *total;
}

// ---------------------------------------------------------------------------
// symmetry loss: chamfer between the positive-y half and the reflected
// negative-y half; zero (flagged) when either side is empty

inline Var symmetry_loss(Tape& tape, Var points, bool* degenerate = nullptr,
                         bool per_point = false) {
  geom::ReflectSplitVar split = geom::split_reflect_xz(tape, points);
  if (split.plus_empty || split.minus_empty) {
    if (degenerate) *degenerate = true;
    return tape.constant(Array::scalar(0.0));
  }
  if (degenerate) *degenerate = false;
  Var c = geom::chamfer(tape, *split.plus, *split.minus_reflected);
  if (per_point) c = ad::scale(c, 1.0 / static_cast<double>(points.val().dim(0)));
  return c;
}

inline double symmetry_loss(const Array& points) {
  geom::ReflectSplit split = geom::reflect_xz(points);
  if (split.plus_empty || split.minus_empty) return 0.0;
  return geom::chamfer(split.plus, split.minus_reflected);
}

// ---------------------------------------------------------------------------
// totals

inline Var recon_total(Tape& tape, const LossWeights& w, Var l_img, Var l_mask,
                       std::optional<Var> l_cycle, std::optional<Var> l_nn,
                       std::optional<Var> l_sym) {
  w.validate();
  Var total = ad::scale(ad::add(l_img, l_mask), w.alpha);
  if (l_cycle) total = ad::add(total, ad::scale(*l_cycle, w.beta));
  if (l_nn) total = ad::add(total, ad::scale(*l_nn, w.eta_nn));
  if (l_sym) total = ad::add(total, ad::scale(*l_sym, w.kappa_sym));
  (void)tape;
  return total;
}

inline Var pose_total(Tape& tape, const LossWeights& w, Var l_img, Var l_mask,
                      std::optional<Var> l_pose) {
  w.validate();
  Var total = ad::scale(ad::add(l_img, l_mask), w.gamma);
  if (l_pose) total = ad::add(total, ad::scale(*l_pose, w.rho));
  (void)tape;
  return total;
}

// Inference-stage objective: alpha (L_I + L_M) + lambda d_ch(P, P_initial) +
// kappa L_sym(P).
inline Var iso_objective(Tape& tape, const LossWeights& w, Var l_img, Var l_mask, Var points,
                         const Array& points_initial, bool per_point = false) {
  w.validate();
  Var total = ad::scale(ad::add(l_img, l_mask), w.alpha);
  Var drift = geom::chamfer(tape, points, tape.constant(points_initial));
  if (per_point)
    drift = ad::scale(drift, 1.0 / static_cast<double>(points.val().dim(0) +
                                                       points_initial.dim(0)));
  total = ad::add(total, ad::scale(drift, w.lambda_reg));
  Var sym = symmetry_loss(tape, points, nullptr, per_point);
  return ad::add(total, ad::scale(sym, w.kappa_iso_sym));
}

}  // namespace ssr::loss
