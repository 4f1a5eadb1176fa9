#pragma once

#include <optional>

#include "adam.hpp"
#include "losses.hpp"
#include "networks.hpp"

// Inference-stage optimization: per-test-sample fine-tuning of a cloned
// reconstruction network under the projection losses plus drift and symmetry
// regularizers, with the pose network frozen at its prediction. The original
// parameters are never touched.

namespace ssr::iso {

struct IsoConfig {
  int steps = 50;
  double lr = 1e-4;
  double alpha = 100.0;
  double lambda_reg = 500.0;
  double kappa_sym = 500.0;
  double affinity_scale = 1.0 / 4096.0;  // match the training mask objective
  bool point_space_affinity = true;
  bool chamfer_per_point = true;  // match the training chamfer scale

  void validate() const {
    SSR_CHECK(steps >= 0, "iso: steps must be >= 0");
    SSR_CHECK(lambda_reg >= 0 && kappa_sym >= 0 && alpha >= 0, "iso: weights must be >= 0");
  }
};

struct IsoReport {
  bool ok = true;
  double mask_iou_before = 0.0;
  double mask_iou_after = 0.0;
  double chamfer100_drift = 0.0;  // chamfer x100 between final and initial cloud
  double objective_first = 0.0;
  double objective_last = 0.0;
  geom::Viewpoint view;  // frozen pose prediction used throughout
};

struct IsoResult {
  geom::PointCloud initial;
  geom::PointCloud optimized;
  net::ReconNet tuned;  // the per-sample clone after optimization
  IsoReport report;
};

namespace detail {

inline double mask_iou(const Array& soft, const Array& gt) {
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < soft.numel(); ++i) {
    bool a = soft[i] >= 0.5, b = gt[i] >= 0.5;
    inter += a && b;
    uni += a || b;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

inline geom::PointCloud single_forward(const net::ReconNet& recon, const Array& image) {
  Array batch({1, net::kImageSize, net::kImageSize, 3});
  std::memcpy(batch.data(), image.data(), sizeof(double) * static_cast<size_t>(image.numel()));
  net::ReconOutPlain out = net::recon_forward_plain(recon, batch);
  geom::PointCloud pc;
  pc.points = out.points.reshaped({net::kNumPoints, 3});
  pc.colors = out.colors.reshaped({net::kNumPoints, 3});
  return pc;
}

}  // namespace detail

// `image`/`mask` are the single test observation; the networks stay const
// (the reconstruction net is cloned, the pose net is only read).
inline IsoResult optimize(const net::ReconNet& recon, const net::PoseNet& pose,
                          const Array& image, const Array& mask,
                          const render::CameraIntrinsics& cam, const render::RenderParams& rp,
                          double elev_min, double elev_max, double distance,
                          const IsoConfig& cfg) {
  cfg.validate();
  IsoResult res;
  res.tuned = recon;  // clone; the caller's checkpoint is immutable

  Array batch({1, net::kImageSize, net::kImageSize, 3});
  std::memcpy(batch.data(), image.data(), sizeof(double) * static_cast<size_t>(image.numel()));
  res.report.view = net::pose_forward_plain(pose, batch, elev_min, elev_max, distance)[0];

  res.initial = detail::single_forward(recon, image);
  Array initial_pts = res.initial.points;
  res.report.mask_iou_before = detail::mask_iou(
      render::render_mask(initial_pts, res.report.view, cam, rp.sigma), mask);

  std::vector<Array*> params;
  net::visit_params(res.tuned, [&](const std::string&, Array& a) { params.push_back(&a); });
  train::AdamState adam;
  adam.init(params);

  Array mask_d2 = loss::mask_distance_sq(mask);
  Array mask_pos = loss::mask_positive_pixels(mask);
  loss::GtMaskRef gt_ref{&mask, &mask_d2, &mask_pos};
  loss::MaskObjective mask_obj{cfg.affinity_scale, cfg.point_space_affinity};
  loss::LossWeights w;
  w.alpha = cfg.alpha;
  w.lambda_reg = cfg.lambda_reg;
  w.kappa_iso_sym = cfg.kappa_sym;

  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape tape;
    net::Binding bind = net::bind(tape, res.tuned);
    ad::Var img_var = tape.constant(batch);
    net::ReconOut out = net::recon_forward(tape, bind, res.tuned, img_var);
    ad::Var pts = ad::slice_dim0(out.points, 0);
    ad::Var col = ad::slice_dim0(out.colors, 0);
    ad::Var uvd = render::project_points(tape, pts, res.report.view, cam);
    ad::Var img_r = render::render_color_from_uvd(tape, uvd, col, cam, rp);
    ad::Var l_img = loss::image_loss(tape, img_r, image);
    ad::Var l_mask = loss::projection_mask_loss(tape, uvd, cam, rp.sigma, gt_ref, mask_obj);
    ad::Var objective =
        loss::iso_objective(tape, w, l_img, l_mask, pts, initial_pts, cfg.chamfer_per_point);

    double obj = objective.val().item();
    if (!std::isfinite(obj)) {
      res.report.ok = false;
      res.optimized = res.initial;
      res.report.mask_iou_after = res.report.mask_iou_before;
      res.report.chamfer100_drift = 0.0;
      return res;
    }
    if (step == 0) res.report.objective_first = obj;
    res.report.objective_last = obj;

    tape.backward(objective);
    std::vector<Array> grads;
    grads.reserve(params.size());
    for (Array* p : params) grads.push_back(bind(*p).grad());
    std::vector<const Array*> gp;
    for (const Array& g : grads) gp.push_back(&g);
    adam.step(params, gp, cfg.lr);
  }

  res.optimized = detail::single_forward(res.tuned, image);
  res.report.mask_iou_after = detail::mask_iou(
      render::render_mask(res.optimized.points, res.report.view, cam, rp.sigma), mask);
  res.report.chamfer100_drift =
      100.0 * geom::chamfer(res.optimized.points, initial_pts) /
      static_cast<double>(res.optimized.points.dim(0) + initial_pts.dim(0));
  return res;
}

}  // namespace ssr::iso
