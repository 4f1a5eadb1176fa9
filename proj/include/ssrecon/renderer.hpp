#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "ops.hpp"
#include "viewpoint.hpp"

// Differentiable point splatting: a point cloud projects through a pinhole
// camera to (u, v, depth) per point, then splats a truncated gaussian kernel
// into the image. Masks take the union of kernels via a complement product;
// color blends kernel weights with a soft depth ordering so nearer points
// dominate. Pixel (row, col) has its center at (u, v) = (col, row).

namespace ssr::render {

using geom::Viewpoint;

struct CameraIntrinsics {
  int h = 64, w = 64;
  // f = 64 keeps the unit cube at orbit distance 2.0 inside the image for
  // every viewpoint (bounding-sphere tangent 0.4803 * f <= 31.5 needs
  // f <= 65.6) while using most of the frame.
  double f = 64.0;
  double cx = 31.5, cy = 31.5;
};

struct RenderParams {
  double sigma = 1.0;        // kernel width, pixels; truncated at 3*sigma
  double tau_depth = 0.1;    // soft z-ordering temperature, object units
  std::array<double, 3> background{1.0, 1.0, 1.0};
};

// Kernel values are capped just below 1 so the mask complement product stays
// invertible in the backward pass.
constexpr double kKernelCap = 1.0 - 1e-7;
// Background weight: small enough that any in-range point dominates it (the
// depth factor alone can be ~exp(-29)), yet keeps empty pixels well-defined.
constexpr double kBackgroundWeight = 1e-22;

// ---------------------------------------------------------------------------
// projection

// u = f*x/z + cx, v = f*y/z + cy, depth = z. Rejects nonpositive depth (the
// object would have escaped the orbit sphere).
inline Array project_pinhole(const Array& cam_pts, const CameraIntrinsics& k) {
  SSR_CHECK(cam_pts.ndim() == 2 && cam_pts.dim(1) == 3 && cam_pts.dim(0) >= 1,
            "project_pinhole: want nonempty [N,3]");
  Array out(cam_pts.shape());
  for (int i = 0; i < cam_pts.dim(0); ++i) {
    double x = cam_pts.at2(i, 0), y = cam_pts.at2(i, 1), z = cam_pts.at2(i, 2);
    SSR_CHECK(z > 0.0, "project_pinhole: nonpositive depth " << z << " at point " << i);
    out.at2(i, 0) = k.f * x / z + k.cx;
    out.at2(i, 1) = k.f * y / z + k.cy;
    out.at2(i, 2) = z;
  }
  return out;
}

inline ad::Var project_pinhole(ad::Tape& tape, ad::Var cam_pts, const CameraIntrinsics& k) {
  Array out = project_pinhole(cam_pts.val(), k);
  int ip = cam_pts.id;
  int n = cam_pts.val().dim(0);
  double f = k.f;
  return tape.push(std::move(out), {ip},
                   [ip, n, f](ad::Tape& t, const ad::Tape::Node& nd) {
                     if (!t.node(ip).requires_grad) return;
                     const Array& p = t.val(ip);
                     Array& gp = t.grad(ip);
                     for (int i = 0; i < n; ++i) {
                       double x = p.at2(i, 0), y = p.at2(i, 1), z = p.at2(i, 2);
                       double gu = nd.grad[3 * i], gv = nd.grad[3 * i + 1],
                              gz = nd.grad[3 * i + 2];
                       gp[3 * i + 0] += gu * f / z;
                       gp[3 * i + 1] += gv * f / z;
                       gp[3 * i + 2] += -gu * f * x / (z * z) - gv * f * y / (z * z) + gz;
                     }
                   },
                   "project_pinhole");
}

// Full projection: object frame -> camera frame -> pixel (u, v, depth).
inline ad::Var project_points(ad::Tape& tape, ad::Var pts, ad::Var az_deg, ad::Var el_deg,
                              double distance, const CameraIntrinsics& k) {
  return project_pinhole(tape, geom::transform_to_camera(tape, pts, az_deg, el_deg, distance), k);
}

inline ad::Var project_points(ad::Tape& tape, ad::Var pts, const Viewpoint& v,
                              const CameraIntrinsics& k) {
  return project_pinhole(tape, geom::transform_to_camera(tape, pts, v), k);
}

inline Array project_points(const Array& pts, const Viewpoint& v, const CameraIntrinsics& k) {
  return project_pinhole(geom::transform_to_camera(pts, v), k);
}

// ---------------------------------------------------------------------------
// splatting internals

namespace detail {

struct SplatHit {
  int point;
  int pixel;
  double g;  // kernel value, capped at kKernelCap
};

// Walks every (point, pixel) pair within the 3-sigma euclidean cutoff.
template <typename Fn>
inline void for_each_hit(const Array& uvd, int h, int w, double sigma, Fn&& fn) {
  const double r = 3.0 * sigma;
  const double r2 = r * r;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const int n = uvd.dim(0);
  for (int i = 0; i < n; ++i) {
    double u = uvd.at2(i, 0), v = uvd.at2(i, 1);
    int x0 = std::max(0, static_cast<int>(std::ceil(u - r)));
    int x1 = std::min(w - 1, static_cast<int>(std::floor(u + r)));
    int y0 = std::max(0, static_cast<int>(std::ceil(v - r)));
    int y1 = std::min(h - 1, static_cast<int>(std::floor(v + r)));
    for (int py = y0; py <= y1; ++py) {
      double dy = v - py;
      for (int px = x0; px <= x1; ++px) {
        double dx = u - px;
        double d2 = dx * dx + dy * dy;
        if (d2 > r2) continue;
        double g = std::min(std::exp(-d2 * inv2s2), kKernelCap);
        fn(i, py * w + px, g, dx, dy);
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mask rendering: M(p) = 1 - prod_i (1 - g_i(p)), g truncated at 3*sigma

inline Array render_mask_from_uvd(const Array& uvd, const CameraIntrinsics& k, double sigma,
                                  std::vector<detail::SplatHit>* hits_out = nullptr) {
  SSR_CHECK(uvd.ndim() == 2 && uvd.dim(1) == 3 && uvd.dim(0) >= 1,
            "render_mask: empty point cloud");
  Array prod({k.h, k.w}, 1.0);
  detail::for_each_hit(uvd, k.h, k.w, sigma, [&](int i, int pix, double g, double, double) {
    prod[pix] *= (1.0 - g);
    if (hits_out) hits_out->push_back({i, pix, g});
  });
  Array mask = Array::uninit({k.h, k.w});
  for (int64_t p = 0; p < mask.numel(); ++p) mask[p] = 1.0 - prod[p];
  return mask;
}

inline ad::Var render_mask_from_uvd(ad::Tape& tape, ad::Var uvd, const CameraIntrinsics& k,
                                    double sigma) {
  auto hits = std::make_shared<std::vector<detail::SplatHit>>();
  Array mask = render_mask_from_uvd(uvd.val(), k, sigma, hits.get());
  int iu = uvd.id;
  int w = k.w;
  double inv_s2 = 1.0 / (sigma * sigma);
  return tape.push(
      std::move(mask), {iu},
      [iu, hits, w, inv_s2](ad::Tape& t, const ad::Tape::Node& nd) {
        if (!t.node(iu).requires_grad) return;
        const Array& uvd = t.val(iu);
        Array& gu = t.grad(iu);
        for (const auto& hit : *hits) {
          // d(mask)/d(g_i) = prod_{j != i} (1 - g_j) = (1 - mask) / (1 - g_i)
          double dmask = nd.grad[hit.pixel];
          if (dmask == 0.0) continue;
          double dgi = dmask * (1.0 - nd.value[hit.pixel]) / (1.0 - hit.g);
          double u = uvd.at2(hit.point, 0), v = uvd.at2(hit.point, 1);
          double px = hit.pixel % w, py = hit.pixel / w;
          // dg/du = -g (u - px) / sigma^2
          gu[3 * hit.point + 0] += dgi * (-hit.g * (u - px) * inv_s2);
          gu[3 * hit.point + 1] += dgi * (-hit.g * (v - py) * inv_s2);
        }
      },
      "render_mask");
}

// ---------------------------------------------------------------------------
// color rendering: per pixel (sum_i w_i c_i + w_bg bg) / (sum_i w_i + w_bg),
// w_i = g_i * exp(-depth_i / tau)

inline Array render_color_from_uvd(const Array& uvd, const Array& colors,
                                   const CameraIntrinsics& k, const RenderParams& rp,
                                   std::vector<detail::SplatHit>* hits_out = nullptr,
                                   Array* weight_sum_out = nullptr) {
  SSR_CHECK(uvd.ndim() == 2 && uvd.dim(1) == 3 && uvd.dim(0) >= 1,
            "render_color: empty point cloud");
  SSR_CHECK(colors.same_shape(uvd), "render_color: missing or mis-shaped colors "
                                        << shape_str(colors.shape()));
  Array sw({k.h, k.w}, kBackgroundWeight);
  Array sc({k.h, k.w, 3});
  for (int64_t p = 0; p < static_cast<int64_t>(k.h) * k.w; ++p)
    for (int c = 0; c < 3; ++c) sc[3 * p + c] = kBackgroundWeight * rp.background[static_cast<size_t>(c)];
  const double inv_tau = 1.0 / rp.tau_depth;
  detail::for_each_hit(uvd, k.h, k.w, rp.sigma, [&](int i, int pix, double g, double, double) {
    double wgt = g * std::exp(-uvd.at2(i, 2) * inv_tau);
    sw[pix] += wgt;
    for (int c = 0; c < 3; ++c) sc[3 * pix + c] += wgt * colors.at2(i, c);
    if (hits_out) hits_out->push_back({i, pix, g});
  });
  Array img = Array::uninit({k.h, k.w, 3});
  for (int64_t p = 0; p < static_cast<int64_t>(k.h) * k.w; ++p)
    for (int c = 0; c < 3; ++c) img[3 * p + c] = sc[3 * p + c] / sw[p];
  if (weight_sum_out) *weight_sum_out = sw;
  return img;
}

inline ad::Var render_color_from_uvd(ad::Tape& tape, ad::Var uvd, ad::Var colors,
                                     const CameraIntrinsics& k, const RenderParams& rp) {
  auto hits = std::make_shared<std::vector<detail::SplatHit>>();
  auto sw = std::make_shared<Array>();
  Array img = render_color_from_uvd(uvd.val(), colors.val(), k, rp, hits.get(), sw.get());
  int iu = uvd.id, ic = colors.id;
  int w = k.w;
  double inv_s2 = 1.0 / (rp.sigma * rp.sigma);
  double inv_tau = 1.0 / rp.tau_depth;
  return tape.push(
      std::move(img), {iu, ic},
      [iu, ic, hits, sw, w, inv_s2, inv_tau](ad::Tape& t, const ad::Tape::Node& nd) {
        const Array& uvd = t.val(iu);
        const Array& col = t.val(ic);
        bool wu = t.node(iu).requires_grad, wc = t.node(ic).requires_grad;
        if (!wu && !wc) return;
        Array* gu = wu ? &t.grad(iu) : nullptr;
        Array* gc = wc ? &t.grad(ic) : nullptr;
        for (const auto& hit : *hits) {
          double z = uvd.at2(hit.point, 2);
          double wgt = hit.g * std::exp(-z * inv_tau);
          double inv_sw = 1.0 / (*sw)[hit.pixel];
          double dw = 0.0;
          for (int c = 0; c < 3; ++c) {
            double go = nd.grad[3 * hit.pixel + c];
            if (go == 0.0) continue;
            double out_c = nd.value[3 * hit.pixel + c];
            dw += go * (col.at2(hit.point, c) - out_c) * inv_sw;
            if (wc) (*gc)[3 * hit.point + c] += go * wgt * inv_sw;
          }
          if (wu && dw != 0.0) {
            double u = uvd.at2(hit.point, 0), v = uvd.at2(hit.point, 1);
            double px = hit.pixel % w, py = hit.pixel / w;
            (*gu)[3 * hit.point + 0] += dw * (-wgt * (u - px) * inv_s2);
            (*gu)[3 * hit.point + 1] += dw * (-wgt * (v - py) * inv_s2);
            (*gu)[3 * hit.point + 2] += dw * (-wgt * inv_tau);
          }
        }
      },
      "render_color");
}

// ---------------------------------------------------------------------------
// convenience wrappers from object-frame clouds

inline Array render_mask(const Array& pts, const Viewpoint& v, const CameraIntrinsics& k,
                         double sigma) {
  return render_mask_from_uvd(project_points(pts, v, k), k, sigma);
}

inline ad::Var render_mask(ad::Tape& tape, ad::Var pts, const Viewpoint& v,
                           const CameraIntrinsics& k, double sigma) {
  return render_mask_from_uvd(tape, project_points(tape, pts, v, k), k, sigma);
}

inline ad::Var render_mask(ad::Tape& tape, ad::Var pts, ad::Var az_deg, ad::Var el_deg,
                           double distance, const CameraIntrinsics& k, double sigma) {
  return render_mask_from_uvd(tape, project_points(tape, pts, az_deg, el_deg, distance, k), k,
                              sigma);
}

inline Array render_color(const Array& pts, const Array& colors, const Viewpoint& v,
                          const CameraIntrinsics& k, const RenderParams& rp) {
  return render_color_from_uvd(project_points(pts, v, k), colors, k, rp);
}

inline ad::Var render_color(ad::Tape& tape, ad::Var pts, ad::Var colors, const Viewpoint& v,
                            const CameraIntrinsics& k, const RenderParams& rp) {
  return render_color_from_uvd(tape, project_points(tape, pts, v, k), colors, k, rp);
}

inline ad::Var render_color(ad::Tape& tape, ad::Var pts, ad::Var colors, ad::Var az_deg,
                            ad::Var el_deg, double distance, const CameraIntrinsics& k,
                            const RenderParams& rp) {
  return render_color_from_uvd(tape, project_points(tape, pts, az_deg, el_deg, distance, k),
                               colors, k, rp);
}

}  // namespace ssr::render
