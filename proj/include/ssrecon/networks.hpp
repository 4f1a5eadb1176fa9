#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"
#include "viewpoint.hpp"

// The dual-branch reconstruction network and the pose network. Input is a
// 64x64x3 image in [0,1]; the structure branch regresses 1024 xyz positions
// squashed into [-0.5,0.5]^3, the color branch 1024 RGB values in [0,1], and
// the pose network azimuth/elevation. Hidden activations are leaky-relu
// (slope 0.01); no normalization layers.
//
//   structure encoder: 4x conv 3x3/2 -> 32,64,128,256 channels
//   structure decoder: linear 128,128,128, 1024*3
//   color encoder:     2x conv 3x3/2 -> 32,64
//   color decoder:     linear 128,128,128, concat(structure d3) -> 256,
//                      linear 128, linear 1024*3
//   pose:              structure encoder shape, final linear -> 2
//
// The 128-d output of the first structure linear layer (post-activation) is
// the embedding used for nearest-neighbour retrieval.

namespace ssr::net {

constexpr int kImageSize = 64;
constexpr int kNumPoints = 1024;
constexpr int kEmbedDim = 128;
constexpr double kLeakySlope = 0.01;

struct Conv {
  Array w;  // [3,3,C,OC]
  Array b;  // [OC]
  // stride-2 "same" padding for even inputs: pad bottom/right by 1
  static constexpr int kStride = 2;
};

struct Linear {
  Array w;  // [IN,OUT]
  Array b;  // [OUT]
};

struct ReconNet {
  Conv es1, es2, es3, es4;
  Linear ds1, ds2, ds3, ds4;
  Conv ec1, ec2;
  Linear dc1, dc2, dc3, dc4, dc5;
};

struct PoseNet {
  Conv e1, e2, e3, e4;
  Linear d1, d2, d3, d4;
};

// ---------------------------------------------------------------------------
// parameter traversal (fixed order: checkpoints, Adam state and bindings all
// rely on it)

using ParamVisitor = std::function<void(const std::string&, Array&)>;

inline void visit_params(ReconNet& n, const ParamVisitor& fn) {
  auto conv = [&](const std::string& name, Conv& c) {
    fn(name + ".w", c.w);
    fn(name + ".b", c.b);
  };
  auto lin = [&](const std::string& name, Linear& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  conv("recon.es1", n.es1);
  conv("recon.es2", n.es2);
  conv("recon.es3", n.es3);
  conv("recon.es4", n.es4);
  lin("recon.ds1", n.ds1);
  lin("recon.ds2", n.ds2);
  lin("recon.ds3", n.ds3);
  lin("recon.ds4", n.ds4);
  conv("recon.ec1", n.ec1);
  conv("recon.ec2", n.ec2);
  lin("recon.dc1", n.dc1);
  lin("recon.dc2", n.dc2);
  lin("recon.dc3", n.dc3);
  lin("recon.dc4", n.dc4);
  lin("recon.dc5", n.dc5);
}

inline void visit_params(PoseNet& n, const ParamVisitor& fn) {
  auto conv = [&](const std::string& name, Conv& c) {
    fn(name + ".w", c.w);
    fn(name + ".b", c.b);
  };
  auto lin = [&](const std::string& name, Linear& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  conv("pose.e1", n.e1);
  conv("pose.e2", n.e2);
  conv("pose.e3", n.e3);
  conv("pose.e4", n.e4);
  lin("pose.d1", n.d1);
  lin("pose.d2", n.d2);
  lin("pose.d3", n.d3);
  lin("pose.d4", n.d4);
}

// ---------------------------------------------------------------------------
// initialization: fan-in scaled uniform, zero biases

namespace detail {

inline void init_uniform(Array& w, int fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / fan_in);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
}

inline void init_conv(Conv& c, int in_ch, int out_ch, Rng& rng) {
  c.w = Array({3, 3, in_ch, out_ch});
  c.b = Array({out_ch});
  init_uniform(c.w, 9 * in_ch, rng);
}

inline void init_linear(Linear& l, int in_dim, int out_dim, Rng& rng) {
  l.w = Array({in_dim, out_dim});
  l.b = Array({out_dim});
  init_uniform(l.w, in_dim, rng);
}

// Output heads feed tanh/sigmoid squashers; at the plain fan-in scale their
// preactivations start around |x| ~ 2, which saturates the squashers and can
// freeze the whole decoder (observed as corner-pinned constant clouds). A
// small gain keeps the heads in the linear region at init.
constexpr double kHeadGain = 0.05;

inline void init_head(Linear& l, int in_dim, int out_dim, Rng& rng) {
  init_linear(l, in_dim, out_dim, rng);
  for (int64_t i = 0; i < l.w.numel(); ++i) l.w[i] *= kHeadGain;
}

}  // namespace detail

inline ReconNet init_recon(Rng& rng) {
  ReconNet n;
  detail::init_conv(n.es1, 3, 32, rng);
  detail::init_conv(n.es2, 32, 64, rng);
  detail::init_conv(n.es3, 64, 128, rng);
  detail::init_conv(n.es4, 128, 256, rng);
  detail::init_linear(n.ds1, 4 * 4 * 256, 128, rng);
  detail::init_linear(n.ds2, 128, 128, rng);
  detail::init_linear(n.ds3, 128, 128, rng);
  detail::init_head(n.ds4, 128, kNumPoints * 3, rng);
  detail::init_conv(n.ec1, 3, 32, rng);
  detail::init_conv(n.ec2, 32, 64, rng);
  detail::init_linear(n.dc1, 16 * 16 * 64, 128, rng);
  detail::init_linear(n.dc2, 128, 128, rng);
  detail::init_linear(n.dc3, 128, 128, rng);
  detail::init_linear(n.dc4, 256, 128, rng);
  detail::init_head(n.dc5, 128, kNumPoints * 3, rng);
  return n;
}

inline PoseNet init_pose(Rng& rng) {
  PoseNet n;
  detail::init_conv(n.e1, 3, 32, rng);
  detail::init_conv(n.e2, 32, 64, rng);
  detail::init_conv(n.e3, 64, 128, rng);
  detail::init_conv(n.e4, 128, 256, rng);
  detail::init_linear(n.d1, 4 * 4 * 256, 128, rng);
  detail::init_linear(n.d2, 128, 128, rng);
  detail::init_linear(n.d3, 128, 128, rng);
  detail::init_head(n.d4, 128, 2, rng);
  return n;
}

// ---------------------------------------------------------------------------
// tape binding: parameters become leaves once per step; grads are read back
// through the same map

struct Binding {
  std::unordered_map<const Array*, ad::Var> vars;

  ad::Var operator()(const Array& a) const {
    auto it = vars.find(&a);
    SSR_CHECK(it != vars.end(), "binding: parameter not bound");
    return it->second;
  }
};

// Parameters are bound by reference: the net must outlive the tape and stay
// unmodified until backward has run. `overrides` substitutes specific
// parameter tensors with existing vars (used by the gradient checks to probe
// single parameters).
template <typename Net>
Binding bind(ad::Tape& tape, Net& net,
             const std::unordered_map<const Array*, ad::Var>& overrides = {}) {
  Binding b;
  visit_params(net, [&](const std::string&, Array& a) {
    auto it = overrides.find(&a);
    b.vars[&a] = (it != overrides.end()) ? it->second : tape.leaf_ref(&a);
  });
  return b;
}

// ---------------------------------------------------------------------------
// forward passes

namespace detail {

inline void check_image_batch(const Array& img) {
  SSR_CHECK(img.ndim() == 4 && img.dim(1) == kImageSize && img.dim(2) == kImageSize &&
                img.dim(3) == 3,
            "network input must be [B,64,64,3], got " << shape_str(img.shape()));
}

inline ad::Var conv_block(ad::Var x, const Binding& b, const Conv& c) {
  return ad::leaky_relu(ad::conv2d(x, b(c.w), b(c.b), Conv::kStride, 0, 0, 1, 1), kLeakySlope);
}

inline ad::Var flatten2(ad::Var x) {
  const Array& v = x.val();
  int64_t rest = v.numel() / v.dim(0);
  return ad::reshape(x, {v.dim(0), static_cast<int>(rest)});
}

}  // namespace detail

struct ReconOut {
  ad::Var points;     // [B,1024,3] in [-0.5,0.5]
  ad::Var colors;     // [B,1024,3] in [0,1]
  ad::Var embedding;  // [B,128]
};

inline ReconOut recon_forward(ad::Tape&, const Binding& b, ReconNet& n, ad::Var image) {
  detail::check_image_batch(image.val());
  int batch = image.val().dim(0);

  ad::Var s = detail::conv_block(image, b, n.es1);
  s = detail::conv_block(s, b, n.es2);
  s = detail::conv_block(s, b, n.es3);
  s = detail::conv_block(s, b, n.es4);
  s = detail::flatten2(s);
  ad::Var d1 = ad::leaky_relu(ad::linear(s, b(n.ds1.w), b(n.ds1.b)), kLeakySlope);
  ad::Var d2 = ad::leaky_relu(ad::linear(d1, b(n.ds2.w), b(n.ds2.b)), kLeakySlope);
  ad::Var d3 = ad::leaky_relu(ad::linear(d2, b(n.ds3.w), b(n.ds3.b)), kLeakySlope);
  ad::Var raw_pts = ad::linear(d3, b(n.ds4.w), b(n.ds4.b));
  ad::Var points = ad::reshape(ad::scale(ad::tanh(raw_pts), 0.5), {batch, kNumPoints, 3});

  ad::Var c = detail::conv_block(image, b, n.ec1);
  c = detail::conv_block(c, b, n.ec2);
  c = detail::flatten2(c);
  ad::Var c1 = ad::leaky_relu(ad::linear(c, b(n.dc1.w), b(n.dc1.b)), kLeakySlope);
  ad::Var c2 = ad::leaky_relu(ad::linear(c1, b(n.dc2.w), b(n.dc2.b)), kLeakySlope);
  ad::Var c3 = ad::leaky_relu(ad::linear(c2, b(n.dc3.w), b(n.dc3.b)), kLeakySlope);
  ad::Var merged = ad::concat({d3, c3}, 1);
  ad::Var c4 = ad::leaky_relu(ad::linear(merged, b(n.dc4.w), b(n.dc4.b)), kLeakySlope);
  ad::Var raw_col = ad::linear(c4, b(n.dc5.w), b(n.dc5.b));
  ad::Var colors = ad::reshape(ad::sigmoid(raw_col), {batch, kNumPoints, 3});

  return {points, colors, d1};
}

struct PoseOut {
  ad::Var azimuth;    // [B,1] degrees in [0,360)
  ad::Var elevation;  // [B,1] degrees within the configured range
};

inline PoseOut pose_forward(ad::Tape&, const Binding& b, PoseNet& n, ad::Var image,
                            double elev_min, double elev_max) {
  detail::check_image_batch(image.val());
  ad::Var x = detail::conv_block(image, b, n.e1);
  x = detail::conv_block(x, b, n.e2);
  x = detail::conv_block(x, b, n.e3);
  x = detail::conv_block(x, b, n.e4);
  x = detail::flatten2(x);
  x = ad::leaky_relu(ad::linear(x, b(n.d1.w), b(n.d1.b)), kLeakySlope);
  x = ad::leaky_relu(ad::linear(x, b(n.d2.w), b(n.d2.b)), kLeakySlope);
  x = ad::leaky_relu(ad::linear(x, b(n.d3.w), b(n.d3.b)), kLeakySlope);
  ad::Var raw = ad::linear(x, b(n.d4.w), b(n.d4.b));  // [B,2]
  ad::Var az = ad::add_const(ad::scale(ad::tanh(ad::slice_last(raw, 0, 1)), 180.0), 180.0);
  double mid = 0.5 * (elev_min + elev_max), half = 0.5 * (elev_max - elev_min);
  ad::Var el = ad::add_const(ad::scale(ad::tanh(ad::slice_last(raw, 1, 1)), half), mid);
  return {az, el};
}

// ---------------------------------------------------------------------------
// plain (no-tape) forwards for evaluation and embedding extraction

namespace detail {

inline Array conv_fwd(const Array& x, const Conv& c) {
  ad::detail::ConvDims d;
  d.b = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.c = x.dim(3);
  d.kh = 3;
  d.kw = 3;
  d.oc = c.w.dim(3);
  d.stride = Conv::kStride;
  d.pt = 0;
  d.pl = 0;
  d.oh = (d.h + 1 - 3) / 2 + 1;
  d.ow = (d.w + 1 - 3) / 2 + 1;
  Array xcol = Array::uninit({static_cast<int>(d.rows()), d.cols()});
  ad::detail::im2col(x.data(), d, xcol.data());
  Array out = Array::uninit({d.b, d.oh, d.ow, d.oc});
  for (int64_t r = 0; r < d.rows(); ++r)
    std::memcpy(out.data() + r * d.oc, c.b.data(), sizeof(double) * d.oc);
  ad::detail::gemm(false, false, static_cast<int>(d.rows()), d.oc, d.cols(), 1.0, xcol.data(),
                   d.cols(), c.w.data(), d.oc, 1.0, out.data(), d.oc);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = out[i] > 0 ? out[i] : kLeakySlope * out[i];
  return out;
}

inline Array linear_fwd(const Array& x, const Linear& l, bool act) {
  int m = x.dim(0), k = x.dim(1), n = l.w.dim(1);
  Array out = Array::uninit({m, n});
  for (int r = 0; r < m; ++r) std::memcpy(out.data() + r * n, l.b.data(), sizeof(double) * n);
  ad::detail::gemm(false, false, m, n, k, 1.0, x.data(), k, l.w.data(), n, 1.0, out.data(), n);
  if (act)
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = out[i] > 0 ? out[i] : kLeakySlope * out[i];
  return out;
}

inline Array flatten2(const Array& x) {
  return x.reshaped({x.dim(0), static_cast<int>(x.numel() / x.dim(0))});
}

}  // namespace detail

struct ReconOutPlain {
  Array points;     // [B,1024,3]
  Array colors;     // [B,1024,3]
  Array embedding;  // [B,128]
};

inline ReconOutPlain recon_forward_plain(const ReconNet& n, const Array& image) {
  detail::check_image_batch(image);
  int batch = image.dim(0);
  Array s = detail::conv_fwd(image, n.es1);
  s = detail::conv_fwd(s, n.es2);
  s = detail::conv_fwd(s, n.es3);
  s = detail::conv_fwd(s, n.es4);
  s = detail::flatten2(s);
  Array d1 = detail::linear_fwd(s, n.ds1, true);
  Array d2 = detail::linear_fwd(d1, n.ds2, true);
  Array d3 = detail::linear_fwd(d2, n.ds3, true);
  Array raw = detail::linear_fwd(d3, n.ds4, false);
  Array points({batch, kNumPoints, 3});
  for (int64_t i = 0; i < raw.numel(); ++i) points[i] = 0.5 * std::tanh(raw[i]);

  Array c = detail::conv_fwd(image, n.ec1);
  c = detail::conv_fwd(c, n.ec2);
  c = detail::flatten2(c);
  Array c1 = detail::linear_fwd(c, n.dc1, true);
  Array c2 = detail::linear_fwd(c1, n.dc2, true);
  Array c3 = detail::linear_fwd(c2, n.dc3, true);
  Array merged({batch, 256});
  for (int r = 0; r < batch; ++r) {
    std::memcpy(merged.data() + r * 256, d3.data() + r * 128, 128 * sizeof(double));
    std::memcpy(merged.data() + r * 256 + 128, c3.data() + r * 128, 128 * sizeof(double));
  }
  Array c4 = detail::linear_fwd(merged, n.dc4, true);
  Array raw_col = detail::linear_fwd(c4, n.dc5, false);
  Array colors({batch, kNumPoints, 3});
  for (int64_t i = 0; i < raw_col.numel(); ++i) colors[i] = 1.0 / (1.0 + std::exp(-raw_col[i]));

  return {std::move(points), std::move(colors), std::move(d1)};
}

// Embedding only: structure encoder + first linear (post-activation).
inline Array embed(const ReconNet& n, const Array& image) {
  detail::check_image_batch(image);
  Array s = detail::conv_fwd(image, n.es1);
  s = detail::conv_fwd(s, n.es2);
  s = detail::conv_fwd(s, n.es3);
  s = detail::conv_fwd(s, n.es4);
  return detail::linear_fwd(detail::flatten2(s), n.ds1, true);
}

// Plain pose prediction; returns one viewpoint per batch row.
inline std::vector<geom::Viewpoint> pose_forward_plain(const PoseNet& n, const Array& image,
                                                       double elev_min, double elev_max,
                                                       double distance) {
  detail::check_image_batch(image);
  Array x = detail::conv_fwd(image, n.e1);
  x = detail::conv_fwd(x, n.e2);
  x = detail::conv_fwd(x, n.e3);
  x = detail::conv_fwd(x, n.e4);
  x = detail::flatten2(x);
  x = detail::linear_fwd(x, n.d1, true);
  x = detail::linear_fwd(x, n.d2, true);
  x = detail::linear_fwd(x, n.d3, true);
  Array raw = detail::linear_fwd(x, n.d4, false);
  double mid = 0.5 * (elev_min + elev_max), half = 0.5 * (elev_max - elev_min);
  std::vector<geom::Viewpoint> out;
  for (int r = 0; r < raw.dim(0); ++r) {
    geom::Viewpoint v;
    v.azimuth_deg = 180.0 * (1.0 + std::tanh(raw.at2(r, 0)));
    v.elevation_deg = mid + half * std::tanh(raw.at2(r, 1));
    v.distance = distance;
    out.push_back(v);
  }
  return out;
}

}  // namespace ssr::net
