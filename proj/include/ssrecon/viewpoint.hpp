#pragma once

#include <array>
#include <cmath>

#include "ops.hpp"
#include "rng.hpp"

// Camera viewpoint on a fixed-radius orbit around the origin, parameterized
// by azimuth/elevation in degrees. Convention: azimuth rotates about world +z
// (up), elevation tilts toward +z; azimuth 0 / elevation 0 puts the camera on
// the +x axis looking at the origin. Camera frame: x right, y down (image
// row direction), z forward; the origin maps to (0, 0, distance).

namespace ssr::geom {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;

struct Viewpoint {
  double azimuth_deg = 0.0;    // [0, 360)
  double elevation_deg = 0.0;  // [elev_min, elev_max], fixed per run
  double distance = 2.0;       // identical for all viewpoints in a run
};

struct Mat3 {
  std::array<double, 9> m{};  // row-major

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }

  std::array<double, 3> apply(const double* p) const {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2], m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
            m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[static_cast<size_t>(3 * i + j)] = m[static_cast<size_t>(3 * j + i)];
    return r;
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k)
          s += m[static_cast<size_t>(3 * i + k)] * o.m[static_cast<size_t>(3 * k + j)];
        r.m[static_cast<size_t>(3 * i + j)] = s;
      }
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// Rotation about +z by an angle in degrees.
inline Mat3 rot_z(double deg) {
  double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
  Mat3 r;
  r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
  return r;
}

// Rotation about +x by an angle in degrees (the "vertical flip" candidate in
// evaluation alignment is rot_x(180)).
inline Mat3 rot_x(double deg) {
  double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
  Mat3 r;
  r.m = {1, 0, 0, 0, c, -s, 0, s, c};
  return r;
}

// World -> camera rotation for the orbit convention above.
inline Mat3 view_rotation(const Viewpoint& v) {
  double a = v.azimuth_deg * kDegToRad, e = v.elevation_deg * kDegToRad;
  double sa = std::sin(a), ca = std::cos(a), se = std::sin(e), ce = std::cos(e);
  Mat3 r;
  r.m = {-sa,      ca,       0,    //
         ca * se,  sa * se,  -ce,  //
         -ce * ca, -ce * sa, -se};
  return r;
}

// Camera position in world coordinates.
inline std::array<double, 3> camera_position(const Viewpoint& v) {
  double a = v.azimuth_deg * kDegToRad, e = v.elevation_deg * kDegToRad;
  return {v.distance * std::cos(e) * std::cos(a), v.distance * std::cos(e) * std::sin(a),
          v.distance * std::sin(e)};
}

// Unit vector from origin toward the camera; used for angular pose error.
inline std::array<double, 3> view_direction(const Viewpoint& v) {
  double a = v.azimuth_deg * kDegToRad, e = v.elevation_deg * kDegToRad;
  return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
}

// Great-circle angle between the two view directions, degrees in [0, 180].
inline double angular_error(const Viewpoint& a, const Viewpoint& b) {
  auto da = view_direction(a), db = view_direction(b);
  double dot = da[0] * db[0] + da[1] * db[1] + da[2] * db[2];
  dot = std::min(1.0, std::max(-1.0, dot));
  return std::acos(dot) / kDegToRad;
}

inline Viewpoint sample_random_viewpoint(Rng& rng, double elev_min, double elev_max,
                                         double distance) {
  Viewpoint v;
  v.azimuth_deg = rng.uniform(0.0, 360.0);
  v.elevation_deg = rng.uniform(elev_min, elev_max);
  v.distance = distance;
  return v;
}

// p_cam = R(v) p + (0, 0, distance). Plain (no-tape) version.
inline Array transform_to_camera(const Array& pts, const Viewpoint& v) {
  SSR_CHECK(pts.ndim() == 2 && pts.dim(1) == 3 && pts.dim(0) >= 1,
            "transform_to_camera: want nonempty [N,3], got " << shape_str(pts.shape()));
  Mat3 r = view_rotation(v);
  Array out(pts.shape());
  for (int i = 0; i < pts.dim(0); ++i) {
    auto q = r.apply(pts.data() + 3 * i);
    out.at2(i, 0) = q[0];
    out.at2(i, 1) = q[1];
    out.at2(i, 2) = q[2] + v.distance;
  }
  return out;
}

namespace detail {

struct ViewTrig {
  double sa, ca, se, ce;
};

inline ViewTrig view_trig(double az_deg, double el_deg) {
  double a = az_deg * kDegToRad, e = el_deg * kDegToRad;
  return {std::sin(a), std::cos(a), std::sin(e), std::cos(e)};
}

// dR/d(azimuth) and dR/d(elevation), in radians.
inline Mat3 rot_daz(const ViewTrig& t) {
  Mat3 r;
  r.m = {-t.ca,        -t.sa,        0,  //
         -t.sa * t.se, t.ca * t.se,  0,  //
         t.ce * t.sa,  -t.ce * t.ca, 0};
  return r;
}

inline Mat3 rot_del(const ViewTrig& t) {
  Mat3 r;
  r.m = {0,            0,            0,     //
         t.ca * t.ce,  t.sa * t.ce,  t.se,  //
         t.se * t.ca,  t.se * t.sa,  -t.ce};
  return r;
}

}  // namespace detail

// Differentiable transform: gradients flow to the points and, when the angle
// vars are given, to azimuth/elevation (degrees).
inline ad::Var transform_to_camera(ad::Tape& tape, ad::Var pts, ad::Var az_deg, ad::Var el_deg,
                                   double distance) {
  const Array& p = pts.val();
  SSR_CHECK(p.ndim() == 2 && p.dim(1) == 3 && p.dim(0) >= 1,
            "transform_to_camera: want nonempty [N,3], got " << shape_str(p.shape()));
  SSR_CHECK(az_deg.val().numel() == 1 && el_deg.val().numel() == 1,
            "transform_to_camera: angles must be scalars");
  double az = az_deg.val()[0], el = el_deg.val()[0];
  Viewpoint v{az, el, distance};
  Array out = transform_to_camera(p, v);
  int ip = pts.id, ia = az_deg.id, ie = el_deg.id;
  int n = p.dim(0);
  return tape.push(
      std::move(out), {ip, ia, ie},
      [ip, ia, ie, az, el, n](ad::Tape& t, const ad::Tape::Node& nd) {
        auto trig = detail::view_trig(az, el);
        Mat3 r = view_rotation({az, el, 0.0});
        Mat3 da = detail::rot_daz(trig), de = detail::rot_del(trig);
        const Array& p = t.val(ip);
        bool want_p = t.node(ip).requires_grad;
        bool want_a = t.node(ia).requires_grad;
        bool want_e = t.node(ie).requires_grad;
        double ga = 0, ge = 0;
        Array* gp = want_p ? &t.grad(ip) : nullptr;
        for (int i = 0; i < n; ++i) {
          const double* g = nd.grad.data() + 3 * i;
          const double* x = p.data() + 3 * i;
          if (want_p)
            for (int c = 0; c < 3; ++c)
              (*gp)[3 * i + c] += r.m[static_cast<size_t>(c)] * g[0] +
                                  r.m[static_cast<size_t>(3 + c)] * g[1] +
                                  r.m[static_cast<size_t>(6 + c)] * g[2];
          if (want_a) {
            auto q = da.apply(x);
            ga += g[0] * q[0] + g[1] * q[1] + g[2] * q[2];
          }
          if (want_e) {
            auto q = de.apply(x);
            ge += g[0] * q[0] + g[1] * q[1] + g[2] * q[2];
          }
        }
        if (want_a) t.grad(ia)[0] += ga * kDegToRad;
        if (want_e) t.grad(ie)[0] += ge * kDegToRad;
      },
      "transform_to_camera");
}

inline ad::Var transform_to_camera(ad::Tape& tape, ad::Var pts, const Viewpoint& v) {
  ad::Var az = tape.constant(Array::scalar(v.azimuth_deg));
  ad::Var el = tape.constant(Array::scalar(v.elevation_deg));
  return transform_to_camera(tape, pts, az, el, v.distance);
}

}  // namespace ssr::geom
