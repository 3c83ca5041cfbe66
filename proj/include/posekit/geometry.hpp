#pragma once

// Viewpoint conventions, rotations, geodesic distance and pinhole projection.
//
// Camera frame: x right, y down, z forward (viewing axis).
// A viewpoint (azimuth phi, elevation psi, tilt theta) maps to
//
//     R = Rz(theta) * Rx(psi) * Ry(-phi)
//
// expressed in the canonical camera frame, i.e. azimuth turns about the
// world-up axis (-y when looking horizontally), elevation about the lateral
// axis x, and tilt about the viewing axis z. (0, 0, 0) is the identity.
// The world-to-camera rotation of a rendering camera is R * kWorldToCanonical,
// so distances between label rotations equal distances between cameras.
// Object frame: z up, front of the object faces -y, x points to its left/right.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "posekit/error.hpp"

namespace posekit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Wraps into [0, 360).
inline double wrap_360(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

// Wraps into [-180, 180).
inline double wrap_180(double deg) { return wrap_360(deg + 180.0) - 180.0; }

class Viewpoint {
 public:
  Viewpoint() = default;

  // Azimuth and tilt are normalized modulo 360; elevation outside [-90, 90]
  // is rejected.
  Viewpoint(double azimuth, double elevation, double tilt) {
    if (!std::isfinite(azimuth) || !std::isfinite(elevation) ||
        !std::isfinite(tilt)) {
      throw Error(ErrorCode::out_of_range, "viewpoint angles must be finite");
    }
    if (elevation < -90.0 || elevation > 90.0) {
      std::ostringstream os;
      os << "elevation " << elevation << " outside [-90, 90]";
      throw Error(ErrorCode::out_of_range, os.str());
    }
    azimuth_ = wrap_360(azimuth);
    elevation_ = elevation;
    tilt_ = wrap_180(tilt);
  }

  double azimuth() const { return azimuth_; }
  double elevation() const { return elevation_; }
  double tilt() const { return tilt_; }

  friend bool operator==(const Viewpoint&, const Viewpoint&) = default;

 private:
  double azimuth_ = 0.0;
  double elevation_ = 0.0;
  double tilt_ = 0.0;
};

inline Mat3 rot_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

inline Mat3 rot_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

inline Mat3 rot_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

class RotationMatrix {
 public:
  static constexpr double kTolerance = 1e-9;

  RotationMatrix() : m_(Mat3::Identity()) {}

  // Validates orthonormality and det = +1.
  explicit RotationMatrix(const Mat3& m) : m_(m) {
    if (!is_rotation(m)) {
      throw Error(ErrorCode::invalid_argument,
                  "matrix is not a proper rotation");
    }
  }

  static bool is_rotation(const Mat3& m, double tol = kTolerance) {
    if (!m.allFinite()) return false;
    const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
  }

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  RotationMatrix transpose() const { return unchecked(m_.transpose()); }

  friend RotationMatrix operator*(const RotationMatrix& a,
                                  const RotationMatrix& b) {
    return unchecked(a.m_ * b.m_);
  }
  friend Vec3 operator*(const RotationMatrix& r, const Vec3& v) {
    return r.m_ * v;
  }

  // For products of exact rotations, where drift is far below tolerance.
  static RotationMatrix unchecked(const Mat3& m) {
    RotationMatrix r;
    r.m_ = m;
    return r;
  }

 private:
  Mat3 m_;
};

// Maps object/world axes (z up, camera looking along +y) to the canonical
// camera frame (x right, y down, z forward).
inline const RotationMatrix& world_to_canonical() {
  static const RotationMatrix r = RotationMatrix::unchecked(
      (Mat3() << 1, 0, 0, 0, 0, -1, 0, 1, 0).finished());
  return r;
}

inline RotationMatrix rotation_from_viewpoint(const Viewpoint& vp) {
  const Mat3 m = rot_z(deg_to_rad(vp.tilt())) *
                 rot_x(deg_to_rad(vp.elevation())) *
                 rot_y(-deg_to_rad(vp.azimuth()));
  return RotationMatrix::unchecked(m);
}

// Angle of r1^T r2 in radians, in [0, pi]. cos comes from the trace and
// sin from the skew part; atan2 of the pair stays accurate near 0 and pi
// where acos of the trace alone loses half the digits.
inline double geodesic_distance(const RotationMatrix& r1,
                                const RotationMatrix& r2) {
  const Mat3 m = r1.matrix().transpose() * r2.matrix();
  const double c = (m.trace() - 1.0) / 2.0;
  const double s = Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)).norm() / 2.0;
  return std::atan2(s, c);
}

class Camera {
 public:
  Camera(RotationMatrix rotation, Vec3 translation, double focal,
         Vec2 principal, int width, int height)
      : rotation_(rotation),
        translation_(translation),
        focal_(focal),
        principal_(principal),
        width_(width),
        height_(height) {
    if (!(focal > 0.0) || !std::isfinite(focal)) {
      throw Error(ErrorCode::invalid_argument, "focal length must be > 0");
    }
    if (width <= 0 || height <= 0) {
      throw Error(ErrorCode::invalid_argument, "image size must be positive");
    }
    if (principal.x() < 0.0 || principal.x() > width || principal.y() < 0.0 ||
        principal.y() > height) {
      throw Error(ErrorCode::invalid_argument,
                  "principal point outside the image");
    }
  }

  const RotationMatrix& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  double focal() const { return focal_; }
  const Vec2& principal() const { return principal_; }
  int width() const { return width_; }
  int height() const { return height_; }

  Vec3 to_camera(const Vec3& p) const { return rotation_ * p + translation_; }

  // Camera center in world coordinates.
  Vec3 center() const { return -(rotation_.matrix().transpose() * translation_); }

 private:
  RotationMatrix rotation_;
  Vec3 translation_;
  double focal_;
  Vec2 principal_;
  int width_;
  int height_;
};

struct Projection {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;
};

inline Projection project_camera_point(const Camera& cam, const Vec3& pc) {
  if (!(pc.z() > 0.0)) {
    throw Error(ErrorCode::behind_camera, "point is behind the camera");
  }
  return {cam.focal() * pc.x() / pc.z() + cam.principal().x(),
          cam.focal() * pc.y() / pc.z() + cam.principal().y(), pc.z()};
}

inline Projection project_point(const Camera& cam, const Vec3& p) {
  return project_camera_point(cam, cam.to_camera(p));
}

// Camera looking at the object origin from the given viewpoint; `offset`
// shifts the object in camera x/y (world units) off the optical axis.
inline Camera camera_for_viewpoint(const Viewpoint& vp, double distance,
                                   double focal, int width, int height,
                                   Vec2 offset = Vec2::Zero()) {
  const RotationMatrix r = rotation_from_viewpoint(vp) * world_to_canonical();
  return Camera(r, Vec3(offset.x(), offset.y(), distance), focal,
                Vec2(width / 2.0, height / 2.0), width, height);
}

}  // namespace posekit
