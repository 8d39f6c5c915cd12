#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace drivefix {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Rigid transform p_out = R * p_in + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  Pose compose(const Pose& other) const {  // this ∘ other
    return {R * other.R, R * other.t + t};
  }
  static Pose identity() { return {}; }
};

inline Mat3 rot_z(double yaw) {
  Mat3 m;
  m << std::cos(yaw), -std::sin(yaw), 0, std::sin(yaw), std::cos(yaw), 0, 0, 0, 1;
  return m;
}

inline Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

inline Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline double orthonormality_error(const Mat3& R) {
  return ((R.transpose() * R) - Mat3::Identity()).cwiseAbs().maxCoeff();
}

// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  // Camera frame: +z forward, +x right, +y down. Returns pixel coords.
  Vec2 project(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }
  // Ray through pixel center (x, y), unit z.
  Vec3 ray(double x, double y) const { return {(x - cx) / fx, (y - cy) / fy, 1.0}; }
  // 3D point in camera frame for pixel (x, y) at z-depth d.
  Vec3 unproject(double x, double y, double d) const { return ray(x, y) * d; }
};

}  // namespace drivefix
