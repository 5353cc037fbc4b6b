// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace livo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

namespace so3 {

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rotation-vector exponential map. Uses the Taylor expansion of the
/// Rodrigues coefficients below 1e-8 rad so small rotations stay exact.
inline Mat3 exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = hat(phi);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * k +
         ((1.0 - std::cos(theta)) / theta2) * k * k;
}

/// Logarithm map, returning the rotation vector with angle in [0, pi].
inline Vec3 log(const Mat3& rot) {
  const double cos_theta = std::min(1.0, std::max(-1.0, (rot.trace() - 1.0) * 0.5));
  const double theta = std::acos(cos_theta);
  const Vec3 axis_raw(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0), rot(1, 0) - rot(0, 1));
  if (theta < 1e-8) {
    return 0.5 * axis_raw;  // first order, axis_raw = 2 sin(theta) a
  }
  if (theta > M_PI - 1e-6) {
    // Near pi the off-diagonal form degenerates; recover the axis from R + I.
    Mat3 sym = 0.5 * (rot + Mat3::Identity());
    int i = 0;
    sym.diagonal().maxCoeff(&i);
    Vec3 axis = sym.col(i) / std::sqrt(std::max(sym(i, i), 1e-12));
    axis.normalize();
    if (axis.dot(axis_raw) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * axis_raw;
}

/// Right Jacobian of the exponential map.
inline Mat3 right_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = hat(phi);
  if (theta2 < 1e-16) {
    return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() - ((1.0 - std::cos(theta)) / theta2) * k +
         ((theta - std::sin(theta)) / (theta2 * theta)) * k * k;
}

}  // namespace so3

/// Rigid transform (R, t): maps x to R x + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }

  static RigidTransform identity() { return {}; }
};

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

}  // namespace livo
