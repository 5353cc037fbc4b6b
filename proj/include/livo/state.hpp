// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "livo/geometry.hpp"

namespace livo {

// Error-state layout: [rot, pos, vel, gyro bias, accel bias, gravity, inv exposure].
inline constexpr int kErrorDim = 19;
inline constexpr int kIdxRot = 0;
inline constexpr int kIdxPos = 3;
inline constexpr int kIdxVel = 6;
inline constexpr int kIdxBg = 9;
inline constexpr int kIdxBa = 12;
inline constexpr int kIdxGrav = 15;
inline constexpr int kIdxTau = 18;

// Inverse exposure is clamped here after every retraction; the photometric
// model degenerates for non-positive values.
inline constexpr double kMinInvExposure = 1e-4;

using ErrorVec = Eigen::Matrix<double, kErrorDim, 1>;
using StateCovariance = Eigen::Matrix<double, kErrorDim, kErrorDim>;

/// Navigation state on SO(3) x R^16: body (IMU) pose, velocity, IMU biases,
/// gravity and the inverse camera exposure time relative to the first frame.
struct NavState {
  Mat3 rotation = Mat3::Identity();  // body-to-global
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double inv_exposure = 1.0;

  NavState boxplus(const ErrorVec& delta) const {
    NavState out = *this;
    out.rotation = rotation * so3::exp(delta.segment<3>(kIdxRot));
    out.position += delta.segment<3>(kIdxPos);
    out.velocity += delta.segment<3>(kIdxVel);
    out.gyro_bias += delta.segment<3>(kIdxBg);
    out.accel_bias += delta.segment<3>(kIdxBa);
    out.gravity += delta.segment<3>(kIdxGrav);
    out.inv_exposure = std::max(inv_exposure + delta(kIdxTau), kMinInvExposure);
    return out;
  }

  ErrorVec boxminus(const NavState& other) const {
    ErrorVec d;
    d.segment<3>(kIdxRot) = so3::log(other.rotation.transpose() * rotation);
    d.segment<3>(kIdxPos) = position - other.position;
    d.segment<3>(kIdxVel) = velocity - other.velocity;
    d.segment<3>(kIdxBg) = gyro_bias - other.gyro_bias;
    d.segment<3>(kIdxBa) = accel_bias - other.accel_bias;
    d.segment<3>(kIdxGrav) = gravity - other.gravity;
    d(kIdxTau) = inv_exposure - other.inv_exposure;
    return d;
  }

  RigidTransform pose() const { return {rotation, position}; }
};

/// Raw IMU sample: angular rate and specific force in the body frame.
struct ImuSample {
  double timestamp = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Continuous-time noise densities, SI units (x/sqrt(Hz)).
struct NoiseConfig {
  double gyro_noise_density = 3e-4;
  double accel_noise_density = 2e-3;
  double gyro_bias_walk = 1e-5;
  double accel_bias_walk = 1e-4;
  double exposure_walk = 5e-2;
};

struct LidarPoint {
  Vec3 position = Vec3::Zero();  // sensor (LiDAR) frame
  double timestamp = 0.0;
  float intensity = 0.0f;
};

struct Image;  // defined in image.hpp

/// One synchronized processing unit: the recombined scan over
/// (t_{k-1}, t_k], the image taken at t_k and the IMU samples in between.
struct FrameBundle {
  std::vector<LidarPoint> scan;
  bool undistorted = false;
  std::shared_ptr<const Image> image;
  double image_time = 0.0;
  std::vector<ImuSample> imu_span;
};

struct Extrinsics {
  RigidTransform lidar_to_imu;   // ^I T_L
  RigidTransform imu_to_camera;  // ^C T_I
};

inline void symmetrize(StateCovariance& cov) {
  cov = 0.5 * (cov + cov.transpose()).eval();
}

inline bool is_valid_covariance(const StateCovariance& cov, double tol = 1e-9) {
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > tol) return false;
  Eigen::SelfAdjointEigenSolver<StateCovariance> es(cov);
  return es.eigenvalues().minCoeff() > -tol;
}

}  // namespace livo
