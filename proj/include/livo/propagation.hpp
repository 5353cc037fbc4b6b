// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "livo/state.hpp"

namespace livo {

// Process noise order: [n_g, n_a, n_bg, n_ba, n_tau].
inline constexpr int kProcessNoiseDim = 13;

struct PropagationResult {
  NavState state;
  StateCovariance covariance;
};

namespace detail {

/// One zero-order-hold strapdown step over dt. Gravity has zero dynamics.
inline NavState integrate_step(const NavState& x, const ImuSample& u, double dt) {
  NavState out = x;
  const Vec3 omega = u.gyro - x.gyro_bias;
  const Vec3 acc_world = x.rotation * (u.accel - x.accel_bias) + x.gravity;
  out.rotation = x.rotation * so3::exp(omega * dt);
  out.position = x.position + x.velocity * dt + 0.5 * acc_world * dt * dt;
  out.velocity = x.velocity + acc_world * dt;
  return out;
}

/// Exact inverse of integrate_step (used by motion compensation).
inline NavState integrate_step_backward(const NavState& x_end, const ImuSample& u, double dt) {
  NavState out = x_end;
  const Vec3 omega = u.gyro - x_end.gyro_bias;
  out.rotation = x_end.rotation * so3::exp(-omega * dt);
  const Vec3 acc_world = out.rotation * (u.accel - x_end.accel_bias) + x_end.gravity;
  out.velocity = x_end.velocity - acc_world * dt;
  out.position = x_end.position - out.velocity * dt - 0.5 * acc_world * dt * dt;
  return out;
}

/// Error-state Jacobian of integrate_step w.r.t. the 19-dim error state.
inline Eigen::Matrix<double, kErrorDim, kErrorDim> step_jacobian(const NavState& x,
                                                                 const ImuSample& u, double dt) {
  using M = Eigen::Matrix<double, kErrorDim, kErrorDim>;
  const Vec3 omega = u.gyro - x.gyro_bias;
  const Vec3 acc_body = u.accel - x.accel_bias;
  const Mat3 jr = so3::right_jacobian(omega * dt);
  const Mat3 r_acc_hat = x.rotation * so3::hat(acc_body);

  M f = M::Identity();
  f.block<3, 3>(kIdxRot, kIdxRot) = so3::exp(omega * dt).transpose();
  f.block<3, 3>(kIdxRot, kIdxBg) = -jr * dt;
  f.block<3, 3>(kIdxPos, kIdxRot) = -0.5 * dt * dt * r_acc_hat;
  f.block<3, 3>(kIdxPos, kIdxVel) = Mat3::Identity() * dt;
  f.block<3, 3>(kIdxPos, kIdxBa) = -0.5 * dt * dt * x.rotation;
  f.block<3, 3>(kIdxPos, kIdxGrav) = 0.5 * dt * dt * Mat3::Identity();
  f.block<3, 3>(kIdxVel, kIdxRot) = -dt * r_acc_hat;
  f.block<3, 3>(kIdxVel, kIdxBa) = -dt * x.rotation;
  f.block<3, 3>(kIdxVel, kIdxGrav) = dt * Mat3::Identity();
  return f;
}

/// Maps sampled process noise into the error state over one step.
inline Eigen::Matrix<double, kErrorDim, kProcessNoiseDim> step_noise_jacobian(
    const NavState& x, const ImuSample& u, double dt) {
  Eigen::Matrix<double, kErrorDim, kProcessNoiseDim> g =
      Eigen::Matrix<double, kErrorDim, kProcessNoiseDim>::Zero();
  const Vec3 omega = u.gyro - x.gyro_bias;
  g.block<3, 3>(kIdxRot, 0) = -so3::right_jacobian(omega * dt) * dt;
  g.block<3, 3>(kIdxPos, 3) = -0.5 * dt * dt * x.rotation;
  g.block<3, 3>(kIdxVel, 3) = -dt * x.rotation;
  g.block<3, 3>(kIdxBg, 6) = Mat3::Identity() * dt;
  g.block<3, 3>(kIdxBa, 9) = Mat3::Identity() * dt;
  g(kIdxTau, 12) = dt;
  return g;
}

inline Eigen::Matrix<double, kProcessNoiseDim, kProcessNoiseDim> noise_psd(
    const NoiseConfig& noise) {
  Eigen::Matrix<double, kProcessNoiseDim, kProcessNoiseDim> q =
      Eigen::Matrix<double, kProcessNoiseDim, kProcessNoiseDim>::Zero();
  q.diagonal().segment<3>(0).setConstant(noise.gyro_noise_density * noise.gyro_noise_density);
  q.diagonal().segment<3>(3).setConstant(noise.accel_noise_density * noise.accel_noise_density);
  q.diagonal().segment<3>(6).setConstant(noise.gyro_bias_walk * noise.gyro_bias_walk);
  q.diagonal().segment<3>(9).setConstant(noise.accel_bias_walk * noise.accel_bias_walk);
  q(12, 12) = noise.exposure_walk * noise.exposure_walk;
  return q;
}

}  // namespace detail

/// Integrates the state and covariance through the IMU span. The first sample
/// seeds the zero-order hold; each subsequent sample closes one step, so n
/// samples drive n-1 steps. Sampled noise over dt has covariance Q_c / dt.
inline PropagationResult forward_propagate(const NavState& state, const StateCovariance& cov,
                                           const std::vector<ImuSample>& imu_span,
                                           const NoiseConfig& noise) {
  if (imu_span.empty()) {
    throw std::invalid_argument("forward_propagate: empty IMU span");
  }
  for (std::size_t i = 1; i < imu_span.size(); ++i) {
    if (imu_span[i].timestamp <= imu_span[i - 1].timestamp) {
      throw std::invalid_argument("forward_propagate: non-monotonic IMU timestamps at sample " +
                                  std::to_string(i));
    }
  }
  PropagationResult out{state, cov};
  const auto q = detail::noise_psd(noise);
  for (std::size_t i = 0; i + 1 < imu_span.size(); ++i) {
    const double dt = imu_span[i + 1].timestamp - imu_span[i].timestamp;
    const auto f = detail::step_jacobian(out.state, imu_span[i], dt);
    const auto g = detail::step_noise_jacobian(out.state, imu_span[i], dt);
    out.state = detail::integrate_step(out.state, imu_span[i], dt);
    out.covariance = f * out.covariance * f.transpose() + g * (q / dt) * g.transpose();
  }
  symmetrize(out.covariance);
  return out;
}

struct RecombineResult {
  std::vector<std::vector<LidarPoint>> scans;  // one per camera interval (t_{k-1}, t_k]
  std::size_t dropped_before_first = 0;
  std::size_t dropped_after_last = 0;
};

/// Partitions a time-ordered point stream into per-camera-interval scans.
/// Intervals are right-closed; points at or before the first camera time
/// minus one period would belong to no interval and are dropped.
inline RecombineResult recombine_scans(const std::vector<LidarPoint>& points,
                                       const std::vector<double>& camera_times,
                                       double first_interval_start) {
  RecombineResult out;
  out.scans.resize(camera_times.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    if (p.timestamp <= first_interval_start) {
      ++out.dropped_before_first;
      continue;
    }
    while (k < camera_times.size() && p.timestamp > camera_times[k]) ++k;
    if (k == camera_times.size()) {
      ++out.dropped_after_last;
      continue;
    }
    out.scans[k].push_back(p);
  }
  return out;
}

struct CompensatedScan {
  std::vector<LidarPoint> points;  // re-expressed at the scan-end time
  std::size_t dropped = 0;
};

/// Re-expresses every point as if it had been measured at the scan-end time
/// by propagating the end-of-scan state backward to each point's timestamp.
/// Points outside the IMU span are dropped.
inline CompensatedScan backward_compensate(const std::vector<LidarPoint>& scan,
                                           const NavState& state_at_scan_end, double scan_end_time,
                                           const std::vector<ImuSample>& imu_span,
                                           const Extrinsics& ext) {
  CompensatedScan out;
  out.points.reserve(scan.size());
  if (scan.empty()) return out;
  if (imu_span.empty()) {
    out.dropped = scan.size();
    return out;
  }

  // Poses at the IMU sample times, walked backward from the scan end.
  struct Node {
    double t;
    NavState x;
  };
  std::vector<Node> nodes;
  nodes.reserve(imu_span.size() + 1);
  NavState cur = state_at_scan_end;
  nodes.push_back({scan_end_time, cur});
  for (auto it = imu_span.rbegin(); it != imu_span.rend(); ++it) {
    if (it->timestamp >= nodes.back().t) continue;
    cur = detail::integrate_step_backward(cur, *it, nodes.back().t - it->timestamp);
    nodes.push_back({it->timestamp, cur});
  }

  const RigidTransform t_il = ext.lidar_to_imu;
  const RigidTransform end_lidar_from_global = (state_at_scan_end.pose() * t_il).inverse();
  const double t_front = nodes.back().t;

  for (const auto& p : scan) {
    if (p.timestamp > scan_end_time + 1e-9 || p.timestamp < t_front - 1e-9) {
      ++out.dropped;
      continue;
    }
    if (p.timestamp >= scan_end_time - 1e-12) {
      out.points.push_back(p);
      continue;
    }
    // Locate the bracketing node and take a partial backward step from it.
    std::size_t lo = 0;
    while (lo + 1 < nodes.size() && nodes[lo + 1].t > p.timestamp) ++lo;
    NavState at_point = nodes[lo].x;
    const double dt = nodes[lo].t - p.timestamp;
    if (dt > 0.0) {
      // Hold the sample that drives the interval containing the point.
      const ImuSample* drive = &imu_span.front();
      for (const auto& s : imu_span) {
        if (s.timestamp <= p.timestamp) drive = &s;
      }
      at_point = detail::integrate_step_backward(at_point, *drive, dt);
    }
    const Vec3 global = at_point.pose() * (t_il * p.position);
    LidarPoint q = p;
    q.position = end_lidar_from_global * global;
    out.points.push_back(q);
  }
  return out;
}

}  // namespace livo
