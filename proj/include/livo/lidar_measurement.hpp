// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "livo/esikf.hpp"
#include "livo/state.hpp"
#include "livo/voxel_map.hpp"

namespace livo {

struct LidarNoiseModel {
  double range_sigma = 0.02;            // m
  double bearing_sigma = 0.05 * M_PI / 180.0;   // rad
  double beam_divergence = 0.15 * M_PI / 180.0;  // rad
};

/// ^G p = ^G T_I * ^I T_L * ^L p.
inline Vec3 transform_to_global(const Vec3& point_lidar, const NavState& state,
                                const Extrinsics& ext) {
  return state.pose() * (ext.lidar_to_imu * point_lidar);
}

/// Ranging spread induced by the beam divergence angle theta on a surface
/// viewed at incidence angle phi:
///   delta_d = d (cos phi / cos(theta + phi) - cos phi / cos(theta - phi))
/// evaluated in the cancellation-free product form
///   |delta_d| = d sin(theta) sin(2 phi) / (cos(theta + phi) cos(theta - phi)).
inline double divergence_range_spread(double range, double phi, const LidarNoiseModel& model,
                                      std::size_t* saturated_counter = nullptr) {
  const double theta = model.beam_divergence;
  const double limit = 0.5 * M_PI - theta;
  if (phi < 0.0 || phi >= limit) {
    if (saturated_counter) ++(*saturated_counter);
    phi = std::clamp(phi, 0.0, std::max(0.0, limit - 1e-6));
  }
  const double denom = std::cos(theta + phi) * std::cos(theta - phi);
  return range * std::sin(theta) * std::sin(2.0 * phi) / denom;
}

/// Total ranging sigma: base TOF noise and the divergence spread combined by
/// root sum of squares.
inline double divergence_range_sigma(double range, double phi, const LidarNoiseModel& model,
                                     std::size_t* saturated_counter = nullptr) {
  const double spread = divergence_range_spread(range, phi, model, saturated_counter);
  return std::sqrt(model.range_sigma * model.range_sigma + spread * spread);
}

/// 3x3 covariance of a LiDAR point in the sensor frame: ranging noise along
/// the beam, bearing noise across it.
inline Mat3 lidar_point_covariance(const Vec3& point_lidar, double range_sigma_total,
                                   const LidarNoiseModel& model) {
  const double d = point_lidar.norm();
  if (d < 1e-9) return Mat3::Identity() * model.range_sigma * model.range_sigma;
  const Vec3 w = point_lidar / d;
  const double lateral = d * model.bearing_sigma;
  const Mat3 along = w * w.transpose();
  return range_sigma_total * range_sigma_total * along +
         lateral * lateral * (Mat3::Identity() - along);
}

struct PointToPlaneResidual {
  double residual = 0.0;
  Eigen::Matrix<double, 1, kErrorDim> jacobian = Eigen::Matrix<double, 1, kErrorDim>::Zero();
  double variance = 0.0;
};

/// Builds one point-to-plane row against the map at the current iterate.
/// Returns nothing when no plane covers the projected point or the residual
/// fails the 3-sigma gate.
inline std::optional<PointToPlaneResidual> build_residual(const Vec3& point_lidar,
                                                          const NavState& state,
                                                          const VoxelMap& map,
                                                          const Extrinsics& ext,
                                                          const LidarNoiseModel& model,
                                                          double gate_sigma = 3.0,
                                                          std::size_t* saturated_counter =
                                                              nullptr) {
  const Vec3 p_imu = ext.lidar_to_imu * point_lidar;
  const Vec3 p_global = state.pose() * p_imu;
  const auto hit = map.query(p_global);
  if (!hit) return std::nullopt;
  const PlaneFeature& plane = *hit->plane;

  PointToPlaneResidual out;
  out.residual = plane.normal.dot(p_global - plane.center);
  out.jacobian.block<1, 3>(0, kIdxRot) =
      -plane.normal.transpose() * state.rotation * so3::hat(p_imu);
  out.jacobian.block<1, 3>(0, kIdxPos) = plane.normal.transpose();

  // Point noise: incidence angle between the beam and the plane normal.
  const Vec3 beam_global = (state.rotation * (ext.lidar_to_imu.rotation * point_lidar)).normalized();
  const double cphi = std::min(1.0, std::abs(beam_global.dot(plane.normal)));
  const double phi = std::acos(cphi);
  const double d = point_lidar.norm();
  const double sigma_d = divergence_range_sigma(d, phi, model, saturated_counter);
  const Mat3 cov_lidar = lidar_point_covariance(point_lidar, sigma_d, model);
  const Mat3 rot_gl = state.rotation * ext.lidar_to_imu.rotation;
  const double var_point = plane.normal.dot(rot_gl * cov_lidar * rot_gl.transpose() * plane.normal);

  // Plane noise: residual linearized in (delta n, delta q).
  Eigen::Matrix<double, 1, 6> j_plane;
  j_plane.leftCols<3>() = -(p_global - plane.center).transpose();
  j_plane.rightCols<3>() = plane.normal.transpose();
  const double var_plane = (j_plane * plane.param_cov * j_plane.transpose())(0, 0);

  out.variance = std::max(var_point + var_plane, 1e-12);
  if (gate_sigma > 0.0 && std::abs(out.residual) > gate_sigma * std::sqrt(out.variance)) {
    return std::nullopt;
  }
  return out;
}

/// Stacks point-to-plane rows for a scan, in input order.
inline MeasurementBatch build_lidar_batch(const std::vector<Vec3>& scan_lidar,
                                          const NavState& state, const VoxelMap& map,
                                          const Extrinsics& ext, const LidarNoiseModel& model,
                                          double gate_sigma = 3.0) {
  std::vector<PointToPlaneResidual> rows;
  rows.reserve(scan_lidar.size());
  for (const auto& p : scan_lidar) {
    if (auto r = build_residual(p, state, map, ext, model, gate_sigma)) {
      rows.push_back(*r);
    }
  }
  MeasurementBatch batch;
  batch.residuals.resize(rows.size());
  batch.jacobian.resize(rows.size(), kErrorDim);
  batch.noise_var.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    batch.residuals(i) = rows[i].residual;
    batch.jacobian.row(i) = rows[i].jacobian;
    batch.noise_var(i) = rows[i].variance;
  }
  return batch;
}

/// Per-point global-frame covariances for map insertion.
inline std::vector<Mat3> scan_point_covariances(const std::vector<LidarPoint>& scan,
                                                const NavState& state, const Extrinsics& ext,
                                                const LidarNoiseModel& model) {
  std::vector<Mat3> covs;
  covs.reserve(scan.size());
  const Mat3 rot_gl = state.rotation * ext.lidar_to_imu.rotation;
  for (const auto& p : scan) {
    const Mat3 c = lidar_point_covariance(p.position, model.range_sigma, model);
    covs.push_back(rot_gl * c * rot_gl.transpose());
  }
  return covs;
}

/// Temporal 1:3 downsampling: keeps every third point of the scan.
inline std::vector<LidarPoint> temporal_downsample(const std::vector<LidarPoint>& scan,
                                                   int ratio = 3) {
  std::vector<LidarPoint> out;
  if (ratio <= 1) return scan;
  out.reserve(scan.size() / ratio + 1);
  for (std::size_t i = 0; i < scan.size(); i += ratio) out.push_back(scan[i]);
  return out;
}

}  // namespace livo
