// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include <Eigen/Core>

#include "livo/geometry.hpp"

namespace livo {

struct PinholeCamera {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("camera: focal length must be > 0");
    if (cx <= 0.0 || cx >= width || cy <= 0.0 || cy >= height) {
      throw std::invalid_argument("camera: principal point outside image");
    }
  }

  Vec2 project(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  /// Unit-depth ray direction through a pixel.
  Vec3 unproject(const Vec2& px) const {
    return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
  }

  /// d(project)/d(p_cam), 2x3.
  Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p_cam) const {
    const double iz = 1.0 / p_cam.z();
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, 0.0, -fx * p_cam.x() * iz * iz, 0.0, fy * iz, -fy * p_cam.y() * iz * iz;
    return j;
  }

  /// Intrinsic matrix and its inverse as homogeneous-pixel maps.
  Mat3 intrinsic_matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  bool in_image(const Vec2& px, double margin = 0.0) const {
    return px.x() >= margin && px.y() >= margin && px.x() <= width - 1 - margin &&
           px.y() <= height - 1 - margin;
  }
};

}  // namespace livo
