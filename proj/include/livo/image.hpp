// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace livo {

/// 8-bit single-channel raster. Bilinear sampling returns the value and,
/// on request, the exact gradient of the interpolated surface.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(w * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[y * width + x]; }
  std::uint8_t at(int x, int y) const { return data[y * width + x]; }

  bool contains(double x, double y, double margin = 0.0) const {
    return x >= margin && y >= margin && x <= width - 1 - margin && y <= height - 1 - margin;
  }

  float bilinear(double x, double y) const {
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, width - 2);
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, height - 2);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = at(x0, y0), v10 = at(x0 + 1, y0);
    const double v01 = at(x0, y0 + 1), v11 = at(x0 + 1, y0 + 1);
    return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v10) +
                              fy * ((1 - fx) * v01 + fx * v11));
  }

  /// Value and gradient of the bilinear surface at (x, y).
  void bilinear_with_grad(double x, double y, double& value, double& gx, double& gy) const {
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, width - 2);
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, height - 2);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = at(x0, y0), v10 = at(x0 + 1, y0);
    const double v01 = at(x0, y0 + 1), v11 = at(x0 + 1, y0 + 1);
    value = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
    gx = (1 - fy) * (v10 - v00) + fy * (v11 - v01);
    gy = (1 - fx) * (v01 - v00) + fx * (v11 - v10);
  }

  /// Central-difference gradient magnitude at an integer pixel, used to rank
  /// visual map point candidates.
  double gradient_magnitude(int x, int y) const {
    if (x < 1 || y < 1 || x > width - 2 || y > height - 2) return 0.0;
    const double gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
    const double gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
    return std::sqrt(gx * gx + gy * gy);
  }
};

}  // namespace livo
