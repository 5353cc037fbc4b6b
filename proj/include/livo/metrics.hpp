// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "livo/dataset.hpp"

namespace livo {

struct AteResult {
  double rmse = 0.0;
  std::size_t matched_poses = 0;
  Mat3 alignment_rotation = Mat3::Identity();
  Vec3 alignment_translation = Vec3::Zero();
};

/// Absolute trajectory error: timestamp association (nearest neighbor within
/// the tolerance), rigid Kabsch alignment, then translation RMSE.
inline AteResult evaluate_ate(const std::vector<TrajectoryRecord>& estimate,
                              const std::vector<TrajectoryRecord>& ground_truth,
                              double max_dt = 0.005) {
  std::vector<Vec3> est, gt;
  std::size_t j = 0;
  for (const auto& e : estimate) {
    while (j + 1 < ground_truth.size() &&
           std::abs(ground_truth[j + 1].timestamp - e.timestamp) <=
               std::abs(ground_truth[j].timestamp - e.timestamp)) {
      ++j;
    }
    if (j < ground_truth.size() && std::abs(ground_truth[j].timestamp - e.timestamp) <= max_dt) {
      est.push_back(e.position);
      gt.push_back(ground_truth[j].position);
    }
  }
  if (est.empty()) {
    throw std::runtime_error("evaluate_ate: no timestamp overlap between trajectories");
  }

  Vec3 mean_est = Vec3::Zero(), mean_gt = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    mean_est += est[i];
    mean_gt += gt[i];
  }
  mean_est /= static_cast<double>(est.size());
  mean_gt /= static_cast<double>(gt.size());

  Mat3 w = Mat3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    w += (gt[i] - mean_gt) * (est[i] - mean_est).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 rot = svd.matrixU() * d * svd.matrixV().transpose();
  const Vec3 trans = mean_gt - rot * mean_est;

  AteResult out;
  out.matched_poses = est.size();
  out.alignment_rotation = rot;
  out.alignment_translation = trans;
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    sq += (rot * est[i] + trans - gt[i]).squaredNorm();
  }
  out.rmse = std::sqrt(sq / static_cast<double>(est.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Minimal line-plot rasterizer (PPM output) for the diagnostics.

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::array<std::uint8_t, 3> color{200, 60, 60};
};

inline void write_plot_ppm(const std::vector<PlotSeries>& series, const std::filesystem::path& path,
                           int width = 720, int height = 360) {
  std::vector<std::uint8_t> canvas(static_cast<std::size_t>(width) * height * 3, 255);
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      x_lo = std::min(x_lo, v);
      x_hi = std::max(x_hi, v);
    }
    for (double v : s.y) {
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
    }
  }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  auto put = [&](int x, int y, const std::array<std::uint8_t, 3>& c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* px = &canvas[(static_cast<std::size_t>(y) * width + x) * 3];
    px[0] = c[0];
    px[1] = c[1];
    px[2] = c[2];
  };
  // Light grid.
  for (int gx = 1; gx < 10; ++gx) {
    for (int y = 0; y < height; ++y) put(gx * width / 10, y, {230, 230, 230});
  }
  for (int gy = 1; gy < 6; ++gy) {
    for (int x = 0; x < width; ++x) put(x, gy * height / 6, {230, 230, 230});
  }

  auto map_pt = [&](double x, double y) {
    const int px = static_cast<int>((x - x_lo) / (x_hi - x_lo) * (width - 1));
    const int py = height - 1 - static_cast<int>((y - y_lo) / (y_hi - y_lo) * (height - 1));
    return std::pair<int, int>(px, py);
  };
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.x.size(); ++i) {
      auto [x0, y0] = map_pt(s.x[i - 1], s.y[i - 1]);
      auto [x1, y1] = map_pt(s.x[i], s.y[i]);
      const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
      for (int k = 0; k <= steps; ++k) {
        const int x = x0 + (x1 - x0) * k / steps;
        const int y = y0 + (y1 - y0) * k / steps;
        put(x, y, s.color);
        put(x, y + 1, s.color);
      }
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
}

}  // namespace livo
