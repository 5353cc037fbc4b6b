// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "livo/geometry.hpp"
#include "livo/rng.hpp"
#include "livo/state.hpp"

namespace livo::test {

/// Plain vector state for exercising the filter core on linear-Gaussian
/// problems.
template <int N>
struct VecState {
  static constexpr int kDim = N;
  Eigen::Matrix<double, N, 1> v = Eigen::Matrix<double, N, 1>::Zero();

  VecState boxplus(const Eigen::Matrix<double, N, 1>& d) const { return {v + d}; }
  Eigen::Matrix<double, N, 1> boxminus(const VecState& o) const { return v - o.v; }
};

inline Vec3 random_vec3(const CounterRng& rng, std::uint64_t idx, double scale = 1.0) {
  return scale * Vec3(rng.normal(3 * idx), rng.normal(3 * idx + 1), rng.normal(3 * idx + 2));
}

inline Mat3 random_rotation(const CounterRng& rng, std::uint64_t idx, double scale = 1.0) {
  return so3::exp(random_vec3(rng, idx, scale));
}

inline Eigen::MatrixXd random_psd(const CounterRng& rng, std::uint64_t base, int n,
                                  double scale = 1.0) {
  Eigen::MatrixXd a(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) a(r, c) = rng.normal(base + r * n + c);
  }
  Eigen::MatrixXd p = scale * (a * a.transpose());
  p.diagonal().array() += 1e-6 * scale;
  return p;
}

inline NavState random_state(const CounterRng& rng, std::uint64_t idx) {
  NavState x;
  x.rotation = random_rotation(rng, 100 * idx, 0.8);
  x.position = random_vec3(rng, 100 * idx + 1, 2.0);
  x.velocity = random_vec3(rng, 100 * idx + 2, 1.0);
  x.gyro_bias = random_vec3(rng, 100 * idx + 3, 0.01);
  x.accel_bias = random_vec3(rng, 100 * idx + 4, 0.05);
  x.gravity = Vec3(0, 0, -9.81) + random_vec3(rng, 100 * idx + 5, 0.05);
  x.inv_exposure = 1.0 + 0.2 * rng.normal(100 * idx + 6);
  return x;
}

/// Hand-rolled cyclic Jacobi eigendecomposition for symmetric 3x3 matrices;
/// the independent oracle for plane-fit eigenvector checks. Returns
/// eigenvalues ascending with matching eigenvector columns.
inline void jacobi_eigen3(const Mat3& sym, Vec3& evals, Mat3& evecs) {
  Mat3 a = sym;
  Mat3 v = Mat3::Identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Mat3 rot = Mat3::Identity();
        rot(p, p) = c;
        rot(q, q) = c;
        rot(p, q) = s;
        rot(q, p) = -s;
        a = rot.transpose() * a * rot;
        v = v * rot;
      }
    }
  }
  // Sort ascending.
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
  for (int i = 0; i < 3; ++i) {
    evals(i) = a(order[i], order[i]);
    evecs.col(i) = v.col(order[i]);
  }
}

}  // namespace livo::test
