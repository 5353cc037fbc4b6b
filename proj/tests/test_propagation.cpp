// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "livo/propagation.hpp"
#include "test_util.hpp"

namespace livo {
namespace {

std::vector<ImuSample> constant_imu(const Vec3& gyro, const Vec3& accel, double duration,
                                    double rate) {
  std::vector<ImuSample> span;
  const int n = static_cast<int>(duration * rate);
  for (int i = 0; i <= n; ++i) span.push_back({i / rate, gyro, accel});
  return span;
}

TEST(ForwardPropagate, StationaryHover) {
  NavState x;
  x.gravity = Vec3(0.0, 0.0, -9.81);
  x.gyro_bias = Vec3(0.001, -0.002, 0.0005);
  x.accel_bias = Vec3(0.01, 0.02, -0.01);
  // omega_m = b_g and a_m = b_a - R^T g balance exactly.
  const Vec3 gyro = x.gyro_bias;
  const Vec3 accel = x.accel_bias - x.rotation.transpose() * x.gravity;
  const auto res = forward_propagate(x, StateCovariance::Identity() * 1e-4,
                                     constant_imu(gyro, accel, 1.0, 200.0), {});
  EXPECT_LT(res.state.position.norm(), 1e-9);
  EXPECT_LT(res.state.velocity.norm(), 1e-9);
  EXPECT_LT((res.state.rotation - Mat3::Identity()).norm(), 1e-9);
}

TEST(ForwardPropagate, ConstantAccelerationMatchesFineIntegration) {
  NavState x;
  x.gravity = Vec3(0.0, 0.0, -9.81);
  const double a = 0.7;
  const Vec3 accel = Vec3(a, 0.0, 0.0) - x.rotation.transpose() * x.gravity;

  const auto coarse = forward_propagate(x, StateCovariance::Zero(),
                                        constant_imu(Vec3::Zero(), accel, 2.0, 200.0), {});
  const auto fine = forward_propagate(x, StateCovariance::Zero(),
                                      constant_imu(Vec3::Zero(), accel, 2.0, 200000.0), {});
  const double expected = 0.5 * a * 2.0 * 2.0;
  EXPECT_NEAR(coarse.state.position.x(), expected, 1e-6 * expected);
  EXPECT_LT((coarse.state.position - fine.state.position).norm(), 1e-6 * expected);
}

// With zero noise the propagated covariance must equal F P F^T where F is the
// numeric Jacobian of the whole-span discrete transition.
TEST(ForwardPropagate, CovarianceMatchesFiniteDifferenceJacobian) {
  const CounterRng rng(31, 0);
  const NavState x0 = test::random_state(rng, 0);
  std::vector<ImuSample> span;
  for (int i = 0; i <= 20; ++i) {
    span.push_back({i * 0.005, test::random_vec3(rng, 50 + i, 0.4),
                    test::random_vec3(rng, 90 + i, 2.0) - x0.rotation.transpose() * x0.gravity});
  }
  NoiseConfig zero_noise{0.0, 0.0, 0.0, 0.0, 0.0};
  const StateCovariance p0 = test::random_psd(rng, 5000, kErrorDim, 1e-3);
  const auto res = forward_propagate(x0, p0, span, zero_noise);

  Eigen::Matrix<double, kErrorDim, kErrorDim> f_num;
  const double eps = 1e-6;
  for (int k = 0; k < kErrorDim; ++k) {
    ErrorVec d = ErrorVec::Zero();
    d(k) = eps;
    const auto plus = forward_propagate(x0.boxplus(d), StateCovariance::Zero(), span, zero_noise);
    d(k) = -eps;
    const auto minus = forward_propagate(x0.boxplus(d), StateCovariance::Zero(), span, zero_noise);
    f_num.col(k) = plus.state.boxminus(minus.state) / (2.0 * eps);
  }
  const StateCovariance expected = f_num * p0 * f_num.transpose();
  const double rel = (res.covariance - expected).norm() / expected.norm();
  EXPECT_LT(rel, 1e-6);
}

TEST(ForwardPropagate, RejectsNonMonotonicTimestamps) {
  std::vector<ImuSample> span = constant_imu(Vec3::Zero(), Vec3::Zero(), 0.1, 100.0);
  std::swap(span[2].timestamp, span[3].timestamp);
  EXPECT_THROW(forward_propagate(NavState{}, StateCovariance::Identity(), span, {}),
               std::invalid_argument);
  EXPECT_THROW(forward_propagate(NavState{}, StateCovariance::Identity(), {}, {}),
               std::invalid_argument);
}

TEST(ForwardPropagate, DeterministicAndSymmetricPsd) {
  const CounterRng rng(32, 0);
  const NavState x0 = test::random_state(rng, 1);
  const auto span = constant_imu(Vec3(0.1, -0.2, 0.3), Vec3(0.5, 9.0, 3.0), 0.5, 200.0);
  const StateCovariance p0 = test::random_psd(rng, 777, kErrorDim, 1e-4);
  const auto a = forward_propagate(x0, p0, span, {});
  const auto b = forward_propagate(x0, p0, span, {});
  EXPECT_EQ((a.covariance - b.covariance).norm(), 0.0);
  EXPECT_EQ(a.state.boxminus(b.state).norm(), 0.0);
  EXPECT_TRUE(is_valid_covariance(a.covariance, 1e-9));
}

TEST(RecombineScans, PartitionsByCameraInterval) {
  std::vector<LidarPoint> pts;
  for (int i = 1; i <= 19; ++i) pts.push_back({Vec3::Zero(), i * 0.01f, 0.0f});
  const auto res = recombine_scans(pts, {0.1, 0.2}, 0.0);
  ASSERT_EQ(res.scans.size(), 2u);
  EXPECT_EQ(res.scans[0].size(), 10u);  // (0, 0.1]
  EXPECT_EQ(res.scans[1].size(), 9u);   // (0.1, 0.2]
  EXPECT_EQ(res.dropped_before_first, 0u);
}

TEST(RecombineScans, BoundaryPointGoesToClosingScan) {
  std::vector<LidarPoint> pts{{Vec3::Zero(), 0.1, 0.0f}};
  const auto res = recombine_scans(pts, {0.1, 0.2}, 0.0);
  EXPECT_EQ(res.scans[0].size(), 1u);
  EXPECT_EQ(res.scans[1].size(), 0u);
}

TEST(RecombineScans, EmptyStream) {
  const auto res = recombine_scans({}, {0.1, 0.2}, 0.0);
  EXPECT_EQ(res.scans.size(), 2u);
  EXPECT_TRUE(res.scans[0].empty() && res.scans[1].empty());
}

TEST(RecombineScans, EarlyPointsDroppedWithCounter) {
  std::vector<LidarPoint> pts{{Vec3::Zero(), -0.05, 0.0f}, {Vec3::Zero(), 0.05, 0.0f}};
  const auto res = recombine_scans(pts, {0.1}, 0.0);
  EXPECT_EQ(res.dropped_before_first, 1u);
  EXPECT_EQ(res.scans[0].size(), 1u);
  EXPECT_EQ(recombine_scans(pts, {0.1}, 0.0).scans[0].size() + 1, pts.size());
}

TEST(BackwardCompensate, ZeroMotionIsIdentity) {
  NavState end;
  end.gravity = Vec3(0, 0, -9.81);
  const auto span = constant_imu(Vec3::Zero(), -end.gravity, 0.1, 200.0);
  std::vector<LidarPoint> scan;
  for (int i = 0; i < 10; ++i) scan.push_back({Vec3(1.0 + i, 2.0, 3.0), 0.01 * i + 0.005, 0.0f});
  const auto res = backward_compensate(scan, end, 0.1, span, Extrinsics{});
  ASSERT_EQ(res.points.size(), scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) {
    EXPECT_LT((res.points[i].position - scan[i].position).norm(), 1e-12);
  }
}

TEST(BackwardCompensate, ConstantVelocityClosedForm) {
  const Vec3 v(0.8, -0.4, 0.2);
  NavState end;
  end.gravity = Vec3(0, 0, -9.81);
  end.velocity = v;
  end.position = v * 0.1;  // integrated from origin over the scan
  const auto span = constant_imu(Vec3::Zero(), -end.gravity, 0.1, 1000.0);

  const Vec3 p_lidar(2.0, 1.0, 0.5);
  const double delta = 0.04;  // measured this long before scan end
  std::vector<LidarPoint> scan{{p_lidar, 0.1 - delta, 0.0f}};
  const auto res = backward_compensate(scan, end, 0.1, span, Extrinsics{});
  ASSERT_EQ(res.points.size(), 1u);
  // Identity attitude: the point shifts by the body displacement -v*delta.
  const Vec3 expected = p_lidar - v * delta;
  EXPECT_LT((res.points[0].position - expected).norm(), 1e-6);
}

TEST(BackwardCompensate, PointOutsideSpanDropped) {
  NavState end;
  const auto span = constant_imu(Vec3::Zero(), Vec3::Zero(), 0.1, 100.0);
  std::vector<LidarPoint> scan{{Vec3(1, 0, 0), -0.5, 0.0f}, {Vec3(1, 0, 0), 0.05, 0.0f}};
  const auto res = backward_compensate(scan, end, 0.1, span, Extrinsics{});
  EXPECT_EQ(res.points.size(), 1u);
  EXPECT_EQ(res.dropped, 1u);
}

}  // namespace
}  // namespace livo
