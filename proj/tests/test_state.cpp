// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "livo/state.hpp"
#include "test_util.hpp"

namespace livo {
namespace {

TEST(SO3, ExpLogRoundTrip) {
  const CounterRng rng(11, 0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 phi = test::random_vec3(rng, i, 0.9);
    const Vec3 back = so3::log(so3::exp(phi));
    EXPECT_LT((back - phi).norm(), 1e-10) << phi.transpose();
  }
}

TEST(SO3, RotationStaysOrthonormal) {
  const CounterRng rng(12, 0);
  Mat3 r = Mat3::Identity();
  for (int i = 0; i < 500; ++i) r = r * so3::exp(test::random_vec3(rng, i, 0.3));
  EXPECT_TRUE(is_rotation(r, 1e-9));
}

TEST(NavState, BoxplusZeroIsIdentity) {
  const CounterRng rng(13, 0);
  const NavState x = test::random_state(rng, 0);
  const NavState y = x.boxplus(ErrorVec::Zero());
  EXPECT_EQ((y.rotation - x.rotation).norm(), 0.0);
  EXPECT_EQ((y.position - x.position).norm(), 0.0);
  EXPECT_EQ(y.inv_exposure, x.inv_exposure);
}

TEST(NavState, RotationBlockExponential) {
  NavState x;
  ErrorVec d = ErrorVec::Zero();
  d(2) = M_PI / 2.0;  // z-axis rotation
  const NavState y = x.boxplus(d);
  const Vec3 mapped = y.rotation * Vec3::UnitX();
  EXPECT_LT((mapped - Vec3::UnitY()).norm(), 1e-12);
}

TEST(NavState, BoxplusBoxminusRoundTrip) {
  const CounterRng rng(14, 0);
  const CounterRng delta_rng(15, 0);
  for (int i = 0; i < 1000; ++i) {
    const NavState x = test::random_state(rng, i);
    ErrorVec d;
    for (int k = 0; k < kErrorDim; ++k) d(k) = 0.03 * delta_rng.normal(32 * i + k);
    if (d.norm() >= 0.1) d *= 0.09 / d.norm();
    const ErrorVec back = x.boxplus(d).boxminus(x);
    EXPECT_LT((back - d).norm(), 1e-9);
  }
}

TEST(NavState, BoxminusBoxplusRoundTrip) {
  const CounterRng rng(16, 0);
  for (int i = 0; i < 1000; ++i) {
    NavState b = test::random_state(rng, 2 * i);
    NavState a = b;
    // Small separation so the rotation log stays well inside the ball.
    ErrorVec d;
    for (int k = 0; k < kErrorDim; ++k) d(k) = 0.02 * rng.normal(64 * i + k + 7);
    a = b.boxplus(d);
    const NavState again = b.boxplus(a.boxminus(b));
    EXPECT_LT(again.boxminus(a).norm(), 1e-9);
  }
}

TEST(NavState, RotationBlockLogIdentity) {
  const CounterRng rng(17, 0);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = test::random_rotation(rng, i, 1.0);
    Vec3 v = test::random_vec3(rng, 1000 + i, 1.0);
    if (v.norm() >= M_PI) v *= 3.0 / v.norm();
    NavState a, b;
    b.rotation = r;
    a.rotation = r * so3::exp(v);
    EXPECT_LT((a.boxminus(b).head<3>() - v).norm(), 1e-10);
  }
}

TEST(NavState, InvExposureClampedPositive) {
  NavState x;
  x.inv_exposure = 0.01;
  ErrorVec d = ErrorVec::Zero();
  d(kIdxTau) = -5.0;
  EXPECT_EQ(x.boxplus(d).inv_exposure, kMinInvExposure);
}

TEST(StateCovariance, ValidityCheck) {
  StateCovariance p = StateCovariance::Identity();
  EXPECT_TRUE(is_valid_covariance(p));
  p(0, 1) = 0.5;  // asymmetric
  EXPECT_FALSE(is_valid_covariance(p));
  p(0, 1) = 0.0;
  p(3, 3) = -1.0;  // indefinite
  EXPECT_FALSE(is_valid_covariance(p));
}

}  // namespace
}  // namespace livo
