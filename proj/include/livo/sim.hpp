// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "livo/camera.hpp"
#include "livo/geometry.hpp"
#include "livo/image.hpp"
#include "livo/lidar_measurement.hpp"
#include "livo/rng.hpp"
#include "livo/state.hpp"

namespace livo {
namespace sim {

// ---------------------------------------------------------------------------
// Textures

struct TextureSpec {
  enum class Kind { kChecker, kNoise, kGradient };
  Kind kind = Kind::kNoise;
  double period = 0.5;  // meters (checker square / noise feature size)
  double base = 120.0;
  double amplitude = 60.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Two-octave value noise on a seeded integer lattice.
inline double value_noise(double u, double v, std::uint64_t seed) {
  auto lattice = [&](std::int64_t x, std::int64_t y, std::uint64_t octave) {
    const std::uint64_t h = CounterRng::mix(
        seed, octave, static_cast<std::uint64_t>(x) * 0x1f123bb5ull +
                          static_cast<std::uint64_t>(y) * 0x5bd1e995ull + (x < 0 ? 1ull << 40 : 0) +
                          (y < 0 ? 1ull << 41 : 0));
    return (h >> 11) * 0x1.0p-53;
  };
  double total = 0.0;
  double amp = 0.65;
  double freq = 1.0;
  for (std::uint64_t octave = 0; octave < 2; ++octave) {
    const double x = u * freq, y = v * freq;
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const double fx = smoothstep(x - x0);
    const double fy = smoothstep(y - y0);
    const double n = (1 - fy) * ((1 - fx) * lattice(x0, y0, octave) +
                                 fx * lattice(x0 + 1, y0, octave)) +
                     fy * ((1 - fx) * lattice(x0, y0 + 1, octave) +
                           fx * lattice(x0 + 1, y0 + 1, octave));
    total += amp * (2.0 * n - 1.0);
    amp *= 0.5;
    freq *= 2.3;
  }
  return total;
}

}  // namespace detail

inline double sample_texture(const TextureSpec& tex, double u, double v) {
  switch (tex.kind) {
    case TextureSpec::Kind::kChecker: {
      const auto iu = static_cast<std::int64_t>(std::floor(u / tex.period));
      const auto iv = static_cast<std::int64_t>(std::floor(v / tex.period));
      return ((iu + iv) & 1) ? tex.base - tex.amplitude : tex.base + tex.amplitude;
    }
    case TextureSpec::Kind::kNoise:
      return tex.base + tex.amplitude * detail::value_noise(u / tex.period, v / tex.period,
                                                            tex.seed);
    case TextureSpec::Kind::kGradient:
      return tex.base + tex.amplitude * std::sin(u / tex.period);
  }
  return tex.base;
}

// ---------------------------------------------------------------------------
// World

/// Textured rectangle: local plane z = 0, |x| <= half_extent.x, |y| <=
/// half_extent.y; the outward normal is pose.rotation * e_z.
struct TexturedRect {
  RigidTransform pose;  // local -> world
  Vec2 half_extent = Vec2(1.0, 1.0);
  TextureSpec texture;

  Vec3 normal() const { return pose.rotation.col(2); }
};

struct SyntheticWorld {
  std::vector<TexturedRect> rects;
  double background_gray = 40.0;
};

struct RayHit {
  double range = 0.0;
  Vec3 point = Vec3::Zero();
  double gray = 0.0;
  int rect_index = -1;
};

inline std::optional<RayHit> intersect_world(const SyntheticWorld& world, const Vec3& origin,
                                             const Vec3& dir) {
  RayHit best;
  best.range = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < world.rects.size(); ++i) {
    const auto& rect = world.rects[i];
    const RigidTransform inv = rect.pose.inverse();
    const Vec3 o = inv * origin;
    const Vec3 d = inv.rotation * dir;
    if (std::abs(d.z()) < 1e-12) continue;
    const double t = -o.z() / d.z();
    if (t <= 1e-6 || t >= best.range) continue;
    const double x = o.x() + t * d.x();
    const double y = o.y() + t * d.y();
    if (std::abs(x) > rect.half_extent.x() || std::abs(y) > rect.half_extent.y()) continue;
    best.range = t;
    best.point = origin + t * dir;
    best.gray = sample_texture(rect.texture, x, y);
    best.rect_index = static_cast<int>(i);
  }
  if (best.rect_index < 0) return std::nullopt;
  best.range *= dir.norm();
  return best;
}

// ---------------------------------------------------------------------------
// Trajectories

struct PoseSample {
  Mat3 rotation = Mat3::Identity();  // body-to-world
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 accel_world = Vec3::Zero();
  Vec3 omega_body = Vec3::Zero();
};

inline Mat3 yaw_rotation(double yaw) {
  Mat3 r;
  r << std::cos(yaw), -std::sin(yaw), 0.0, std::sin(yaw), std::cos(yaw), 0.0, 0.0, 0.0, 1.0;
  return r;
}

/// A piecewise-analytic trajectory segment. All kinds are twice
/// differentiable inside the segment.
struct TrajectorySegment {
  enum class Kind { kStatic, kLine, kCircle } kind = Kind::kStatic;
  double duration = 1.0;

  // kStatic / kLine
  Vec3 start_position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double base_yaw = 0.0;

  // kCircle: position = center + radius (cos th, sin th, 0) with an
  // exponential spin-up, yaw following the tangent.
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double angular_rate = 0.1;
  double spinup_tau = 0.0;  // 0 = constant rate
  double start_phase = 0.0;

  // Optional sinusoidal yaw modulation on top of any kind.
  double yaw_amplitude = 0.0;
  double yaw_frequency = 0.0;  // rad/s

  PoseSample sample(double t) const {
    PoseSample s;
    double yaw = base_yaw;
    double yaw_rate = 0.0;
    switch (kind) {
      case Kind::kStatic:
        s.position = start_position;
        break;
      case Kind::kLine:
        s.position = start_position + velocity * t;
        s.velocity = velocity;
        break;
      case Kind::kCircle: {
        double phase, rate, rate_dot;
        if (spinup_tau > 0.0) {
          const double e = std::exp(-t / spinup_tau);
          phase = start_phase + angular_rate * (t - spinup_tau * (1.0 - e));
          rate = angular_rate * (1.0 - e);
          rate_dot = angular_rate / spinup_tau * e;
        } else {
          phase = start_phase + angular_rate * t;
          rate = angular_rate;
          rate_dot = 0.0;
        }
        const Vec3 radial(std::cos(phase), std::sin(phase), 0.0);
        const Vec3 tangent(-std::sin(phase), std::cos(phase), 0.0);
        s.position = center + radius * radial;
        s.velocity = radius * rate * tangent;
        s.accel_world = radius * rate_dot * tangent - radius * rate * rate * radial;
        yaw = base_yaw + phase + 0.5 * M_PI;  // tangent heading
        yaw_rate = rate;
        break;
      }
    }
    if (yaw_amplitude != 0.0) {
      yaw += yaw_amplitude * std::sin(yaw_frequency * t);
      yaw_rate += yaw_amplitude * yaw_frequency * std::cos(yaw_frequency * t);
    }
    s.rotation = yaw_rotation(yaw);
    s.omega_body = s.rotation.transpose() * Vec3(0.0, 0.0, yaw_rate);
    return s;
  }
};

struct TrajectorySpec {
  std::vector<TrajectorySegment> segments;
  double imu_rate = 200.0;
  double frame_rate = 10.0;

  double duration() const {
    double d = 0.0;
    for (const auto& s : segments) d += s.duration;
    return d;
  }

  PoseSample sample(double t) const {
    double t0 = 0.0;
    for (const auto& s : segments) {
      if (t <= t0 + s.duration || &s == &segments.back()) return s.sample(t - t0);
      t0 += s.duration;
    }
    return {};
  }
};

// ---------------------------------------------------------------------------
// Sensors

struct ImuSimConfig {
  NoiseConfig noise;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  bool noise_free = false;
  std::uint64_t seed = 0;
};

/// IMU stream of the trajectory: omega = body rate + bias (+ noise),
/// accel = R^T (a_world - g) + bias (+ noise).
inline std::vector<ImuSample> simulate_imu(const TrajectorySpec& traj, const ImuSimConfig& cfg) {
  std::vector<ImuSample> out;
  const double dt = 1.0 / traj.imu_rate;
  const auto n = static_cast<std::size_t>(std::round(traj.duration() * traj.imu_rate));
  out.reserve(n + 1);
  const CounterRng gyro_rng(cfg.seed, 1);
  const CounterRng accel_rng(cfg.seed, 2);
  const double gyro_sigma = cfg.noise_free ? 0.0 : cfg.noise.gyro_noise_density / std::sqrt(dt);
  const double accel_sigma = cfg.noise_free ? 0.0 : cfg.noise.accel_noise_density / std::sqrt(dt);
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = i * dt;
    const PoseSample s = traj.sample(t);
    ImuSample m;
    m.timestamp = t;
    m.gyro = s.omega_body + cfg.gyro_bias;
    m.accel = s.rotation.transpose() * (s.accel_world - cfg.gravity) + cfg.accel_bias;
    if (!cfg.noise_free) {
      for (int k = 0; k < 3; ++k) {
        m.gyro[k] += gyro_sigma * gyro_rng.normal(3 * i + k);
        m.accel[k] += accel_sigma * accel_rng.normal(3 * i + k);
      }
    }
    out.push_back(m);
  }
  return out;
}

struct LidarPattern {
  int rays_x = 64;
  int rays_y = 48;
  double fov_x = 70.0 * M_PI / 180.0;
  double fov_y = 50.0 * M_PI / 180.0;
};

struct LidarSimConfig {
  LidarPattern pattern;
  LidarNoiseModel noise;
  bool noise_free = false;
  double max_range = 60.0;
  std::uint64_t seed = 0;
};

/// One LiDAR scan over (t_begin, t_end]; per-ray timestamps spread across
/// the interval along the moving trajectory (x-forward sensor frame).
inline std::vector<LidarPoint> simulate_lidar_scan(const SyntheticWorld& world,
                                                   const TrajectorySpec& traj,
                                                   const RigidTransform& lidar_to_imu,
                                                   double t_begin, double t_end,
                                                   const LidarSimConfig& cfg) {
  std::vector<LidarPoint> out;
  const int total = cfg.pattern.rays_x * cfg.pattern.rays_y;
  out.reserve(total);
  const CounterRng range_rng(cfg.seed, 3);
  const CounterRng bearing_rng(cfg.seed, 4);
  // Stream indices keyed by absolute ray count so every scan is independent.
  const auto scan_index = static_cast<std::uint64_t>(std::llround(t_end * 1e6));

  for (int j = 0; j < cfg.pattern.rays_y; ++j) {
    for (int i = 0; i < cfg.pattern.rays_x; ++i) {
      const int idx = j * cfg.pattern.rays_x + i;
      const double t = t_begin + (idx + 1) * (t_end - t_begin) / total;
      const double az = (i + 0.5) / cfg.pattern.rays_x - 0.5;
      const double el = (j + 0.5) / cfg.pattern.rays_y - 0.5;
      const double a = az * cfg.pattern.fov_x;
      const double e = el * cfg.pattern.fov_y;
      Vec3 dir_lidar(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));

      const PoseSample s = traj.sample(t);
      const RigidTransform lidar_to_world = RigidTransform{s.rotation, s.position} * lidar_to_imu;
      const Vec3 origin = lidar_to_world.translation;
      const Vec3 dir_world = lidar_to_world.rotation * dir_lidar;
      const auto hit = intersect_world(world, origin, dir_world);
      if (!hit || hit->range > cfg.max_range) continue;

      double range = hit->range;
      if (!cfg.noise_free) {
        const std::uint64_t key = scan_index * 16384 + idx;
        range += cfg.noise.range_sigma * range_rng.normal(key);
        // Bearing perturbation across the beam.
        const Vec3 e1 = dir_lidar.unitOrthogonal();
        const Vec3 e2 = dir_lidar.cross(e1);
        dir_lidar = (dir_lidar + cfg.noise.bearing_sigma * (bearing_rng.normal(2 * key) * e1 +
                                                            bearing_rng.normal(2 * key + 1) * e2))
                        .normalized();
      }
      LidarPoint p;
      p.position = dir_lidar * range;
      p.timestamp = t;
      p.intensity = static_cast<float>(hit->gray);
      out.push_back(p);
    }
  }
  return out;
}

/// Pinhole render of the world from a camera pose (camera-to-world),
/// brightness scaled by the exposure factor and clamped to [0, 255].
inline Image render_image(const SyntheticWorld& world, const RigidTransform& cam_to_world,
                          const PinholeCamera& cam, double exposure_factor) {
  Image img(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir_cam = cam.unproject(Vec2(x, y)).normalized();
      const Vec3 dir_world = cam_to_world.rotation * dir_cam;
      const auto hit = intersect_world(world, cam_to_world.translation, dir_world);
      const double radiance = hit ? hit->gray : world.background_gray;
      const double v = std::round(radiance * exposure_factor);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return img;
}

}  // namespace sim
}  // namespace livo
