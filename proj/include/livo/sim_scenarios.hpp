// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "livo/dataset.hpp"
#include "livo/sim.hpp"

namespace livo {
namespace sim {

struct ExposureProfile {
  double amplitude = 0.0;  // relative, e.g. 0.3 for +-30%
  double period = 5.0;     // seconds

  double factor(double t) const {
    if (amplitude == 0.0) return 1.0;
    return 1.0 + amplitude * std::sin(2.0 * M_PI * t / period);
  }
};

struct Scenario {
  std::string name;
  SyntheticWorld world;
  TrajectorySpec trajectory;
  Calibration calib;
  ImuSimConfig imu;
  LidarSimConfig lidar;
  ExposureProfile exposure;
};

inline Calibration default_rig() {
  Calibration c;
  c.camera.fx = 220.0;
  c.camera.fy = 220.0;
  c.camera.cx = 160.0;
  c.camera.cy = 120.0;
  c.camera.width = 320;
  c.camera.height = 240;
  c.extrinsics.lidar_to_imu.translation = Vec3(0.05, 0.0, -0.02);
  // Camera: z forward (= body x), x right (= body -y), y down (= body -z).
  Mat3 r_ci;
  r_ci << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  c.extrinsics.imu_to_camera.rotation = r_ci;
  c.extrinsics.imu_to_camera.translation = Vec3(0.02, 0.01, 0.0);
  return c;
}

inline TexturedRect make_wall(const Vec3& center, const Vec3& normal, const Vec3& up,
                              const Vec2& half_extent, const TextureSpec& tex) {
  TexturedRect r;
  const Vec3 z = normal.normalized();
  const Vec3 x = up.cross(z).normalized();
  const Vec3 y = z.cross(x);
  r.pose.rotation.col(0) = x;
  r.pose.rotation.col(1) = y;
  r.pose.rotation.col(2) = z;
  r.pose.translation = center;
  r.half_extent = half_extent;
  r.texture = tex;
  return r;
}

/// Closed room (4 walls + floor) around the origin.
inline SyntheticWorld make_box_world(std::uint64_t seed, double half = 15.0, double height = 6.0) {
  SyntheticWorld w;
  TextureSpec tex;
  tex.kind = TextureSpec::Kind::kNoise;
  tex.period = 0.45;
  tex.base = 120.0;
  tex.amplitude = 58.0;
  const double hz = height * 0.5;
  auto wall_tex = [&](std::uint64_t s) {
    TextureSpec t = tex;
    t.seed = seed * 16 + s;
    return t;
  };
  w.rects.push_back(make_wall({half, 0, hz}, {-1, 0, 0}, {0, 0, 1}, {half, hz}, wall_tex(1)));
  w.rects.push_back(make_wall({-half, 0, hz}, {1, 0, 0}, {0, 0, 1}, {half, hz}, wall_tex(2)));
  w.rects.push_back(make_wall({0, half, hz}, {0, -1, 0}, {0, 0, 1}, {half, hz}, wall_tex(3)));
  w.rects.push_back(make_wall({0, -half, hz}, {0, 1, 0}, {0, 0, 1}, {half, hz}, wall_tex(4)));
  w.rects.push_back(make_wall({0, 0, 0}, {0, 0, 1}, {1, 0, 0}, {half, half}, wall_tex(5)));
  return w;
}

inline Scenario make_scenario(const std::string& name, std::uint64_t seed) {
  Scenario s;
  s.name = name;
  s.calib = default_rig();
  s.imu.seed = seed;
  s.lidar.seed = seed + 1;
  s.imu.gyro_bias = Vec3(0.002, -0.001, 0.0015);
  s.imu.accel_bias = Vec3(0.03, -0.02, 0.04);
  s.trajectory.imu_rate = 200.0;
  s.trajectory.frame_rate = 10.0;

  auto static_lead = [](const Vec3& pos, double yaw, double duration) {
    TrajectorySegment seg;
    seg.kind = TrajectorySegment::Kind::kStatic;
    seg.duration = duration;
    seg.start_position = pos;
    seg.base_yaw = yaw;
    return seg;
  };

  if (name == "box_loop" || name == "exposure_sine" || name == "static_scene") {
    s.world = make_box_world(seed);
  }

  if (name == "box_loop") {
    const double radius = 60.0 / (2.0 * M_PI);  // ~1 m/s over a 60 s loop
    const double loop_time = 60.0;
    const double tau = 2.0;
    const double rate = 2.0 * M_PI / (loop_time - tau * (1.0 - std::exp(-loop_time / tau)));
    TrajectorySegment circle;
    circle.kind = TrajectorySegment::Kind::kCircle;
    circle.duration = loop_time;
    circle.center = Vec3(0.0, 0.0, 1.5);
    circle.radius = radius;
    circle.angular_rate = rate;
    circle.spinup_tau = tau;
    circle.start_phase = 0.0;
    s.trajectory.segments = {
        static_lead(circle.center + Vec3(radius, 0.0, 0.0), 0.5 * M_PI, 1.0), circle};
    s.exposure = {0.20, 7.0};
  } else if (name == "exposure_sine") {
    TrajectorySegment circle;
    circle.kind = TrajectorySegment::Kind::kCircle;
    circle.duration = 29.0;
    circle.center = Vec3(0.0, 0.0, 1.5);
    circle.radius = 2.0;
    circle.angular_rate = 0.12;
    circle.spinup_tau = 1.5;
    s.trajectory.segments = {static_lead(circle.center + Vec3(2.0, 0.0, 0.0), 0.5 * M_PI, 1.0),
                             circle};
    s.exposure = {0.30, 5.0};
  } else if (name == "static_scene") {
    s.trajectory.segments = {static_lead(Vec3(0.0, 0.0, 1.5), 0.25 * M_PI, 10.0)};
    s.imu.noise_free = true;
    s.lidar.noise_free = true;
    s.imu.gyro_bias.setZero();
    s.imu.accel_bias.setZero();
  } else if (name == "single_wall") {
    TextureSpec tex;
    tex.kind = TextureSpec::Kind::kNoise;
    tex.period = 0.35;
    tex.base = 120.0;
    tex.amplitude = 58.0;
    tex.seed = seed * 16 + 7;
    s.world.rects.push_back(
        make_wall({10.0, 4.0, 2.0}, {0.0, -1.0, 0.0}, {0.0, 0.0, 1.0}, {18.0, 4.0}, tex));
    TrajectorySegment line;
    line.kind = TrajectorySegment::Kind::kLine;
    line.duration = 30.0;
    line.start_position = Vec3(0.0, 0.0, 1.5);
    line.velocity = Vec3(0.5, 0.0, 0.0);
    line.base_yaw = 0.5 * M_PI;  // facing the wall while sliding along it
    s.trajectory.segments = {static_lead(line.start_position, line.base_yaw, 1.0), line};
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "'");
  }
  return s;
}

/// Renders the scenario into the on-disk dataset layout.
inline void write_scenario_dataset(const Scenario& s, const fs::path& dir) {
  fs::create_directories(dir / "lidar");
  fs::create_directories(dir / "images");

  write_calib(s.calib, dir / "calib.txt");
  const auto imu_stream = simulate_imu(s.trajectory, s.imu);
  write_imu_csv(imu_stream, dir / "imu.csv");

  const double duration = s.trajectory.duration();
  const double frame_dt = 1.0 / s.trajectory.frame_rate;
  const int frames = static_cast<int>(std::floor(duration / frame_dt + 1e-9));

  std::vector<TrajectoryRecord> gt;
  std::ofstream expo(dir / "gt_exposure.csv");
  expo << "t,factor\n" << std::setprecision(12);

  for (int k = 0; k < frames; ++k) {
    const double t_end = (k + 1) * frame_dt;
    const double t_begin = k * frame_dt;
    char name[32];
    std::snprintf(name, sizeof(name), "%06d", k);

    const auto scan = simulate_lidar_scan(s.world, s.trajectory, s.calib.extrinsics.lidar_to_imu,
                                          t_begin, t_end, s.lidar);
    write_lidar_csv(scan, dir / "lidar" / (std::string(name) + ".csv"));

    const PoseSample pose = s.trajectory.sample(t_end);
    const RigidTransform body{pose.rotation, pose.position};
    const RigidTransform cam_to_world = body * s.calib.extrinsics.imu_to_camera.inverse();
    const double factor = s.exposure.factor(t_end);
    const Image img = render_image(s.world, cam_to_world, s.calib.camera, factor);
    write_pgm(img, t_end, dir / "images" / (std::string(name) + ".pgm"));

    TrajectoryRecord r;
    r.timestamp = t_end;
    r.position = pose.position;
    r.orientation = Eigen::Quaterniond(pose.rotation);
    gt.push_back(r);
    expo << t_end << "," << factor << "\n";
  }
  write_tum(gt, dir / "gt_traj.txt");

  std::ofstream planes(dir / "gt_planes.csv");
  planes << "nx,ny,nz,cx,cy,cz,ex,ey\n" << std::setprecision(12);
  for (const auto& r : s.world.rects) {
    const Vec3 n = r.normal();
    planes << n.x() << "," << n.y() << "," << n.z() << "," << r.pose.translation.x() << ","
           << r.pose.translation.y() << "," << r.pose.translation.z() << "," << r.half_extent.x()
           << "," << r.half_extent.y() << "\n";
  }
}

}  // namespace sim
}  // namespace livo
