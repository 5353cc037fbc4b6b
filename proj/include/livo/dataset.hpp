// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "livo/camera.hpp"
#include "livo/image.hpp"
#include "livo/state.hpp"
#include "livo/voxel_map.hpp"

namespace livo {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration file: `key = value` lines, '#' comments, unknown keys are
// an error.

struct RunConfig {
  // Voxel map
  double voxel_size = 0.5;
  int octree_max_depth = 3;
  int min_plane_points = 10;
  double plane_min_eigenvalue = 1e-4;
  double plane_eigenvalue_ratio = 0.1;
  double mature_angle_deg = 0.5;
  int mature_min_points = 30;
  int voxel_point_cap = 200;
  double window_length = 100.0;
  double window_slide = 20.0;
  double detection_radius = 30.0;
  // Patches / visual
  int patch_size = 8;
  int refine_patch_size = 11;
  int pyramid_levels = 3;
  int grid_cell_px = 30;
  int new_patch_interval_frames = 20;
  double new_patch_drift_px = 40.0;
  double view_angle_max_deg = 80.0;
  double occlusion_margin = 0.3;
  double discontinuity_range = 1.5;
  double photometric_noise = 100.0;
  double raycast_d_min = 0.5;
  double raycast_d_max = 10.0;
  int raycast_samples = 40;
  // LiDAR noise
  double lidar_range_sigma = 0.02;
  double lidar_bearing_sigma_deg = 0.05;
  double beam_divergence_deg = 0.15;
  double gate_sigma = 3.0;
  int temporal_downsample = 3;
  // IMU noise densities
  double gyro_noise_density = 3e-4;
  double accel_noise_density = 2e-3;
  double gyro_bias_walk = 1e-5;
  double accel_bias_walk = 1e-4;
  double exposure_walk = 5e-2;
  // Filter
  int lidar_max_iters = 5;
  int visual_max_iters = 3;
  double eps = 1e-3;
  double init_stationary_sec = 0.5;
  // Feature toggles
  bool exposure_estimation = true;
  bool normal_refinement = false;
  bool visual_enabled = true;
  bool raycast_enabled = true;
  bool debug_overlay = false;

  void validate() const {
    if (patch_size != 8 || refine_patch_size != 11 || pyramid_levels != 3) {
      throw std::invalid_argument(
          "config: patch_size/refine_patch_size/pyramid_levels support only 8/11/3");
    }
    if (raycast_d_min <= 0.0 || raycast_d_min >= raycast_d_max) {
      throw std::invalid_argument("config: need 0 < raycast_d_min < raycast_d_max");
    }
    if (window_length <= 2.0 * detection_radius) {
      throw std::invalid_argument("config: window_length must exceed the detection diameter");
    }
  }
};

namespace detail {

template <class T>
struct ConfigField {
  const char* name;
  T RunConfig::*member;
};

inline constexpr ConfigField<double> kDoubleFields[] = {
    {"voxel_size", &RunConfig::voxel_size},
    {"plane_min_eigenvalue", &RunConfig::plane_min_eigenvalue},
    {"plane_eigenvalue_ratio", &RunConfig::plane_eigenvalue_ratio},
    {"mature_angle_deg", &RunConfig::mature_angle_deg},
    {"window_length", &RunConfig::window_length},
    {"window_slide", &RunConfig::window_slide},
    {"detection_radius", &RunConfig::detection_radius},
    {"new_patch_drift_px", &RunConfig::new_patch_drift_px},
    {"view_angle_max_deg", &RunConfig::view_angle_max_deg},
    {"occlusion_margin", &RunConfig::occlusion_margin},
    {"discontinuity_range", &RunConfig::discontinuity_range},
    {"photometric_noise", &RunConfig::photometric_noise},
    {"raycast_d_min", &RunConfig::raycast_d_min},
    {"raycast_d_max", &RunConfig::raycast_d_max},
    {"lidar_range_sigma", &RunConfig::lidar_range_sigma},
    {"lidar_bearing_sigma_deg", &RunConfig::lidar_bearing_sigma_deg},
    {"beam_divergence_deg", &RunConfig::beam_divergence_deg},
    {"gate_sigma", &RunConfig::gate_sigma},
    {"gyro_noise_density", &RunConfig::gyro_noise_density},
    {"accel_noise_density", &RunConfig::accel_noise_density},
    {"gyro_bias_walk", &RunConfig::gyro_bias_walk},
    {"accel_bias_walk", &RunConfig::accel_bias_walk},
    {"exposure_walk", &RunConfig::exposure_walk},
    {"eps", &RunConfig::eps},
    {"init_stationary_sec", &RunConfig::init_stationary_sec},
};

inline constexpr ConfigField<int> kIntFields[] = {
    {"octree_max_depth", &RunConfig::octree_max_depth},
    {"min_plane_points", &RunConfig::min_plane_points},
    {"mature_min_points", &RunConfig::mature_min_points},
    {"voxel_point_cap", &RunConfig::voxel_point_cap},
    {"patch_size", &RunConfig::patch_size},
    {"refine_patch_size", &RunConfig::refine_patch_size},
    {"pyramid_levels", &RunConfig::pyramid_levels},
    {"grid_cell_px", &RunConfig::grid_cell_px},
    {"new_patch_interval_frames", &RunConfig::new_patch_interval_frames},
    {"raycast_samples", &RunConfig::raycast_samples},
    {"temporal_downsample", &RunConfig::temporal_downsample},
    {"lidar_max_iters", &RunConfig::lidar_max_iters},
    {"visual_max_iters", &RunConfig::visual_max_iters},
};

inline constexpr ConfigField<bool> kBoolFields[] = {
    {"exposure_estimation", &RunConfig::exposure_estimation},
    {"normal_refinement", &RunConfig::normal_refinement},
    {"visual_enabled", &RunConfig::visual_enabled},
    {"raycast_enabled", &RunConfig::raycast_enabled},
    {"debug_overlay", &RunConfig::debug_overlay},
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline bool apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::kDoubleFields) {
    if (key == f.name) {
      cfg.*(f.member) = std::stod(value);
      return true;
    }
  }
  for (const auto& f : detail::kIntFields) {
    if (key == f.name) {
      cfg.*(f.member) = std::stoi(value);
      return true;
    }
  }
  for (const auto& f : detail::kBoolFields) {
    if (key == f.name) {
      if (value == "true" || value == "1") {
        cfg.*(f.member) = true;
      } else if (value == "false" || value == "0") {
        cfg.*(f.member) = false;
      } else {
        throw std::invalid_argument("config: boolean key '" + key + "' got '" + value + "'");
      }
      return true;
    }
  }
  return false;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!apply_config_entry(cfg, key, value)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline void save_config(const RunConfig& cfg, const fs::path& path) {
  std::ofstream out(path);
  out << std::setprecision(17);
  for (const auto& f : detail::kDoubleFields) out << f.name << " = " << cfg.*(f.member) << "\n";
  for (const auto& f : detail::kIntFields) out << f.name << " = " << cfg.*(f.member) << "\n";
  for (const auto& f : detail::kBoolFields) {
    out << f.name << " = " << (cfg.*(f.member) ? "true" : "false") << "\n";
  }
}

// ---------------------------------------------------------------------------
// PGM images with the frame timestamp carried in a header comment.

inline void write_pgm(const Image& img, double timestamp, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n# t " << std::setprecision(12) << std::fixed << timestamp << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
}

inline Image read_pgm(const fs::path& path, double* timestamp = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error(path.string() + ": not a binary PGM");
  if (timestamp) *timestamp = 0.0;
  int fields[3];
  int got = 0;
  std::string tok;
  while (got < 3 && in >> tok) {
    if (tok == "#") {
      std::string rest;
      std::getline(in, rest);
      std::istringstream cs(rest);
      std::string key;
      double val;
      if (cs >> key >> val && key == "t" && timestamp) *timestamp = val;
      continue;
    }
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    fields[got++] = std::stoi(tok);
  }
  if (got != 3 || fields[2] != 255) throw std::runtime_error(path.string() + ": bad PGM header");
  Image img(fields[0], fields[1]);
  in.get();  // single whitespace after maxval
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated PGM payload");
  return img;
}

// ---------------------------------------------------------------------------
// Trajectories (TUM: t x y z qx qy qz qw)

struct TrajectoryRecord {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

inline void write_tum(const std::vector<TrajectoryRecord>& traj, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(9) << std::fixed;
  for (const auto& r : traj) {
    out << r.timestamp << " " << r.position.x() << " " << r.position.y() << " "
        << r.position.z() << " " << r.orientation.x() << " " << r.orientation.y() << " "
        << r.orientation.z() << " " << r.orientation.w() << "\n";
  }
}

inline std::vector<TrajectoryRecord> read_tum(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory " + path.string());
  std::vector<TrajectoryRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    TrajectoryRecord r;
    double qx, qy, qz, qw;
    if (!(ss >> r.timestamp >> r.position.x() >> r.position.y() >> r.position.z() >> qx >> qy >>
          qz >> qw)) {
      throw std::runtime_error(path.string() + ": malformed trajectory line: " + line);
    }
    r.orientation = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV streams

inline void write_imu_csv(const std::vector<ImuSample>& samples, const fs::path& path) {
  std::ofstream out(path);
  out << "t,wx,wy,wz,ax,ay,az\n" << std::setprecision(12);
  for (const auto& s : samples) {
    out << s.timestamp << "," << s.gyro.x() << "," << s.gyro.y() << "," << s.gyro.z() << ","
        << s.accel.x() << "," << s.accel.y() << "," << s.accel.z() << "\n";
  }
}

inline std::vector<double> split_csv_line(const std::string& line) {
  std::vector<double> vals;
  std::istringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  return vals;
}

inline std::vector<ImuSample> read_imu_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<ImuSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
    const auto v = split_csv_line(line);
    if (v.size() != 7) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 7 IMU columns");
    }
    out.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

inline void write_lidar_csv(const std::vector<LidarPoint>& points, const fs::path& path) {
  std::ofstream out(path);
  out << "t,x,y,z,intensity\n" << std::setprecision(12);
  for (const auto& p : points) {
    out << p.timestamp << "," << p.position.x() << "," << p.position.y() << ","
        << p.position.z() << "," << p.intensity << "\n";
  }
}

inline std::vector<LidarPoint> read_lidar_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<LidarPoint> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
    const auto v = split_csv_line(line);
    if (v.size() < 4) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected t,x,y,z[,intensity]");
    }
    LidarPoint p;
    p.timestamp = v[0];
    p.position = Vec3(v[1], v[2], v[3]);
    p.intensity = v.size() > 4 ? static_cast<float>(v[4]) : 0.0f;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

struct Calibration {
  PinholeCamera camera;
  Extrinsics extrinsics;
};

inline void write_calib(const Calibration& calib, const fs::path& path) {
  std::ofstream out(path);
  out << std::setprecision(17);
  out << "fx " << calib.camera.fx << "\nfy " << calib.camera.fy << "\ncx " << calib.camera.cx
      << "\ncy " << calib.camera.cy << "\nwidth " << calib.camera.width << "\nheight "
      << calib.camera.height << "\n";
  auto emit = [&](const char* key, const RigidTransform& t) {
    const Eigen::Quaterniond q(t.rotation);
    out << key << " " << t.translation.x() << " " << t.translation.y() << " "
        << t.translation.z() << " " << q.x() << " " << q.y() << " " << q.z() << " " << q.w()
        << "\n";
  };
  emit("T_imu_lidar", calib.extrinsics.lidar_to_imu);
  emit("T_cam_imu", calib.extrinsics.imu_to_camera);
}

inline Calibration read_calib(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open calibration " + path.string());
  Calibration calib;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto parse_transform = [&](RigidTransform& t) {
      double tx, ty, tz, qx, qy, qz, qw;
      if (!(ss >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": expected 'x y z qx qy qz qw'");
      }
      t.translation = Vec3(tx, ty, tz);
      t.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
    };
    if (key == "fx") ss >> calib.camera.fx;
    else if (key == "fy") ss >> calib.camera.fy;
    else if (key == "cx") ss >> calib.camera.cx;
    else if (key == "cy") ss >> calib.camera.cy;
    else if (key == "width") ss >> calib.camera.width;
    else if (key == "height") ss >> calib.camera.height;
    else if (key == "T_imu_lidar") parse_transform(calib.extrinsics.lidar_to_imu);
    else if (key == "T_cam_imu") parse_transform(calib.extrinsics.imu_to_camera);
    else {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": unknown calibration key '" + key + "'");
    }
  }
  calib.camera.validate();
  return calib;
}

// ---------------------------------------------------------------------------
// ASCII PLY (x y z r g b)

struct CloudPoint {
  Vec3 position;
  std::array<std::uint8_t, 3> rgb;
};

inline void write_ply(const std::vector<CloudPoint>& cloud, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out << std::setprecision(8);
  for (const auto& p : cloud) {
    out << p.position.x() << " " << p.position.y() << " " << p.position.z() << " "
        << static_cast<int>(p.rgb[0]) << " " << static_cast<int>(p.rgb[1]) << " "
        << static_cast<int>(p.rgb[2]) << "\n";
  }
}

/// Map snapshot: every stored point with its color, plus a text summary.
inline void write_map_snapshot(const VoxelMap& map, const fs::path& ply_path,
                               const fs::path& summary_path) {
  std::vector<CloudPoint> cloud;
  map.for_each_leaf([&](const LeafVoxel& v) {
    for (const auto& s : v.points) cloud.push_back({s.position, s.color});
  });
  write_ply(cloud, ply_path);
  const MapStats stats = map.stats();
  std::ofstream out(summary_path);
  out << "root_voxels " << stats.root_voxels << "\n"
      << "plane_count " << stats.plane_count << "\n"
      << "mature_fraction "
      << (stats.plane_count ? static_cast<double>(stats.mature_planes) / stats.plane_count : 0.0)
      << "\n"
      << "stored_points " << stats.stored_points << "\n";
}

// ---------------------------------------------------------------------------
// Dataset directory

struct DatasetFrame {
  double timestamp = 0.0;
  fs::path lidar_path;
  fs::path image_path;
};

struct DatasetIndex {
  fs::path root;
  Calibration calib;
  std::vector<ImuSample> imu;
  std::vector<DatasetFrame> frames;
  std::vector<TrajectoryRecord> gt_trajectory;   // optional, empty if absent
  std::vector<std::pair<double, double>> gt_exposure;  // (t, factor), optional
};

inline DatasetIndex open_dataset(const fs::path& root) {
  DatasetIndex ds;
  ds.root = root;
  if (!fs::exists(root / "calib.txt")) {
    throw std::runtime_error("dataset: missing " + (root / "calib.txt").string());
  }
  ds.calib = read_calib(root / "calib.txt");
  ds.imu = read_imu_csv(root / "imu.csv");

  for (int k = 0;; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d", k);
    const fs::path lidar = root / "lidar" / (std::string(name) + ".csv");
    const fs::path image = root / "images" / (std::string(name) + ".pgm");
    if (!fs::exists(lidar) && !fs::exists(image)) break;
    if (!fs::exists(image)) {
      throw std::runtime_error("dataset: missing image file " + image.string());
    }
    if (!fs::exists(lidar)) {
      throw std::runtime_error("dataset: missing lidar file " + lidar.string());
    }
    DatasetFrame f;
    f.lidar_path = lidar;
    f.image_path = image;
    // Header-only read for the timestamp; pixel payload is loaded lazily.
    read_pgm(image, &f.timestamp);
    ds.frames.push_back(f);
  }
  if (ds.frames.empty()) throw std::runtime_error("dataset: no frames under " + root.string());

  if (fs::exists(root / "gt_traj.txt")) ds.gt_trajectory = read_tum(root / "gt_traj.txt");
  if (fs::exists(root / "gt_exposure.csv")) {
    std::ifstream in(root / "gt_exposure.csv");
    std::string line;
    while (std::getline(in, line)) {
      line = detail::trim(line);
      if (line.empty() || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
      const auto v = split_csv_line(line);
      if (v.size() >= 2) ds.gt_exposure.emplace_back(v[0], v[1]);
    }
  }
  return ds;
}

}  // namespace livo
