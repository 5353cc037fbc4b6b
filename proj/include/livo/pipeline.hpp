// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "livo/dataset.hpp"
#include "livo/esikf.hpp"
#include "livo/lidar_measurement.hpp"
#include "livo/metrics.hpp"
#include "livo/patch_map.hpp"
#include "livo/propagation.hpp"
#include "livo/visual_measurement.hpp"

namespace livo {

struct FrameDiagnostics {
  int frame = 0;
  double timestamp = 0.0;
  double lidar_ms = 0.0;
  double visual_ms = 0.0;
  double total_ms = 0.0;
  int lidar_rows = 0;
  int visual_points = 0;
  int lidar_iterations = 0;
  int visual_iterations = 0;
  double lidar_rms = 0.0;
  double visual_rms = 0.0;
  double inv_exposure = 1.0;
  int raycast_recalled = 0;
  int new_visual_points = 0;
};

/// The odometry engine: propagate, compensate, LiDAR update, map update,
/// visual update over the pyramid, visual map maintenance, window slide.
class OdometryPipeline {
 public:
  OdometryPipeline(const RunConfig& cfg, const Calibration& calib)
      : cfg_(cfg), calib_(calib) {
    cfg_.validate();
    VoxelMapConfig mc;
    mc.root_size = cfg.voxel_size;
    mc.max_depth = cfg.octree_max_depth;
    mc.plane_criteria.min_points = cfg.min_plane_points;
    mc.plane_criteria.min_eigenvalue = cfg.plane_min_eigenvalue;
    mc.plane_criteria.eigenvalue_ratio = cfg.plane_eigenvalue_ratio;
    mc.mature_angle_deg = cfg.mature_angle_deg;
    mc.mature_min_points = cfg.mature_min_points;
    mc.point_cap = cfg.voxel_point_cap;
    mc.window_length = cfg.window_length;
    mc.window_slide = cfg.window_slide;
    mc.detection_radius = cfg.detection_radius;
    map_ = std::make_unique<VoxelMap>(mc);

    noise_.gyro_noise_density = cfg.gyro_noise_density;
    noise_.accel_noise_density = cfg.accel_noise_density;
    noise_.gyro_bias_walk = cfg.gyro_bias_walk;
    noise_.accel_bias_walk = cfg.accel_bias_walk;
    noise_.exposure_walk = cfg.exposure_walk;

    lidar_noise_.range_sigma = cfg.lidar_range_sigma;
    lidar_noise_.bearing_sigma = cfg.lidar_bearing_sigma_deg * M_PI / 180.0;
    lidar_noise_.beam_divergence = cfg.beam_divergence_deg * M_PI / 180.0;

    if (cfg.normal_refinement) {
      refine_worker_ = std::make_unique<NormalRefineWorker>(calib.camera);
    }
  }

  const NavState& state() const { return state_; }
  const StateCovariance& covariance() const { return cov_; }
  const VoxelMap& map() const { return *map_; }
  VoxelMap& map_mut() { return *map_; }
  const std::vector<TrajectoryRecord>& trajectory() const { return trajectory_; }
  const std::vector<FrameDiagnostics>& diagnostics() const { return diagnostics_; }

  /// Processes one synchronized bundle. Bundles must arrive in time order.
  void process(const FrameBundle& bundle) {
    using Clock = std::chrono::steady_clock;
    const auto t_start = Clock::now();
    FrameDiagnostics diag;
    diag.frame = frame_index_;
    diag.timestamp = bundle.image_time;

    if (refine_worker_) refine_worker_->apply_results();

    if (!initialized_) {
      accumulate_init(bundle);
      if (init_elapsed() >= cfg_.init_stationary_sec) finish_init();
      if (!initialized_) {
        // Still gathering stationary samples; emit the datum pose.
        record_pose(bundle.image_time);
        ++frame_index_;
        return;
      }
    }

    // Forward propagation over the bundle's IMU span.
    PropagationResult prop{state_, cov_};
    if (bundle.imu_span.size() >= 2) {
      prop = forward_propagate(state_, cov_, bundle.imu_span, noise_);
    }

    // Motion compensation to the scan-end time.
    auto compensated =
        backward_compensate(bundle.scan, prop.state, bundle.image_time, bundle.imu_span,
                            calib_.extrinsics);
    const std::vector<LidarPoint> scan =
        temporal_downsample(compensated.points, cfg_.temporal_downsample);

    // --- LiDAR stage ---------------------------------------------------
    const auto t_lidar0 = Clock::now();
    std::vector<Vec3> scan_positions(scan.size());
    for (std::size_t i = 0; i < scan.size(); ++i) scan_positions[i] = scan[i].position;

    int lidar_rows = 0;
    auto lidar_provider = [&](const FilterState& x) {
      MeasurementBatch b = build_lidar_batch(scan_positions, x.nav, *map_, calib_.extrinsics,
                                             lidar_noise_, cfg_.gate_sigma);
      lidar_rows = static_cast<int>(b.rows());
      return b;
    };
    auto lidar_res = iterated_update<FilterState>({prop.state}, prop.covariance, lidar_provider,
                                                  cfg_.lidar_max_iters, cfg_.eps);
    NavState x_lidar = lidar_res.state.nav;
    StateCovariance p_lidar = lidar_res.covariance;
    diag.lidar_rows = lidar_rows;
    diag.lidar_iterations = lidar_res.report.iterations;
    diag.lidar_rms =
        lidar_res.report.residual_rms.empty() ? 0.0 : lidar_res.report.residual_rms.back();

    // Register the scan and update map geometry.
    const Vec3 lidar_pos = (x_lidar.pose() * calib_.extrinsics.lidar_to_imu).translation;
    map_->init_window(lidar_pos);
    std::vector<Vec3> global_points(scan.size());
    const RigidTransform imu_pose = x_lidar.pose();
    for (std::size_t i = 0; i < scan.size(); ++i) {
      global_points[i] = imu_pose * (calib_.extrinsics.lidar_to_imu * scan[i].position);
    }
    const auto covs = scan_point_covariances(scan, x_lidar, calib_.extrinsics, lidar_noise_);
    const auto colors = point_colors(scan, global_points, bundle, x_lidar);
    const auto touched = map_->insert_scan(global_points, covs, &colors);
    map_->update_geometry(touched, lidar_pos);
    diag.lidar_ms = ms_since(t_lidar0);

    // --- Visual stage ----------------------------------------------------
    const auto t_visual0 = Clock::now();
    NavState x_final = x_lidar;
    StateCovariance p_final = p_lidar;
    VisualSubmap submap;
    if (cfg_.visual_enabled && bundle.image) {
      const RigidTransform cam_from_global =
          calib_.extrinsics.imu_to_camera * x_lidar.pose().inverse();
      const auto keys = select_visible_voxels(*map_, global_points, previous_submap_points_,
                                              cam_from_global, calib_.camera);
      submap = collect_submap(*map_, keys, cam_from_global, calib_.camera);
      if (cfg_.raycast_enabled) {
        RaycastConfig rc;
        rc.d_min = cfg_.raycast_d_min;
        rc.d_max = cfg_.raycast_d_max;
        rc.samples_per_ray = cfg_.raycast_samples;
        rc.grid_cell_px = cfg_.grid_cell_px;
        auto recalled = raycast_on_demand(*map_, cam_from_global, calib_.camera, submap, rc);
        diag.raycast_recalled = static_cast<int>(recalled.size());
        for (auto& e : recalled) submap.entries.push_back(std::move(e));
      }
      const auto raster =
          DepthRaster::build(global_points, cam_from_global, calib_.camera, 4);
      OutlierConfig oc;
      oc.grid_cell_px = cfg_.grid_cell_px;
      oc.occlusion_margin = cfg_.occlusion_margin;
      oc.discontinuity_range = cfg_.discontinuity_range;
      oc.max_view_angle_deg = cfg_.view_angle_max_deg;
      reject_outliers(submap, raster, cam_from_global, calib_.camera, oc);
      diag.visual_points = static_cast<int>(submap.retained_count());

      PhotometricConfig pc;
      pc.pixel_noise_var = cfg_.photometric_noise;
      pc.estimate_exposure = cfg_.exposure_estimation && !first_processed_frame_;

      // Coarse-to-fine pyramid; every level re-seeds from the previous one
      // and reuses the LiDAR-stage prior covariance. The last level with
      // measurements provides the posterior covariance.
      FilterState x_level{x_lidar};
      for (int level = kPyramidLevels - 1; level >= 0; --level) {
        PhotometricProvider provider(&submap, bundle.image, &calib_.camera, &calib_.extrinsics,
                                     level, pc);
        auto res = iterated_update<FilterState>(x_level, p_lidar, std::ref(provider),
                                                cfg_.visual_max_iters, cfg_.eps);
        x_level = res.state;
        if (res.report.iterations > 0) {
          p_final = res.covariance;
          diag.visual_iterations += res.report.iterations;
          diag.visual_rms = res.report.residual_rms.back();
        }
      }
      x_final = x_level.nav;
    }

    // Exposure anchoring: the first processed frame pins tau = 1 exactly.
    if (first_processed_frame_) {
      x_final.inv_exposure = 1.0;
      p_final.row(kIdxTau).setZero();
      p_final.col(kIdxTau).setZero();
      first_processed_frame_ = false;
    }
    if (!cfg_.exposure_estimation) x_final.inv_exposure = 1.0;

    state_ = x_final;
    cov_ = p_final;
    symmetrize(cov_);
    diag.inv_exposure = state_.inv_exposure;

    // Visual map maintenance with the final pose.
    if (cfg_.visual_enabled && bundle.image) {
      const RigidTransform cam_from_global =
          calib_.extrinsics.imu_to_camera * state_.pose().inverse();
      GenerateConfig gc;
      gc.grid_cell_px = cfg_.grid_cell_px;
      gc.min_patch_interval_frames = cfg_.new_patch_interval_frames;
      gc.min_patch_drift_px = cfg_.new_patch_drift_px;
      const auto stats = generate_visual_points(*map_, touched, bundle.image, calib_.camera,
                                                cam_from_global, state_.inv_exposure,
                                                frame_index_, next_point_id_, gc);
      diag.new_visual_points = stats.new_points;
      maintain_references(touched);

      previous_submap_points_.clear();
      for (const auto& e : submap.entries) {
        if (e.rejected == RejectReason::kNone) {
          previous_submap_points_.push_back(e.point->position);
        }
      }
      if (cfg_.debug_overlay) overlays_.push_back(make_overlay(bundle, submap));
    }
    diag.visual_ms = ms_since(t_visual0);

    map_->slide_window((state_.pose() * calib_.extrinsics.lidar_to_imu).translation);

    record_pose(bundle.image_time);
    diag.total_ms = ms_since(t_start);
    diagnostics_.push_back(diag);
    ++frame_index_;
  }

  void flush_refinement_sync() {
    if (!refine_worker_) return;
    refine_worker_->process_pending_sync();
    refine_worker_->apply_results();
  }

  const std::vector<Image>& overlays() const { return overlays_; }

 private:
  static double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  }

  void accumulate_init(const FrameBundle& bundle) {
    for (const auto& s : bundle.imu_span) {
      if (!init_samples_ || s.timestamp > init_last_t_) {
        init_accel_sum_ += s.accel;
        init_gyro_sum_ += s.gyro;
        ++init_samples_;
        init_last_t_ = s.timestamp;
        if (init_samples_ == 1) init_first_t_ = s.timestamp;
      }
    }
  }

  double init_elapsed() const { return init_samples_ ? init_last_t_ - init_first_t_ : 0.0; }

  void finish_init() {
    // Global frame = first body frame: identity attitude, gravity measured
    // by the stationary accelerometer mean, gyro bias by the gyro mean.
    const Vec3 mean_accel = init_accel_sum_ / init_samples_;
    const Vec3 mean_gyro = init_gyro_sum_ / init_samples_;
    state_ = NavState{};
    state_.gravity = -mean_accel;
    state_.gyro_bias = mean_gyro;
    state_.inv_exposure = 1.0;

    cov_.setZero();
    cov_.block<3, 3>(kIdxRot, kIdxRot) = Mat3::Identity() * 1e-9;
    cov_.block<3, 3>(kIdxPos, kIdxPos) = Mat3::Identity() * 1e-9;
    cov_.block<3, 3>(kIdxVel, kIdxVel) = Mat3::Identity() * 1e-2;
    cov_.block<3, 3>(kIdxBg, kIdxBg) = Mat3::Identity() * 1e-4;
    cov_.block<3, 3>(kIdxBa, kIdxBa) = Mat3::Identity() * 2.5e-3;
    cov_.block<3, 3>(kIdxGrav, kIdxGrav) = Mat3::Identity() * 1e-2;
    cov_(kIdxTau, kIdxTau) = 1e-12;
    initialized_ = true;
  }

  void record_pose(double t) {
    TrajectoryRecord r;
    r.timestamp = t;
    r.position = state_.position;
    r.orientation = Eigen::Quaterniond(state_.rotation);
    trajectory_.push_back(r);
  }

  std::vector<std::array<std::uint8_t, 3>> point_colors(const std::vector<LidarPoint>& scan,
                                                        const std::vector<Vec3>& global_points,
                                                        const FrameBundle& bundle,
                                                        const NavState& x) const {
    std::vector<std::array<std::uint8_t, 3>> colors(scan.size());
    const bool have_image = cfg_.visual_enabled && bundle.image != nullptr;
    RigidTransform cam_from_global;
    if (have_image) cam_from_global = calib_.extrinsics.imu_to_camera * x.pose().inverse();
    for (std::size_t i = 0; i < scan.size(); ++i) {
      double gray = scan[i].intensity;
      if (have_image) {
        const Vec3 p_cam = cam_from_global * global_points[i];
        if (p_cam.z() > 0.05) {
          const Vec2 px = calib_.camera.project(p_cam);
          if (calib_.camera.in_image(px, 1.0)) {
            // Exposure-normalized gray: tau * I brings frames to the datum
            // exposure of frame 0.
            gray = x.inv_exposure * bundle.image->bilinear(px.x(), px.y());
          }
        }
      }
      const auto v = static_cast<std::uint8_t>(std::clamp(gray, 0.0, 255.0));
      colors[i] = {v, v, v};
    }
    return colors;
  }

  void maintain_references(const std::vector<VoxelKey>& touched) {
    for (const auto& key : touched) {
      const LeafVoxel* root = map_->root_at(key);
      if (!root) continue;
      std::vector<const LeafVoxel*> stack{root};
      while (!stack.empty()) {
        const LeafVoxel* v = stack.back();
        stack.pop_back();
        if (v->status == LeafVoxel::Status::kSubdivided) {
          for (const auto& c : v->children) {
            if (c) stack.push_back(c.get());
          }
          continue;
        }
        for (const auto& [pos, vp] : v->visual_points) {
          if (!vp || vp->normal_converged || vp->patches.size() < 2) continue;
          if (vp->claimed.load(std::memory_order_acquire)) continue;
          update_reference(*vp);
          if (refine_worker_ &&
              static_cast<int>(vp->patches.size()) > RefineConfig{}.min_target_patches) {
            refine_worker_->enqueue(vp);
          }
        }
      }
    }
  }

  Image make_overlay(const FrameBundle& bundle, const VisualSubmap& submap) const {
    Image img = *bundle.image;  // grayscale copy; accepted points brightened,
                                // rejected darkened (single-channel overlay)
    auto mark = [&](const Vec2& px, std::uint8_t value) {
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int x = static_cast<int>(px.x()) + dx;
          const int y = static_cast<int>(px.y()) + dy;
          if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.at(x, y) = value;
        }
      }
    };
    for (const auto& e : submap.entries) {
      mark(e.projection, e.rejected == RejectReason::kNone ? 255 : 0);
    }
    return img;
  }

  RunConfig cfg_;
  Calibration calib_;
  NoiseConfig noise_;
  LidarNoiseModel lidar_noise_;
  std::unique_ptr<VoxelMap> map_;
  std::unique_ptr<NormalRefineWorker> refine_worker_;

  NavState state_;
  StateCovariance cov_ = StateCovariance::Identity() * 1e-9;
  bool initialized_ = false;
  bool first_processed_frame_ = true;
  int frame_index_ = 0;
  std::uint64_t next_point_id_ = 1;
  Vec3 init_accel_sum_ = Vec3::Zero();
  Vec3 init_gyro_sum_ = Vec3::Zero();
  int init_samples_ = 0;
  double init_first_t_ = 0.0;
  double init_last_t_ = 0.0;

  std::vector<Vec3> previous_submap_points_;
  std::vector<TrajectoryRecord> trajectory_;
  std::vector<FrameDiagnostics> diagnostics_;
  std::vector<Image> overlays_;
};

// ---------------------------------------------------------------------------
// Dataset-driven run

struct RunOutputs {
  std::vector<TrajectoryRecord> trajectory;
  std::vector<FrameDiagnostics> diagnostics;
  MapStats map_stats;
};

/// Splits the dataset streams into synchronized bundles. Each bundle's IMU
/// span is seeded with the latest sample at or before the previous frame
/// time and closed with a zero-order-hold sample at the frame time.
inline std::vector<FrameBundle> assemble_bundles(const DatasetIndex& ds) {
  std::vector<double> camera_times;
  camera_times.reserve(ds.frames.size());
  for (const auto& f : ds.frames) camera_times.push_back(f.timestamp);

  std::vector<LidarPoint> stream;
  for (const auto& f : ds.frames) {
    auto pts = read_lidar_csv(f.lidar_path);
    stream.insert(stream.end(), pts.begin(), pts.end());
  }
  const double first_start = camera_times.size() > 1
                                 ? camera_times[0] - (camera_times[1] - camera_times[0])
                                 : camera_times.empty() ? 0.0 : camera_times[0] - 0.1;
  auto recombined = recombine_scans(stream, camera_times, first_start);

  std::vector<FrameBundle> bundles(ds.frames.size());
  std::size_t imu_cursor = 0;
  double prev_t = first_start;
  for (std::size_t k = 0; k < ds.frames.size(); ++k) {
    FrameBundle& b = bundles[k];
    b.scan = std::move(recombined.scans[k]);
    b.image_time = ds.frames[k].timestamp;
    double img_t = 0.0;
    b.image = std::make_shared<Image>(read_pgm(ds.frames[k].image_path, &img_t));

    // Seed sample at or before the interval start.
    while (imu_cursor + 1 < ds.imu.size() && ds.imu[imu_cursor + 1].timestamp <= prev_t) {
      ++imu_cursor;
    }
    std::size_t i = imu_cursor;
    if (i < ds.imu.size() && ds.imu[i].timestamp < prev_t) {
      ImuSample seed = ds.imu[i];
      seed.timestamp = prev_t;
      b.imu_span.push_back(seed);
      ++i;
    }
    for (; i < ds.imu.size() && ds.imu[i].timestamp <= b.image_time + 1e-12; ++i) {
      b.imu_span.push_back(ds.imu[i]);
    }
    if (!b.imu_span.empty() && b.imu_span.back().timestamp < b.image_time - 1e-9) {
      ImuSample tail = b.imu_span.back();
      tail.timestamp = b.image_time;
      b.imu_span.push_back(tail);
    }
    prev_t = b.image_time;
  }
  return bundles;
}

inline RunOutputs run_odometry(const fs::path& dataset_dir, const RunConfig& cfg,
                               const fs::path& out_dir) {
  const DatasetIndex ds = open_dataset(dataset_dir);
  const auto bundles = assemble_bundles(ds);

  fs::create_directories(out_dir);
  OdometryPipeline pipeline(cfg, ds.calib);
  for (const auto& b : bundles) pipeline.process(b);
  if (cfg.normal_refinement) pipeline.flush_refinement_sync();

  RunOutputs out;
  out.trajectory = pipeline.trajectory();
  out.diagnostics = pipeline.diagnostics();
  out.map_stats = pipeline.map().stats();

  write_tum(out.trajectory, out_dir / "trajectory.txt");
  {
    // Cloud export in insertion order.
    std::vector<std::pair<std::uint64_t, CloudPoint>> pts;
    pipeline.map().for_each_leaf([&](const LeafVoxel& v) {
      for (const auto& s : v.points) pts.push_back({s.seq, {s.position, s.color}});
    });
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<CloudPoint> cloud;
    cloud.reserve(pts.size());
    for (auto& p : pts) cloud.push_back(p.second);
    write_ply(cloud, out_dir / "cloud.ply");
  }
  write_map_snapshot(pipeline.map(), out_dir / "map_points.ply", out_dir / "map_summary.txt");

  // Diagnostics CSVs.
  {
    std::ofstream timing(out_dir / "timing.csv");
    timing << "frame,t,lidar_ms,visual_ms,total_ms,lidar_rows,visual_points,raycast_recalled\n";
    for (const auto& d : out.diagnostics) {
      timing << d.frame << "," << d.timestamp << "," << d.lidar_ms << "," << d.visual_ms << ","
             << d.total_ms << "," << d.lidar_rows << "," << d.visual_points << ","
             << d.raycast_recalled << "\n";
    }
  }
  {
    std::ofstream expo(out_dir / "exposure.csv");
    const bool have_truth = !ds.gt_exposure.empty();
    expo << "t,inv_exposure_est" << (have_truth ? ",true_factor,true_rel_inv_exposure" : "")
         << "\n";
    double factor0 = have_truth ? ds.gt_exposure.front().second : 1.0;
    std::size_t gi = 0;
    for (const auto& d : out.diagnostics) {
      expo << d.timestamp << "," << d.inv_exposure;
      if (have_truth) {
        while (gi + 1 < ds.gt_exposure.size() &&
               std::abs(ds.gt_exposure[gi + 1].first - d.timestamp) <=
                   std::abs(ds.gt_exposure[gi].first - d.timestamp)) {
          ++gi;
        }
        const double factor = ds.gt_exposure[gi].second;
        expo << "," << factor << "," << factor0 / factor;
      }
      expo << "\n";
    }
  }
  {
    std::ofstream res(out_dir / "residuals.csv");
    res << "frame,t,lidar_rms,visual_rms,lidar_iterations,visual_iterations\n";
    for (const auto& d : out.diagnostics) {
      res << d.frame << "," << d.timestamp << "," << d.lidar_rms << "," << d.visual_rms << ","
          << d.lidar_iterations << "," << d.visual_iterations << "\n";
    }
  }
  if (cfg.debug_overlay) {
    fs::create_directories(out_dir / "overlays");
    int i = 0;
    for (const auto& img : pipeline.overlays()) {
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.pgm", i++);
      write_pgm(img, 0.0, out_dir / "overlays" / name);
    }
  }
  return out;
}

/// Plot files mirroring the diagnostics CSVs.
inline void emit_diagnostics_plots(const RunOutputs& run,
                                   const std::vector<std::pair<double, double>>& gt_exposure,
                                   const fs::path& out_dir) {
  PlotSeries lidar_t{"lidar_ms", {}, {}, {200, 60, 60}};
  PlotSeries visual_t{"visual_ms", {}, {}, {60, 60, 200}};
  PlotSeries expo_est{"inv_exposure_est", {}, {}, {200, 60, 60}};
  PlotSeries expo_true{"true_rel_inv_exposure", {}, {}, {60, 160, 60}};
  PlotSeries rms_l{"lidar_rms", {}, {}, {200, 60, 60}};
  PlotSeries rms_v{"visual_rms", {}, {}, {60, 60, 200}};
  const double factor0 = gt_exposure.empty() ? 1.0 : gt_exposure.front().second;
  std::size_t gi = 0;
  for (const auto& d : run.diagnostics) {
    lidar_t.x.push_back(d.frame);
    lidar_t.y.push_back(d.lidar_ms);
    visual_t.x.push_back(d.frame);
    visual_t.y.push_back(d.visual_ms);
    expo_est.x.push_back(d.timestamp);
    expo_est.y.push_back(d.inv_exposure);
    if (!gt_exposure.empty()) {
      while (gi + 1 < gt_exposure.size() &&
             std::abs(gt_exposure[gi + 1].first - d.timestamp) <=
                 std::abs(gt_exposure[gi].first - d.timestamp)) {
        ++gi;
      }
      expo_true.x.push_back(d.timestamp);
      expo_true.y.push_back(factor0 / gt_exposure[gi].second);
    }
    rms_l.x.push_back(d.frame);
    rms_l.y.push_back(d.lidar_rms);
    rms_v.x.push_back(d.frame);
    rms_v.y.push_back(d.visual_rms);
  }
  write_plot_ppm({lidar_t, visual_t}, out_dir / "timing.ppm");
  if (gt_exposure.empty()) {
    write_plot_ppm({expo_est}, out_dir / "exposure.ppm");
  } else {
    write_plot_ppm({expo_est, expo_true}, out_dir / "exposure.ppm");
  }
  write_plot_ppm({rms_l, rms_v}, out_dir / "residuals.ppm");
}

}  // namespace livo
