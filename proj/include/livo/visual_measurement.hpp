// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "livo/esikf.hpp"
#include "livo/lidar_measurement.hpp"
#include "livo/patch.hpp"
#include "livo/voxel_map.hpp"

namespace livo {

struct RaycastConfig {
  double d_min = 0.5;
  double d_max = 10.0;
  int samples_per_ray = 40;
  int grid_cell_px = 30;
};

enum class RejectReason {
  kNone,
  kCellOccupied,
  kOccluded,
  kDepthDiscontinuous,
  kViewAngleReference,
  kViewAngleCurrent,
  kMargin,
};

struct SubmapEntry {
  std::shared_ptr<VisualMapPoint> point;
  Vec2 projection = Vec2::Zero();  // in the current frame
  double depth = 0.0;              // z in the current camera
  bool from_raycast = false;
  RejectReason rejected = RejectReason::kNone;
};

/// Visual map points visible in the current frame, with per-point flags.
struct VisualSubmap {
  std::vector<SubmapEntry> entries;

  std::size_t retained_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) {
      if (e.rejected == RejectReason::kNone) ++n;
    }
    return n;
  }
};

/// Voxels hit by the current scan plus voxels of previously visible points,
/// kept when their center passes the camera frustum check.
inline std::vector<VoxelKey> select_visible_voxels(const VoxelMap& map,
                                                   const std::vector<Vec3>& scan_global,
                                                   const std::vector<Vec3>& previous_points,
                                                   const RigidTransform& cam_from_global,
                                                   const PinholeCamera& cam) {
  std::vector<VoxelKey> keys;
  std::unordered_set<VoxelKey, VoxelKeyHash> seen;
  const double root = map.config().root_size;
  auto consider = [&](const Vec3& p) {
    const VoxelKey key = VoxelKey::from_position(p, root);
    if (!seen.insert(key).second) return;
    if (!map.contains_root(key)) return;
    const Vec3 center_cam = cam_from_global * key.center(root);
    if (center_cam.z() <= 0.0) return;
    const double margin = -cam.fx * (0.87 * root) / center_cam.z();
    if (!cam.in_image(cam.project(center_cam), margin)) return;
    keys.push_back(key);
  };
  for (const auto& p : scan_global) consider(p);
  for (const auto& p : previous_points) consider(p);
  return keys;
}

/// Gathers the visual points stored under the given roots that project into
/// the image with the patch margin.
inline VisualSubmap collect_submap(const VoxelMap& map, const std::vector<VoxelKey>& keys,
                                   const RigidTransform& cam_from_global,
                                   const PinholeCamera& cam) {
  VisualSubmap submap;
  std::unordered_set<std::uint64_t> ids;
  for (const auto& key : keys) {
    const LeafVoxel* root = map.root_at(key);
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
        if (!vp || vp->patches.empty()) continue;
        if (!ids.insert(vp->id).second) continue;
        const Vec3 p_cam = cam_from_global * pos;
        if (p_cam.z() < 0.05) continue;
        const Vec2 px = cam.project(p_cam);
        if (!cam.in_image(px, kPatchMargin)) continue;
        submap.entries.push_back({vp, px, p_cam.z(), false, RejectReason::kNone});
      }
    }
  }
  std::sort(submap.entries.begin(), submap.entries.end(),
            [](const SubmapEntry& a, const SubmapEntry& b) { return a.point->id < b.point->id; });
  return submap;
}

namespace detail {

inline int grid_cell(const Vec2& px, int cell_px, int cells_x) {
  return static_cast<int>(px.y()) / cell_px * cells_x + static_cast<int>(px.x()) / cell_px;
}

}  // namespace detail

/// For each 30x30 image cell left unoccupied by the voxel-query submap, a
/// ray is marched backward through the map from d_min to d_max; the first
/// voxel whose visual points project into the casting cell contributes them
/// and ends the ray.
inline std::vector<SubmapEntry> raycast_on_demand(const VoxelMap& map,
                                                  const RigidTransform& cam_from_global,
                                                  const PinholeCamera& cam,
                                                  const VisualSubmap& current,
                                                  const RaycastConfig& cfg) {
  const int cells_x = (cam.width + cfg.grid_cell_px - 1) / cfg.grid_cell_px;
  const int cells_y = (cam.height + cfg.grid_cell_px - 1) / cfg.grid_cell_px;
  std::unordered_set<int> occupied;
  std::unordered_set<std::uint64_t> ids;
  for (const auto& e : current.entries) {
    occupied.insert(detail::grid_cell(e.projection, cfg.grid_cell_px, cells_x));
    ids.insert(e.point->id);
  }

  const RigidTransform global_from_cam = cam_from_global.inverse();
  std::vector<SubmapEntry> recalled;
  for (int cy = 0; cy < cells_y; ++cy) {
    for (int cx = 0; cx < cells_x; ++cx) {
      const int cell = cy * cells_x + cx;
      if (occupied.count(cell)) continue;
      const Vec2 center_px((cx + 0.5) * cfg.grid_cell_px, (cy + 0.5) * cfg.grid_cell_px);
      if (!cam.in_image(center_px)) continue;
      const Vec3 dir = cam.unproject(center_px);  // unit depth
      bool hit = false;
      for (int s = 0; s < cfg.samples_per_ray && !hit; ++s) {
        const double depth =
            cfg.d_min + (cfg.d_max - cfg.d_min) * s / std::max(1, cfg.samples_per_ray - 1);
        const Vec3 sample_global = global_from_cam * (dir * depth);
        const LeafVoxel* root =
            map.root_at(VoxelKey::from_position(sample_global, map.config().root_size));
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
            if (!vp || vp->patches.empty()) continue;
            const Vec3 p_cam = cam_from_global * pos;
            if (p_cam.z() < 0.05) continue;
            const Vec2 px = cam.project(p_cam);
            if (!cam.in_image(px, kPatchMargin)) continue;
            if (detail::grid_cell(px, cfg.grid_cell_px, cells_x) != cell) continue;
            if (!ids.insert(vp->id).second) continue;
            recalled.push_back({vp, px, p_cam.z(), true, RejectReason::kNone});
            hit = true;
          }
        }
      }
    }
  }
  std::sort(recalled.begin(), recalled.end(),
            [](const SubmapEntry& a, const SubmapEntry& b) { return a.point->id < b.point->id; });
  return recalled;
}

struct OutlierConfig {
  int grid_cell_px = 30;
  int depth_raster_downsample = 4;  // depth map at 1/4 image resolution
  int depth_neighborhood = 9;       // cells, centered
  double occlusion_margin = 0.3;    // m behind the local surface
  double discontinuity_range = 1.5;  // m of neighborhood depth spread
  double max_view_angle_deg = 80.0;
};

/// Scan depth raster at reduced resolution; per cell the nearest return.
struct DepthRaster {
  int cells_x = 0, cells_y = 0, cell_px = 4;
  std::vector<float> depth;  // +inf where empty

  static DepthRaster build(const std::vector<Vec3>& scan_global,
                           const RigidTransform& cam_from_global, const PinholeCamera& cam,
                           int cell_px) {
    DepthRaster r;
    r.cell_px = cell_px;
    r.cells_x = (cam.width + cell_px - 1) / cell_px;
    r.cells_y = (cam.height + cell_px - 1) / cell_px;
    r.depth.assign(static_cast<std::size_t>(r.cells_x) * r.cells_y,
                   std::numeric_limits<float>::infinity());
    for (const auto& p : scan_global) {
      const Vec3 p_cam = cam_from_global * p;
      if (p_cam.z() <= 0.05) continue;
      const Vec2 px = cam.project(p_cam);
      if (!cam.in_image(px)) continue;
      const int cx = static_cast<int>(px.x()) / cell_px;
      const int cy = static_cast<int>(px.y()) / cell_px;
      float& d = r.depth[cy * r.cells_x + cx];
      d = std::min(d, static_cast<float>(p_cam.z()));
    }
    return r;
  }

  /// Min and max depth over the n x n cell neighborhood with data.
  std::pair<float, float> neighborhood_range(const Vec2& px, int n) const {
    const int cx = static_cast<int>(px.x()) / cell_px;
    const int cy = static_cast<int>(px.y()) / cell_px;
    const int h = n / 2;
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (int y = std::max(0, cy - h); y <= std::min(cells_y - 1, cy + h); ++y) {
      for (int x = std::max(0, cx - h); x <= std::min(cells_x - 1, cx + h); ++x) {
        const float d = depth[y * cells_x + x];
        if (std::isfinite(d)) {
          lo = std::min(lo, d);
          hi = std::max(hi, d);
        }
      }
    }
    return {lo, hi};
  }
};

/// Tags occluded, depth-discontinuous and steep-view points; keeps at most
/// the lowest-depth point per image cell. Idempotent.
inline void reject_outliers(VisualSubmap& submap, const DepthRaster& raster,
                            const RigidTransform& cam_from_global, const PinholeCamera& cam,
                            const OutlierConfig& cfg = {}) {
  const int cells_x = (cam.width + cfg.grid_cell_px - 1) / cfg.grid_cell_px;
  const Vec3 cam_pos = cam_from_global.inverse().translation;
  const double cos_limit = std::cos(cfg.max_view_angle_deg * M_PI / 180.0);

  std::unordered_map<int, SubmapEntry*> cell_best;
  for (auto& e : submap.entries) {
    if (e.rejected != RejectReason::kNone) continue;
    if (!cam.in_image(e.projection, kPatchMargin)) {
      e.rejected = RejectReason::kMargin;
      continue;
    }
    const int cell = detail::grid_cell(e.projection, cfg.grid_cell_px, cells_x);
    auto [it, inserted] = cell_best.try_emplace(cell, &e);
    if (!inserted) {
      if (e.depth < it->second->depth) {
        it->second->rejected = RejectReason::kCellOccupied;
        it->second = &e;
      } else {
        e.rejected = RejectReason::kCellOccupied;
      }
    }
  }

  for (auto& e : submap.entries) {
    if (e.rejected != RejectReason::kNone) continue;
    const auto [lo, hi] = raster.neighborhood_range(e.projection, cfg.depth_neighborhood);
    if (std::isfinite(lo)) {
      if (e.depth > lo + cfg.occlusion_margin) {
        e.rejected = RejectReason::kOccluded;
        continue;
      }
      if (hi - lo > cfg.discontinuity_range) {
        e.rejected = RejectReason::kDepthDiscontinuous;
        continue;
      }
    }
    const VisualMapPoint& vp = *e.point;
    const Vec3 to_ref = vp.reference().camera_position() - vp.position;
    const double cos_ref =
        std::abs(vp.normal_global.dot(to_ref)) / std::max(to_ref.norm(), 1e-12);
    if (cos_ref < cos_limit) {
      e.rejected = RejectReason::kViewAngleReference;
      continue;
    }
    const Vec3 to_cur = cam_pos - vp.position;
    const double cos_cur =
        std::abs(vp.normal_global.dot(to_cur)) / std::max(to_cur.norm(), 1e-12);
    if (cos_cur < cos_limit) {
      e.rejected = RejectReason::kViewAngleCurrent;
      continue;
    }
  }
}

enum class WarpDirection { kRefToCur, kCurToRef };

/// First-order pixel map induced by the plane homography between the
/// reference capture and the current view, linearized at the patch center.
inline Mat2 affine_warp(const RigidTransform& ref_cam_from_global,
                        const RigidTransform& cur_cam_from_global, const Vec3& point_global,
                        const Vec3& normal_global, const PinholeCamera& cam,
                        WarpDirection direction) {
  const Vec3 p_ref = ref_cam_from_global * point_global;
  const Vec3 n_ref = ref_cam_from_global.rotation * normal_global;
  const double dot = n_ref.dot(p_ref);
  if (std::abs(dot) < 1e-12) {
    throw std::invalid_argument("affine_warp: plane passes through the reference optical center");
  }
  const Vec3 m = n_ref / dot;
  const RigidTransform rel = cur_cam_from_global * ref_cam_from_global.inverse();
  const Mat3 k_mat = cam.intrinsic_matrix();
  const Mat3 g = k_mat * (rel.rotation + rel.translation * m.transpose()) * k_mat.inverse();

  const Vec2 u_ref = cam.project(p_ref);
  const Vec3 y = g * Vec3(u_ref.x(), u_ref.y(), 1.0);
  const double iz = 1.0 / y.z();
  const double x0 = y.x() * iz;
  const double x1 = y.y() * iz;
  Mat2 a;
  a(0, 0) = (g(0, 0) - x0 * g(2, 0)) * iz;
  a(0, 1) = (g(0, 1) - x0 * g(2, 1)) * iz;
  a(1, 0) = (g(1, 0) - x1 * g(2, 0)) * iz;
  a(1, 1) = (g(1, 1) - x1 * g(2, 1)) * iz;
  if (direction == WarpDirection::kRefToCur) return a;
  return a.inverse();
}

struct PhotometricConfig {
  double pixel_noise_var = 100.0;
  bool estimate_exposure = true;
};

/// Sparse-direct photometric measurement batches, one instance per pyramid
/// level. Reference-side pose Jacobians use the inverse-compositional
/// placement and are computed once, on the first call at this level.
class PhotometricProvider {
 public:
  PhotometricProvider(const VisualSubmap* submap, std::shared_ptr<const Image> current,
                      const PinholeCamera* cam, const Extrinsics* ext, int level,
                      const PhotometricConfig& cfg)
      : submap_(submap), current_(std::move(current)), cam_(cam), ext_(ext), level_(level),
        cfg_(cfg) {}

  MeasurementBatch operator()(const FilterState& x) {
    if (!built_) build(x);
    return assemble(x);
  }

  int active_points() const { return static_cast<int>(cached_.size()); }

 private:
  struct PixelRow {
    Vec2 ref_sample;   // u' + A * du, fixed per level
    double ref_value;  // raw reference image value there
    Eigen::Matrix<double, 1, 6> pose_jac;  // d r / d(rot, pos), without tau_r sign folded
    Vec2 cur_offset;   // du at this level
  };
  struct CachedPoint {
    const SubmapEntry* entry;
    double tau_ref;
    std::vector<PixelRow> pixels;
  };

  void build(const FilterState& x) {
    built_ = true;
    const int stride = 1 << level_;
    for (const auto& e : submap_->entries) {
      if (e.rejected != RejectReason::kNone) continue;
      const VisualMapPoint& vp = *e.point;
      const Patch& ref = vp.reference();
      const RigidTransform cur_cam_from_global =
          ext_->imu_to_camera * x.nav.pose().inverse();
      Mat2 warp_cur_to_ref;
      try {
        warp_cur_to_ref = affine_warp(ref.cam_from_global, cur_cam_from_global, vp.position,
                                      vp.normal_global, *cam_, WarpDirection::kCurToRef);
      } catch (const std::invalid_argument&) {
        continue;
      }
      const Vec3 p_ref_cam = ref.cam_from_global * vp.position;
      if (p_ref_cam.z() < 0.05) continue;
      const Vec2 u_ref = cam_->project(p_ref_cam);
      const Eigen::Matrix<double, 2, 3> j_proj = cam_->projection_jacobian(p_ref_cam);
      const Mat3 r_rg = ref.cam_from_global.rotation;
      Eigen::Matrix<double, 3, 6> d_point;  // d(p_ref_cam)/d(rot, pos) of Exp placement
      d_point.leftCols<3>() = r_rg * (-so3::hat(vp.position));
      d_point.rightCols<3>() = r_rg;

      CachedPoint cp;
      cp.entry = &e;
      cp.tau_ref = ref.inv_exposure;
      cp.pixels.reserve(kAlignPatchSize * kAlignPatchSize);
      bool ok = true;
      for (int oy = -kAlignHalf; oy < kAlignHalf && ok; ++oy) {
        for (int ox = -kAlignHalf; ox < kAlignHalf && ok; ++ox) {
          const Vec2 du(ox * stride, oy * stride);
          const Vec2 s = u_ref + warp_cur_to_ref * du;
          if (!ref.image->contains(s.x(), s.y(), 1.0)) {
            ok = false;
            break;
          }
          double val, gx, gy;
          ref.image->bilinear_with_grad(s.x(), s.y(), val, gx, gy);
          PixelRow row;
          row.ref_sample = s;
          row.ref_value = val;
          row.pose_jac = Eigen::RowVector2d(gx, gy) * j_proj * d_point;
          row.cur_offset = du;
          cp.pixels.push_back(row);
        }
      }
      if (ok && !cp.pixels.empty()) cached_.push_back(std::move(cp));
    }
  }

  MeasurementBatch assemble(const FilterState& x) const {
    const RigidTransform cur_cam_from_global = ext_->imu_to_camera * x.nav.pose().inverse();
    const double tau_k = x.nav.inv_exposure;

    std::vector<double> z;
    std::vector<Eigen::Matrix<double, 1, kErrorDim>> rows;
    z.reserve(cached_.size() * kAlignPatchSize * kAlignPatchSize);

    for (const auto& cp : cached_) {
      const Vec3 p_cam = cur_cam_from_global * cp.entry->point->position;
      if (p_cam.z() < 0.05) continue;
      const Vec2 u_cur = cam_->project(p_cam);
      bool ok = true;
      for (const auto& px : cp.pixels) {
        const Vec2 s = u_cur + px.cur_offset;
        if (!current_->contains(s.x(), s.y(), 1.0)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      for (const auto& px : cp.pixels) {
        const Vec2 s = u_cur + px.cur_offset;
        const double cur_val = current_->bilinear(s.x(), s.y());
        Eigen::Matrix<double, 1, kErrorDim> row = Eigen::Matrix<double, 1, kErrorDim>::Zero();
        row.block<1, 6>(0, kIdxRot) = -cp.tau_ref * px.pose_jac;
        row(0, kIdxTau) = cfg_.estimate_exposure ? cur_val : 0.0;
        rows.push_back(row);
        z.push_back(tau_k * cur_val - cp.tau_ref * px.ref_value);
      }
    }

    MeasurementBatch batch;
    batch.residuals = Eigen::Map<Eigen::VectorXd>(z.data(), z.size());
    batch.jacobian.resize(rows.size(), kErrorDim);
    for (std::size_t i = 0; i < rows.size(); ++i) batch.jacobian.row(i) = rows[i];
    batch.noise_var = Eigen::VectorXd::Constant(rows.size(), cfg_.pixel_noise_var);
    return batch;
  }

  const VisualSubmap* submap_;
  std::shared_ptr<const Image> current_;
  const PinholeCamera* cam_;
  const Extrinsics* ext_;
  int level_;
  PhotometricConfig cfg_;
  bool built_ = false;
  std::vector<CachedPoint> cached_;
};

}  // namespace livo
