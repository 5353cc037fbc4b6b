// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "livo/geometry.hpp"

namespace livo {

struct VisualMapPoint;

/// Integer lattice coordinates of a root voxel: key = floor(p / root_size).
struct VoxelKey {
  std::int32_t x = 0, y = 0, z = 0;

  bool operator==(const VoxelKey&) const = default;

  static VoxelKey from_position(const Vec3& p, double root_size) {
    return {static_cast<std::int32_t>(std::floor(p.x() / root_size)),
            static_cast<std::int32_t>(std::floor(p.y() / root_size)),
            static_cast<std::int32_t>(std::floor(p.z() / root_size))};
  }

  Vec3 center(double root_size) const {
    return {(x + 0.5) * root_size, (y + 0.5) * root_size, (z + 0.5) * root_size};
  }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = static_cast<std::uint32_t>(k.x) * 0x9e3779b97f4a7c15ull;
    h ^= static_cast<std::uint32_t>(k.y) * 0xc2b2ae3d27d4eb4full + (h << 6);
    h ^= static_cast<std::uint32_t>(k.z) * 0x165667b19e3779f9ull + (h >> 3);
    return static_cast<std::size_t>(h);
  }
};

/// Fitted local plane. param_cov is the 6x6 covariance of (normal, center)
/// propagated to first order from the per-point covariances.
struct PlaneFeature {
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Eigen::Matrix<double, 6, 6> param_cov = Eigen::Matrix<double, 6, 6>::Zero();
  int point_count = 0;
  bool mature = false;
  Vec3 eigenvalues = Vec3::Zero();  // of the point scatter, ascending
};

struct PlaneCriteria {
  int min_points = 10;
  double min_eigenvalue = 1e-4;  // m^2, smallest scatter eigenvalue
  double eigenvalue_ratio = 0.1;  // lambda_min / lambda_mid
};

/// SVD/eigendecomposition plane fit over global-frame points. The scatter is
/// the covariance of the points (normalized by N); the normal is its least
/// eigenvector, oriented along orient_hint when one is given.
inline std::optional<PlaneFeature> fit_plane(const std::vector<Vec3>& points,
                                             const std::vector<Mat3>& point_covs,
                                             const PlaneCriteria& criteria,
                                             const Vec3* orient_hint = nullptr) {
  const int n = static_cast<int>(points.size());
  if (n < criteria.min_points) return std::nullopt;

  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= n;

  Mat3 scatter = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    scatter += d * d.transpose();
  }
  scatter /= n;

  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const Vec3 evals = es.eigenvalues();
  if (evals(1) < 1e-12) return std::nullopt;  // rank < 2
  if (evals(0) >= criteria.min_eigenvalue) return std::nullopt;
  if (evals(0) / evals(1) >= criteria.eigenvalue_ratio) return std::nullopt;

  PlaneFeature plane;
  plane.center = mean;
  plane.normal = es.eigenvectors().col(0);
  plane.eigenvalues = evals;
  plane.point_count = n;
  if (orient_hint && plane.normal.dot(*orient_hint) < 0.0) plane.normal = -plane.normal;

  // First-order propagation of the per-point covariances into (n, q).
  const Mat3 u = es.eigenvectors();
  const int m = 0;  // normal = least eigenvector
  for (int j = 0; j < n; ++j) {
    Eigen::Matrix<double, 6, 3> jac = Eigen::Matrix<double, 6, 3>::Zero();
    const Vec3 d = points[j] - mean;
    Mat3 dn = Mat3::Zero();
    for (int k = 1; k < 3; ++k) {
      const double denom = n * (evals(m) - evals(k));
      if (std::abs(denom) < 1e-12) continue;
      dn += (u.col(k) / denom) *
            (d.dot(u.col(m)) * u.col(k).transpose() + d.dot(u.col(k)) * u.col(m).transpose());
    }
    if (orient_hint && es.eigenvectors().col(0).dot(*orient_hint) < 0.0) dn = -dn;
    jac.topRows<3>() = dn;
    jac.bottomRows<3>() = Mat3::Identity() / n;
    const Mat3 cov = j < static_cast<int>(point_covs.size()) ? point_covs[j] : Mat3::Zero();
    plane.param_cov += jac * cov * jac.transpose();
  }
  return plane;
}

struct MapPointSample {
  Vec3 position = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
  std::uint64_t seq = 0;  // global insertion order, defines "most recent"
  std::array<std::uint8_t, 3> color{128, 128, 128};
};

struct LeafVoxel {
  enum class Status { kGrowing, kPlanar, kSubdivided, kDiscarded };

  int depth = 0;
  Vec3 center = Vec3::Zero();
  double size = 0.0;
  Status status = Status::kGrowing;
  std::optional<PlaneFeature> plane;
  std::vector<MapPointSample> points;
  std::array<std::unique_ptr<LeafVoxel>, 8> children;
  // Visual landmark references with their (immutable) positions cached so the
  // octree can re-home them on subdivision without the full definition.
  std::vector<std::pair<Vec3, std::shared_ptr<VisualMapPoint>>> visual_points;

  bool dirty = false;
  Vec3 prev_normal = Vec3::Zero();
  bool has_prev_normal = false;
  int stable_updates = 0;

  int child_index(const Vec3& p) const {
    return (p.x() >= center.x() ? 1 : 0) | (p.y() >= center.y() ? 2 : 0) |
           (p.z() >= center.z() ? 4 : 0);
  }

  Vec3 child_center(int idx) const {
    const double q = size * 0.25;
    return center + Vec3((idx & 1) ? q : -q, (idx & 2) ? q : -q, (idx & 4) ? q : -q);
  }
};

struct VoxelMapConfig {
  double root_size = 0.5;
  int max_depth = 3;
  PlaneCriteria plane_criteria;
  double mature_angle_deg = 0.5;
  int mature_min_points = 30;
  int mature_stable_updates = 2;
  int point_cap = 200;
  int mature_keep_points = 50;
  double window_length = 100.0;
  double window_slide = 20.0;
  double detection_radius = 30.0;
};

struct MapStats {
  std::size_t root_voxels = 0;
  std::size_t plane_count = 0;
  std::size_t mature_planes = 0;
  std::size_t stored_points = 0;
};

/// Hash-indexed root voxels, each an octree of plane-bearing leaves, inside
/// a sliding cubic local window.
class VoxelMap {
 public:
  explicit VoxelMap(VoxelMapConfig cfg = {}) : cfg_(cfg) {}

  const VoxelMapConfig& config() const { return cfg_; }

  /// Routes global-frame points into voxels, creating roots as needed.
  /// Points outside the local window are counted and dropped. Returns the
  /// touched root keys in first-touch order.
  std::vector<VoxelKey> insert_scan(const std::vector<Vec3>& points,
                                    const std::vector<Mat3>& covs,
                                    const std::vector<std::array<std::uint8_t, 3>>* colors =
                                        nullptr) {
    std::vector<VoxelKey> touched;
    std::unordered_set<VoxelKey, VoxelKeyHash> touched_set;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Vec3& p = points[i];
      if (window_initialized_ &&
          ((p - window_center_).cwiseAbs().maxCoeff() > 0.5 * cfg_.window_length)) {
        ++dropped_outside_window_;
        continue;
      }
      const VoxelKey key = VoxelKey::from_position(p, cfg_.root_size);
      auto [it, created] = roots_.try_emplace(key, nullptr);
      if (created) {
        it->second = std::make_unique<LeafVoxel>();
        it->second->center = key.center(cfg_.root_size);
        it->second->size = cfg_.root_size;
      }
      MapPointSample s;
      s.position = p;
      s.cov = i < covs.size() ? covs[i] : Mat3::Zero();
      s.seq = next_seq_++;
      if (colors && i < colors->size()) s.color = (*colors)[i];
      if (route_point(*it->second, s) && touched_set.insert(key).second) {
        touched.push_back(key);
      }
    }
    return touched;
  }

  /// Initializes the local window around the sensor's start position.
  void init_window(const Vec3& sensor_position) {
    if (!window_initialized_) {
      window_center_ = sensor_position;
      window_initialized_ = true;
    }
  }

  /// Refits planes in the touched voxels, subdividing where the points stop
  /// being planar and freezing planes whose normals have converged.
  void update_geometry(const std::vector<VoxelKey>& touched, const Vec3& sensor_position) {
    for (const auto& key : touched) {
      auto it = roots_.find(key);
      if (it == roots_.end()) continue;
      refresh(*it->second, sensor_position);
    }
  }

  /// Recenters the window when the detection sphere touches the cube and
  /// evicts voxels that left it.
  void slide_window(const Vec3& lidar_position) {
    if (!window_initialized_) return;
    const double half = 0.5 * cfg_.window_length;
    bool moved = false;
    for (int axis = 0; axis < 3; ++axis) {
      int guard = 0;
      while (lidar_position[axis] + cfg_.detection_radius > window_center_[axis] + half &&
             guard++ < 1024) {
        window_center_[axis] += cfg_.window_slide;
        moved = true;
      }
      guard = 0;
      while (lidar_position[axis] - cfg_.detection_radius < window_center_[axis] - half &&
             guard++ < 1024) {
        window_center_[axis] -= cfg_.window_slide;
        moved = true;
      }
    }
    if (!moved) return;
    for (auto it = roots_.begin(); it != roots_.end();) {
      const Vec3 c = it->first.center(cfg_.root_size);
      if ((c - window_center_).cwiseAbs().maxCoeff() > half) {
        ++evicted_voxels_;
        it = roots_.erase(it);
      } else {
        ++it;
      }
    }
  }

  struct QueryHit {
    const LeafVoxel* voxel = nullptr;
    const PlaneFeature* plane = nullptr;
  };

  /// Deepest voxel containing the point that holds a plane.
  std::optional<QueryHit> query(const Vec3& p) const {
    const auto it = roots_.find(VoxelKey::from_position(p, cfg_.root_size));
    if (it == roots_.end()) return std::nullopt;
    const LeafVoxel* node = it->second.get();
    const LeafVoxel* best = nullptr;
    while (node) {
      if (node->status == LeafVoxel::Status::kPlanar && node->plane) best = node;
      if (node->status != LeafVoxel::Status::kSubdivided) break;
      node = node->children[node->child_index(p)].get();
    }
    if (!best) return std::nullopt;
    return QueryHit{best, &*best->plane};
  }

  /// Deepest plane-bearing voxel for visual point attachment.
  LeafVoxel* leaf_for_attach(const Vec3& p) {
    auto it = roots_.find(VoxelKey::from_position(p, cfg_.root_size));
    if (it == roots_.end()) return nullptr;
    LeafVoxel* node = it->second.get();
    LeafVoxel* best = nullptr;
    while (node) {
      if (node->status == LeafVoxel::Status::kPlanar && node->plane) best = node;
      if (node->status != LeafVoxel::Status::kSubdivided) break;
      node = node->children[node->child_index(p)].get();
    }
    return best;
  }

  const LeafVoxel* root_at(const VoxelKey& key) const {
    auto it = roots_.find(key);
    return it == roots_.end() ? nullptr : it->second.get();
  }

  bool contains_root(const VoxelKey& key) const { return roots_.count(key) > 0; }

  const std::unordered_map<VoxelKey, std::unique_ptr<LeafVoxel>, VoxelKeyHash>& roots() const {
    return roots_;
  }

  const Vec3& window_center() const { return window_center_; }
  std::size_t dropped_outside_window() const { return dropped_outside_window_; }
  std::size_t evicted_voxels() const { return evicted_voxels_; }
  std::size_t discarded_at_max_depth() const { return discarded_at_max_depth_; }
  std::size_t discarded_on_mature() const { return discarded_on_mature_; }

  MapStats stats() const {
    MapStats s;
    s.root_voxels = roots_.size();
    for (const auto& [key, root] : roots_) accumulate_stats(*root, s);
    return s;
  }

  template <class Fn>
  void for_each_leaf(Fn&& fn) const {
    for (const auto& [key, root] : roots_) walk(*root, fn);
  }

  template <class Fn>
  void for_each_leaf_mut(Fn&& fn) {
    for (auto& [key, root] : roots_) walk_mut(*root, fn);
  }

 private:
  bool route_point(LeafVoxel& root, const MapPointSample& s) {
    LeafVoxel* node = &root;
    while (node->status == LeafVoxel::Status::kSubdivided) {
      node = node->children[node->child_index(s.position)].get();
    }
    if (node->status == LeafVoxel::Status::kDiscarded) {
      ++discarded_at_max_depth_;
      return false;
    }
    if (node->plane && node->plane->mature) {
      ++discarded_on_mature_;
      return false;
    }
    node->points.push_back(s);
    node->dirty = true;
    return true;
  }

  void refresh(LeafVoxel& v, const Vec3& sensor_position) {
    if (v.status == LeafVoxel::Status::kSubdivided) {
      for (auto& c : v.children) {
        if (c && c->dirty) refresh(*c, sensor_position);
      }
      v.dirty = false;
      return;
    }
    v.dirty = false;
    if (v.status == LeafVoxel::Status::kDiscarded) return;
    if (v.plane && v.plane->mature) return;
    if (static_cast<int>(v.points.size()) < cfg_.plane_criteria.min_points) return;

    std::vector<Vec3> pts(v.points.size());
    std::vector<Mat3> covs(v.points.size());
    for (std::size_t i = 0; i < v.points.size(); ++i) {
      pts[i] = v.points[i].position;
      covs[i] = v.points[i].cov;
    }
    const Vec3 hint = v.has_prev_normal ? v.prev_normal : Vec3(sensor_position - v.center);
    auto fitted = fit_plane(pts, covs, cfg_.plane_criteria, &hint);

    if (fitted) {
      if (v.has_prev_normal) {
        const double cosang = std::clamp(fitted->normal.dot(v.prev_normal), -1.0, 1.0);
        const double ang_deg = std::acos(cosang) * 180.0 / M_PI;
        if (ang_deg < cfg_.mature_angle_deg &&
            static_cast<int>(v.points.size()) >= cfg_.mature_min_points) {
          ++v.stable_updates;
        } else {
          v.stable_updates = 0;
        }
      }
      v.prev_normal = fitted->normal;
      v.has_prev_normal = true;
      v.status = LeafVoxel::Status::kPlanar;
      v.plane = std::move(*fitted);
      if (v.stable_updates >= cfg_.mature_stable_updates) {
        v.plane->mature = true;
        trim_recent(v.points, cfg_.mature_keep_points);
      } else if (static_cast<int>(v.points.size()) > cfg_.point_cap) {
        trim_recent(v.points, cfg_.point_cap);
      }
      return;
    }

    if (v.depth >= cfg_.max_depth) {
      v.status = LeafVoxel::Status::kDiscarded;
      v.plane.reset();
      v.points.clear();
      v.points.shrink_to_fit();
      ++discarded_at_max_depth_;
      return;
    }

    // Not planar: split into octants and re-fit the children.
    v.status = LeafVoxel::Status::kSubdivided;
    v.plane.reset();
    v.has_prev_normal = false;
    v.stable_updates = 0;
    for (int i = 0; i < 8; ++i) {
      v.children[i] = std::make_unique<LeafVoxel>();
      v.children[i]->depth = v.depth + 1;
      v.children[i]->center = v.child_center(i);
      v.children[i]->size = v.size * 0.5;
    }
    for (auto& s : v.points) {
      auto& child = *v.children[v.child_index(s.position)];
      child.points.push_back(std::move(s));
      child.dirty = true;
    }
    v.points.clear();
    v.points.shrink_to_fit();
    for (auto& vp : v.visual_points) {
      v.children[v.child_index(vp.first)]->visual_points.push_back(std::move(vp));
    }
    v.visual_points.clear();
    for (auto& c : v.children) {
      if (c->dirty) refresh(*c, sensor_position);
    }
  }

  static void trim_recent(std::vector<MapPointSample>& points, int keep) {
    if (static_cast<int>(points.size()) <= keep) return;
    std::sort(points.begin(), points.end(),
              [](const MapPointSample& a, const MapPointSample& b) { return a.seq < b.seq; });
    points.erase(points.begin(), points.end() - keep);
  }

  static void accumulate_stats(const LeafVoxel& v, MapStats& s) {
    if (v.status == LeafVoxel::Status::kSubdivided) {
      for (const auto& c : v.children) {
        if (c) accumulate_stats(*c, s);
      }
      return;
    }
    s.stored_points += v.points.size();
    if (v.status == LeafVoxel::Status::kPlanar && v.plane) {
      ++s.plane_count;
      if (v.plane->mature) ++s.mature_planes;
    }
  }

  template <class Fn>
  static void walk(const LeafVoxel& v, Fn& fn) {
    if (v.status == LeafVoxel::Status::kSubdivided) {
      for (const auto& c : v.children) {
        if (c) walk(*c, fn);
      }
      return;
    }
    fn(v);
  }

  template <class Fn>
  static void walk_mut(LeafVoxel& v, Fn& fn) {
    if (v.status == LeafVoxel::Status::kSubdivided) {
      for (auto& c : v.children) {
        if (c) walk_mut(*c, fn);
      }
      return;
    }
    fn(v);
  }

  VoxelMapConfig cfg_;
  std::unordered_map<VoxelKey, std::unique_ptr<LeafVoxel>, VoxelKeyHash> roots_;
  Vec3 window_center_ = Vec3::Zero();
  bool window_initialized_ = false;
  std::uint64_t next_seq_ = 0;
  std::size_t dropped_outside_window_ = 0;
  std::size_t evicted_voxels_ = 0;
  std::size_t discarded_at_max_depth_ = 0;
  std::size_t discarded_on_mature_ = 0;
};

}  // namespace livo
