// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <vector>

#include "livo/patch.hpp"
#include "livo/voxel_map.hpp"

namespace livo {

/// Mean-subtracted normalized cross-correlation between two level-0 patches.
/// A flat patch carries no signal; any pairing with one scores 0.
inline double ncc(const AlignGrid& f, const AlignGrid& g) {
  const double mean_f = f.cast<double>().mean();
  const double mean_g = g.cast<double>().mean();
  double num = 0.0, den_f = 0.0, den_g = 0.0;
  for (int r = 0; r < kAlignPatchSize; ++r) {
    for (int c = 0; c < kAlignPatchSize; ++c) {
      const double df = f(r, c) - mean_f;
      const double dg = g(r, c) - mean_g;
      num += df * dg;
      den_f += df * df;
      den_g += dg * dg;
    }
  }
  if (den_f <= 0.0 || den_g <= 0.0) return 0.0;
  return num / std::sqrt(den_f * den_g);
}

/// Reference-patch score: photometric consensus with the other patches plus
/// a view-alignment term, weighted by the normal-prior confidence:
///   S = (1 - w1) mean_i NCC(f, g_i) + w1 * c,  w1 = 1 / (1 + e^{tr(Sigma_n)})
/// where c is the cosine between the normal and the patch's view direction.
inline double score_patch(const Patch& f, const std::vector<const Patch*>& others,
                          const Vec3& normal_global, const Vec3& point_position,
                          const Mat3& normal_cov) {
  if (others.empty()) throw std::invalid_argument("score_patch: needs at least one other patch");
  double ncc_sum = 0.0;
  for (const Patch* g : others) ncc_sum += ncc(f.levels[0], g->levels[0]);
  const double ncc_mean = ncc_sum / static_cast<double>(others.size());

  const Vec3 to_cam = f.camera_position() - point_position;
  const double c = normal_global.dot(to_cam) / std::max(to_cam.norm(), 1e-12);
  const double w1 = 1.0 / (1.0 + std::exp(normal_cov.trace()));
  return (1.0 - w1) * ncc_mean + w1 * std::abs(c);
}

/// Re-selects the reference patch as the score argmax; ties go to the most
/// recent capture. No-op with a single patch or a converged normal.
inline void update_reference(VisualMapPoint& point) {
  if (point.patches.size() < 2 || point.normal_converged) return;
  int best = point.reference_idx;
  double best_score = -2.0;
  for (int i = 0; i < static_cast<int>(point.patches.size()); ++i) {
    std::vector<const Patch*> others;
    others.reserve(point.patches.size() - 1);
    for (int j = 0; j < static_cast<int>(point.patches.size()); ++j) {
      if (j != i) others.push_back(&point.patches[j]);
    }
    const double s =
        score_patch(point.patches[i], others, point.normal_global, point.position,
                    point.normal_cov);
    if (s > best_score ||
        (s == best_score && point.patches[i].frame_id > point.patches[best].frame_id)) {
      best_score = s;
      best = i;
    }
  }
  point.reference_idx = best;
  point.sync_reference_normal();
}

/// 2-dof plane-normal parameterization around a reference-frame point:
///   M = n / (n^T p),  p^T M = 1,  M = B m + b,  m = (M_x, M_y).
struct NormalParam {
  Vec2 m = Vec2::Zero();
  Eigen::Matrix<double, 3, 2> basis = Eigen::Matrix<double, 3, 2>::Zero();
  Vec3 offset = Vec3::Zero();

  Vec3 to_point() const { return basis * m + offset; }
  Vec3 to_normal() const { return to_point().normalized(); }
};

inline NormalParam parameterize_normal(const Vec3& n, const Vec3& p_ref) {
  const double dot = n.dot(p_ref);
  if (std::abs(dot) < 1e-12) {
    throw std::invalid_argument("parameterize_normal: plane passes through the optical center");
  }
  if (std::abs(p_ref.z()) < 1e-12) {
    throw std::invalid_argument("parameterize_normal: reference point has zero depth");
  }
  NormalParam out;
  const Vec3 big_m = n / dot;
  out.m = big_m.head<2>();
  out.basis(0, 0) = 1.0;
  out.basis(1, 1) = 1.0;
  out.basis(2, 0) = -p_ref.x() / p_ref.z();
  out.basis(2, 1) = -p_ref.y() / p_ref.z();
  out.offset = Vec3(0.0, 0.0, 1.0 / p_ref.z());
  return out;
}

struct RefineConfig {
  int max_iterations = 20;
  double step_tolerance = 1e-4;
  int required_stable_steps = 2;
  int min_target_patches = 4;
  int max_target_patches = 8;  // most recent targets considered
  int divergence_limit = 3;    // consecutive cost increases before aborting
};

struct RefineReport {
  bool converged = false;
  bool aborted_diverged = false;
  int iterations = 0;
  int target_patches = 0;
  double angle_change_deg = 0.0;
  double final_cost = 0.0;
};

namespace detail {

struct RefineCostTerms {
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;  // rows x 2
};

/// Residuals and Jacobian of the photometric normal-refinement cost at m.
/// Each term is tau_i I_i(warp_i(u_j)) - tau_r I_r(u_j) over the reference
/// 11x11 grid, with the plane-homography warp between capture poses.
inline RefineCostTerms refine_terms(const VisualMapPoint& point,
                                    const std::vector<const Patch*>& targets,
                                    const PinholeCamera& cam, const Vec2& m_vec,
                                    const NormalParam& param, bool with_jacobian) {
  const Patch& ref = point.patches[point.reference_idx];
  const Mat3 k_mat = cam.intrinsic_matrix();
  const Mat3 k_inv = k_mat.inverse();
  const Vec3 big_m = param.basis * m_vec + param.offset;

  std::vector<double> res;
  std::vector<Eigen::Matrix<double, 1, 2>> jac;
  res.reserve(targets.size() * kRefinePatchSize * kRefinePatchSize);

  for (const Patch* tgt : targets) {
    const RigidTransform rel = tgt->cam_from_global * ref.cam_from_global.inverse();
    const Mat3 h = k_mat * (rel.rotation + rel.translation * big_m.transpose()) * k_inv;
    const Vec3 kt = k_mat * rel.translation;
    for (int oy = -kRefineHalf; oy <= kRefineHalf; ++oy) {
      for (int ox = -kRefineHalf; ox <= kRefineHalf; ++ox) {
        const Vec3 u_h(ref.anchor_px.x() + ox, ref.anchor_px.y() + oy, 1.0);
        const Vec3 y = h * u_h;
        if (y.z() < 1e-6) continue;
        const Vec2 x(y.x() / y.z(), y.y() / y.z());
        if (!tgt->image->contains(x.x(), x.y(), 2.0)) continue;
        double val, gx, gy;
        tgt->image->bilinear_with_grad(x.x(), x.y(), val, gx, gy);
        const double ref_val = ref.refine(oy + kRefineHalf, ox + kRefineHalf);
        res.push_back(tgt->inv_exposure * val - ref.inv_exposure * ref_val);
        if (with_jacobian) {
          Eigen::Matrix<double, 2, 3> j_proj;
          const double iz = 1.0 / y.z();
          j_proj << iz, 0.0, -y.x() * iz * iz, 0.0, iz, -y.y() * iz * iz;
          const Vec3 v = k_inv * u_h;
          const Eigen::Matrix<double, 1, 2> row = tgt->inv_exposure *
                                                  (Eigen::RowVector2d(gx, gy) * j_proj * kt *
                                                   v.transpose() * param.basis);
          jac.push_back(row);
        }
      }
    }
  }

  RefineCostTerms out;
  out.residuals = Eigen::Map<Eigen::VectorXd>(res.data(), res.size());
  if (with_jacobian) {
    out.jacobian.resize(jac.size(), 2);
    for (std::size_t i = 0; i < jac.size(); ++i) out.jacobian.row(i) = jac[i];
  }
  return out;
}

}  // namespace detail

struct RefineOutcome {
  RefineReport report;
  Vec3 normal_ref = Vec3::UnitZ();
  Vec3 normal_global = Vec3::UnitZ();
};

/// Gauss-Newton solve for the refined normal; does not touch the point.
inline RefineOutcome refine_normal_solve(const VisualMapPoint& point, const PinholeCamera& cam,
                                         const RefineConfig& cfg = {}) {
  RefineOutcome out;
  if (point.normal_converged || point.patches.size() < 2) return out;

  const Patch& ref = point.patches[point.reference_idx];
  const Vec3 p_ref = ref.cam_from_global * point.position;
  Vec3 n_prior = ref.cam_from_global.rotation * point.normal_global;
  if (n_prior.dot(p_ref) < 0.0) n_prior = -n_prior;

  std::vector<const Patch*> targets;
  for (int i = 0; i < static_cast<int>(point.patches.size()); ++i) {
    if (i != point.reference_idx) targets.push_back(&point.patches[i]);
  }
  std::sort(targets.begin(), targets.end(),
            [](const Patch* a, const Patch* b) { return a->frame_id > b->frame_id; });
  if (static_cast<int>(targets.size()) > cfg.max_target_patches) {
    targets.resize(cfg.max_target_patches);
  }
  out.report.target_patches = static_cast<int>(targets.size());

  NormalParam param = parameterize_normal(n_prior, p_ref);
  Vec2 m_vec = param.m;
  double prev_cost = std::numeric_limits<double>::infinity();
  int increases = 0;
  int stable = 0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const auto terms = detail::refine_terms(point, targets, cam, m_vec, param, true);
    out.report.iterations = iter + 1;
    if (terms.residuals.size() < 8) return out;  // not enough overlap
    const double cost = terms.residuals.squaredNorm();
    out.report.final_cost = cost;
    if (cost > prev_cost) {
      if (++increases >= cfg.divergence_limit) {
        out.report.aborted_diverged = true;
        return out;  // keep the prior normal, retry later
      }
    } else {
      increases = 0;
    }
    prev_cost = cost;

    const Mat2 hess = terms.jacobian.transpose() * terms.jacobian;
    const Vec2 grad = terms.jacobian.transpose() * terms.residuals;
    const Vec2 delta = -hess.ldlt().solve(grad);
    if (!delta.allFinite()) return out;
    m_vec += delta;

    stable = delta.norm() < cfg.step_tolerance ? stable + 1 : 0;
    if (stable >= cfg.required_stable_steps) {
      if (out.report.target_patches < cfg.min_target_patches) return out;
      NormalParam solved = param;
      solved.m = m_vec;
      const Vec3 n_new = solved.to_normal();
      out.report.angle_change_deg =
          std::acos(std::clamp(std::abs(n_new.dot(n_prior)), 0.0, 1.0)) * 180.0 / M_PI;
      out.normal_ref = n_new;
      out.normal_global = ref.cam_from_global.rotation.transpose() * n_new;
      out.report.converged = true;
      return out;
    }
  }
  return out;
}

/// Commits a converged refinement: freezes the normal and keeps only the
/// reference patch.
inline void commit_refinement(VisualMapPoint& point, const RefineOutcome& outcome) {
  if (!outcome.report.converged) return;
  point.normal_ref = outcome.normal_ref;
  point.normal_global = outcome.normal_global;
  point.normal_converged = true;
  Patch keep = std::move(point.patches[point.reference_idx]);
  point.patches.clear();
  point.patches.push_back(std::move(keep));
  point.reference_idx = 0;
}

/// Refines the plane normal of a visual map point in place.
inline RefineReport refine_normal(VisualMapPoint& point, const PinholeCamera& cam,
                                  const RefineConfig& cfg = {}) {
  const RefineOutcome outcome = refine_normal_solve(point, cam, cfg);
  commit_refinement(point, outcome);
  return outcome.report;
}

struct GenerateConfig {
  int grid_cell_px = 30;
  int min_patch_interval_frames = 20;
  double min_patch_drift_px = 40.0;
};

struct GenerateStats {
  int new_points = 0;
  int new_patches = 0;
  int deferred_claimed = 0;
};

/// Promotes LiDAR candidates from the touched voxels to visual map points:
/// one per empty 30x30 image cell, picking the candidate with the strongest
/// gray-level gradient. Cells already holding a visible visual point instead
/// receive a new patch on that point when enough frames have passed or its
/// projection drifted far enough.
inline GenerateStats generate_visual_points(VoxelMap& map, const std::vector<VoxelKey>& touched,
                                            const std::shared_ptr<const Image>& image,
                                            const PinholeCamera& cam,
                                            const RigidTransform& cam_from_global,
                                            double inv_exposure, std::uint64_t frame_id,
                                            std::uint64_t& next_point_id,
                                            const GenerateConfig& cfg = {}) {
  GenerateStats stats;
  const int cells_x = (cam.width + cfg.grid_cell_px - 1) / cfg.grid_cell_px;
  const int cells_y = (cam.height + cfg.grid_cell_px - 1) / cfg.grid_cell_px;
  auto cell_of = [&](const Vec2& px) {
    return static_cast<int>(px.y()) / cfg.grid_cell_px * cells_x +
           static_cast<int>(px.x()) / cfg.grid_cell_px;
  };

  // Occupancy: every existing visual point in the touched region, projected.
  struct Existing {
    VisualMapPoint* point;
    Vec2 px;
  };
  std::unordered_map<int, Existing> occupied;
  struct Candidate {
    const MapPointSample* sample;
    const LeafVoxel* leaf;
    Vec2 px;
    double gradient;
  };
  std::unordered_map<int, Candidate> best_candidate;

  for (const auto& key : touched) {
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
        const Vec3 p_cam = cam_from_global * pos;
        if (p_cam.z() < 0.05) continue;
        const Vec2 px = cam.project(p_cam);
        if (!cam.in_image(px, kPatchMargin)) continue;
        const int cell = cell_of(px);
        auto [it, inserted] = occupied.try_emplace(cell, Existing{vp.get(), px});
        if (!inserted && vp->id < it->second.point->id) it->second = {vp.get(), px};
      }
      if (v->status != LeafVoxel::Status::kPlanar || !v->plane) continue;
      for (const auto& s : v->points) {
        const Vec3 p_cam = cam_from_global * s.position;
        if (p_cam.z() < 0.05) continue;
        const Vec2 px = cam.project(p_cam);
        if (!cam.in_image(px, kPatchMargin)) continue;
        const double grad = image->gradient_magnitude(static_cast<int>(std::round(px.x())),
                                                      static_cast<int>(std::round(px.y())));
        const int cell = cell_of(px);
        auto it = best_candidate.find(cell);
        if (it == best_candidate.end() || grad > it->second.gradient) {
          best_candidate[cell] = {&s, v, px, grad};
        }
      }
    }
  }

  // Deterministic cell order.
  std::vector<int> cells;
  cells.reserve(best_candidate.size() + occupied.size());
  for (const auto& [cell, c] : best_candidate) cells.push_back(cell);
  for (const auto& [cell, e] : occupied) {
    if (!best_candidate.count(cell)) cells.push_back(cell);
  }
  std::sort(cells.begin(), cells.end());

  for (int cell : cells) {
    auto occ = occupied.find(cell);
    if (occ != occupied.end()) {
      VisualMapPoint& vp = *occ->second.point;
      if (vp.normal_converged) continue;
      if (vp.claimed.load(std::memory_order_acquire)) {
        ++stats.deferred_claimed;
        continue;
      }
      const bool stale =
          frame_id >= vp.last_patch_frame + cfg.min_patch_interval_frames;
      const bool drifted =
          (occ->second.px - vp.last_patch_px).norm() >= cfg.min_patch_drift_px;
      if (!stale && !drifted) continue;
      auto patch = capture_patch(image, cam_from_global, inv_exposure, frame_id, occ->second.px);
      if (!patch) continue;
      vp.patches.push_back(std::move(*patch));
      vp.last_patch_frame = frame_id;
      vp.last_patch_px = occ->second.px;
      ++stats.new_patches;
      continue;
    }
    auto cand = best_candidate.find(cell);
    if (cand == best_candidate.end()) continue;
    auto patch = capture_patch(image, cam_from_global, inv_exposure, frame_id, cand->second.px);
    if (!patch) continue;
    auto vp = std::make_shared<VisualMapPoint>();
    vp->id = next_point_id++;
    vp->position = cand->second.sample->position;
    vp->normal_global = cand->second.leaf->plane->normal;
    vp->normal_cov = cand->second.leaf->plane->param_cov.topLeftCorner<3, 3>();
    vp->patches.push_back(std::move(*patch));
    vp->reference_idx = 0;
    vp->last_patch_frame = frame_id;
    vp->last_patch_px = cand->second.px;
    vp->sync_reference_normal();
    LeafVoxel* leaf = map.leaf_for_attach(vp->position);
    if (!leaf) continue;
    leaf->visual_points.emplace_back(vp->position, vp);
    ++stats.new_points;
  }
  return stats;
}

/// Background normal-refinement worker. Points are claimed on enqueue; the
/// worker computes on its own thread and results are applied at the caller's
/// next sync point, so pipeline readers never observe partial writes.
class NormalRefineWorker {
 public:
  explicit NormalRefineWorker(PinholeCamera cam, RefineConfig cfg = {})
      : cam_(cam), cfg_(cfg), thread_([this] { run(); }) {}

  ~NormalRefineWorker() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  void enqueue(std::shared_ptr<VisualMapPoint> point) {
    bool expected = false;
    if (!point->claimed.compare_exchange_strong(expected, true, std::memory_order_acq_rel)) {
      return;  // already in flight
    }
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(point));
    }
    cv_.notify_one();
  }

  /// Applies finished refinements; returns how many were applied.
  int apply_results() {
    std::deque<Result> done;
    {
      std::lock_guard lock(mutex_);
      done.swap(results_);
    }
    for (auto& r : done) {
      commit_refinement(*r.point, r.outcome);
      r.point->claimed.store(false, std::memory_order_release);
    }
    return static_cast<int>(done.size());
  }

  /// Drains the queue on the calling thread (deterministic test path).
  void process_pending_sync() {
    for (;;) {
      std::shared_ptr<VisualMapPoint> point;
      {
        std::lock_guard lock(mutex_);
        if (queue_.empty()) break;
        point = std::move(queue_.front());
        queue_.pop_front();
      }
      process(std::move(point));
    }
  }

  std::size_t pending() const {
    std::lock_guard lock(mutex_);
    return queue_.size() + results_.size();
  }

 private:
  struct Result {
    std::shared_ptr<VisualMapPoint> point;
    RefineOutcome outcome;
  };

  void run() {
    for (;;) {
      std::shared_ptr<VisualMapPoint> point;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
        if (stop_) return;
        point = std::move(queue_.front());
        queue_.pop_front();
      }
      process(std::move(point));
    }
  }

  void process(std::shared_ptr<VisualMapPoint> point) {
    // Patches are immutable while the point is claimed; the solve reads
    // only immutable data and the commit happens at the sync point.
    Result r;
    r.point = point;
    r.outcome = refine_normal_solve(*point, cam_, cfg_);
    {
      std::lock_guard lock(mutex_);
      results_.push_back(std::move(r));
    }
  }

  PinholeCamera cam_;
  RefineConfig cfg_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::shared_ptr<VisualMapPoint>> queue_;
  std::deque<Result> results_;
  bool stop_ = false;
  std::thread thread_;
};

}  // namespace livo
