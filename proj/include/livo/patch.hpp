// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "livo/camera.hpp"
#include "livo/geometry.hpp"
#include "livo/image.hpp"

namespace livo {

inline constexpr int kAlignPatchSize = 8;    // alignment offsets {-4..3}
inline constexpr int kRefinePatchSize = 11;  // refinement offsets {-5..5}
inline constexpr int kPyramidLevels = 3;
inline constexpr int kAlignHalf = kAlignPatchSize / 2;
inline constexpr int kRefineHalf = kRefinePatchSize / 2;
// Enough room for the level-2 alignment grid and the refinement grid.
inline constexpr double kPatchMargin = (kAlignHalf + 1) * 4 + 1;

using AlignGrid = Eigen::Matrix<float, kAlignPatchSize, kAlignPatchSize>;
using RefineGrid = Eigen::Matrix<float, kRefinePatchSize, kRefinePatchSize>;

/// One capture of a visual map point: a three-level 8x8 alignment pyramid
/// (level l sampled at 2^l pixel stride around the anchor), an 11x11
/// refinement grid, and the capture state. The source frame is retained for
/// warped re-sampling.
struct Patch {
  std::array<AlignGrid, kPyramidLevels> levels;
  RefineGrid refine;
  RigidTransform cam_from_global;
  double inv_exposure = 1.0;
  std::uint64_t frame_id = 0;
  Vec2 anchor_px = Vec2::Zero();  // rounded projection at capture
  std::shared_ptr<const Image> image;

  Vec3 camera_position() const { return cam_from_global.inverse().translation; }
};

/// Samples a patch at the rounded projection. Returns nothing if the patch
/// footprint would leave the image.
inline std::optional<Patch> capture_patch(const std::shared_ptr<const Image>& image,
                                          const RigidTransform& cam_from_global,
                                          double inv_exposure, std::uint64_t frame_id,
                                          const Vec2& projection) {
  const Vec2 anchor(std::round(projection.x()), std::round(projection.y()));
  if (!image->contains(anchor.x(), anchor.y(), kPatchMargin)) return std::nullopt;

  Patch p;
  p.cam_from_global = cam_from_global;
  p.inv_exposure = inv_exposure;
  p.frame_id = frame_id;
  p.anchor_px = anchor;
  p.image = image;
  const int ax = static_cast<int>(anchor.x());
  const int ay = static_cast<int>(anchor.y());
  for (int level = 0; level < kPyramidLevels; ++level) {
    const int stride = 1 << level;
    for (int oy = -kAlignHalf; oy < kAlignHalf; ++oy) {
      for (int ox = -kAlignHalf; ox < kAlignHalf; ++ox) {
        p.levels[level](oy + kAlignHalf, ox + kAlignHalf) =
            image->at(ax + ox * stride, ay + oy * stride);
      }
    }
  }
  for (int oy = -kRefineHalf; oy <= kRefineHalf; ++oy) {
    for (int ox = -kRefineHalf; ox <= kRefineHalf; ++ox) {
      p.refine(oy + kRefineHalf, ox + kRefineHalf) = image->at(ax + ox, ay + oy);
    }
  }
  return p;
}

/// A LiDAR map point promoted to a visual landmark. The normal starts from
/// the plane prior and may later be refined; once refined, it is frozen and
/// only the reference patch is kept.
struct VisualMapPoint {
  std::uint64_t id = 0;
  Vec3 position = Vec3::Zero();
  Vec3 normal_global = Vec3::UnitZ();
  Vec3 normal_ref = Vec3::UnitZ();  // reference-camera frame, n . p_ref > 0
  Mat3 normal_cov = Mat3::Zero();   // prior covariance of the normal
  bool normal_converged = false;
  std::vector<Patch> patches;
  int reference_idx = 0;
  std::uint64_t last_patch_frame = 0;
  Vec2 last_patch_px = Vec2::Zero();
  std::atomic<bool> claimed{false};

  VisualMapPoint() = default;
  VisualMapPoint(const VisualMapPoint&) = delete;
  VisualMapPoint& operator=(const VisualMapPoint&) = delete;

  const Patch& reference() const { return patches[reference_idx]; }

  /// Re-derives the reference-frame normal with the sign convention
  /// n . p_ref > 0 required by the m-parameterization.
  void sync_reference_normal() {
    if (patches.empty()) return;
    const auto& ref = patches[reference_idx];
    Vec3 n = ref.cam_from_global.rotation * normal_global;
    const Vec3 p_ref = ref.cam_from_global * position;
    if (n.dot(p_ref) < 0.0) n = -n;
    normal_ref = n;
  }
};

}  // namespace livo
