#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mcslam/se3.hpp"

namespace mcslam {

/// Smallest eigenvalue assigned by plane regularization (GICP convention).
inline constexpr double kPlaneEpsilon = 1e-3;
inline constexpr int kDefaultCovarianceNeighbors = 10;
inline constexpr std::size_t kDefaultMaxScanPoints = 10000;

struct Scan {
  std::vector<GaussianPoint3d> points;
  double timestamp = 0.0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Replaces the eigenvalues of `cov` by (epsilon, 1, 1), keeping eigenvectors.
Matrix3d plane_regularized(const Matrix3d& cov, double epsilon = kPlaneEpsilon);

/// Sample covariance of each point's k nearest neighbors (excluding the point
/// itself), plane-regularized. Throws InvalidArgument when k < 4 or there are
/// fewer than k + 1 points.
Scan estimate_covariances(std::span<const Vector3d> points, int k = kDefaultCovarianceNeighbors,
                          double timestamp = 0.0);

using VoxelIndex = Eigen::Vector3i;

struct VoxelCell {
  VoxelIndex index;
  GaussianPoint3d aggregate;  // mean of member means, mean of member covariances
  int count = 0;
};

/// Immutable sparse voxel grid keyed by floor(x / resolution). Lookups are
/// lock-free and safe from any number of threads.
class VoxelMap {
 public:
  explicit VoxelMap(double resolution = 0.5);

  double resolution() const { return resolution_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  const std::vector<VoxelCell>& cells() const { return cells_; }

  VoxelIndex index_of(const Vector3d& x) const {
    return VoxelIndex(static_cast<int>(std::floor(x.x() * inv_resolution_)),
                      static_cast<int>(std::floor(x.y() * inv_resolution_)),
                      static_cast<int>(std::floor(x.z() * inv_resolution_)));
  }

  const VoxelCell* find(const VoxelIndex& index) const;

  /// Cell containing `query` if occupied, otherwise the occupied cell of the
  /// surrounding 26 whose aggregate mean is nearest to `query`; nullptr when
  /// the whole 3x3x3 block is empty.
  const VoxelCell* nearest(const Vector3d& query) const;

  bool occupied(const Vector3d& x) const { return find(index_of(x)) != nullptr; }

  /// Approximate heap bytes held by this map.
  std::size_t memory_bytes() const;

 private:
  friend VoxelMap build_voxel_map(const Scan& scan, double resolution);
  void freeze();

  double resolution_;
  double inv_resolution_;
  struct HaloEntry {
    VoxelIndex index;
    std::int32_t self = -1;  // occupied cell at this index, -1 if empty
    std::uint32_t begin = 0, end = 0;  // range in candidates_
  };
  const HaloEntry* find_halo(const VoxelIndex& index) const;

  std::vector<VoxelCell> cells_;
  std::vector<std::int32_t> slots_;  // open addressing into cells_, -1 = empty
  std::uint64_t mask_ = 0;
  // every voxel within one step of an occupied cell, with its occupied
  // neighbors listed in the same order nearest() would visit them
  std::vector<HaloEntry> halo_;
  std::vector<std::int32_t> candidates_;
  std::vector<std::int32_t> halo_slots_;
  std::uint64_t halo_mask_ = 0;
};

VoxelMap build_voxel_map(const Scan& scan, double resolution);

std::optional<GaussianPoint3d> find_correspondence(const VoxelMap& map, const Vector3d& query);

/// Fraction of scan points that land in an occupied voxel after applying rel_pose.
double overlap_rate(const Scan& scan, const Pose3d& rel_pose, const VoxelMap& map);

Scan transformed(const Scan& scan, const Pose3d& pose);

std::vector<Vector3d> means_of(const Scan& scan);

}  // namespace mcslam
