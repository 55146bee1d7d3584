#pragma once

// Absolute trajectory error after rigid (SE(3), no scale) alignment.

#include <cstddef>
#include <utility>
#include <vector>

#include "mcslam/trajectory.hpp"

namespace mcslam {

inline constexpr double kDefaultAssociationGap = 0.05;

/// (est index, gt index) pairs by nearest timestamp within max_gap seconds.
std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est, const Trajectory& gt,
                                                           double max_gap = kDefaultAssociationGap);

/// Rigid transform A minimizing sum |A * t_est - t_gt|^2 over associated
/// translations (closed-form orthogonal Procrustes). Throws InvalidArgument
/// with fewer than three pairs.
Pose3d align(const Trajectory& est, const Trajectory& gt, double max_gap = kDefaultAssociationGap);

struct AteReport {
  double ate_rmse = 0.0;
  std::size_t pair_count = 0;
  Pose3d alignment;
};

AteReport evaluate_ate(const Trajectory& est, const Trajectory& gt, double max_gap = kDefaultAssociationGap);

inline double ate_rmse(const Trajectory& est, const Trajectory& gt, double max_gap = kDefaultAssociationGap) {
  return evaluate_ate(est, gt, max_gap).ate_rmse;
}

}  // namespace mcslam
