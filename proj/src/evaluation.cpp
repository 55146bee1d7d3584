#include "mcslam/evaluation.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace mcslam {

std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est, const Trajectory& gt,
                                                           double max_gap) {
  check_increasing(est, "associate(est)");
  check_increasing(gt, "associate(gt)");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (gt.empty()) return pairs;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    const auto it = std::lower_bound(gt.begin(), gt.end(), t,
                                     [](const TimedPose& s, double v) { return s.timestamp < v; });
    std::size_t best = static_cast<std::size_t>(it - gt.begin());
    if (best == gt.size() || (best > 0 && t - gt[best - 1].timestamp <= gt[best].timestamp - t)) --best;
    if (std::abs(gt[best].timestamp - t) <= max_gap) pairs.emplace_back(i, best);
  }
  return pairs;
}

namespace {

Pose3d procrustes(const Trajectory& est, const Trajectory& gt,
                  const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.size() < 3) {
    throw InvalidArgument("align: need at least 3 associated pairs, got " + std::to_string(pairs.size()));
  }
  // identical translations: skip the SVD so gt-vs-gt comes out exactly zero
  const bool same = std::all_of(pairs.begin(), pairs.end(), [&](const auto& pr) {
    return est[pr.first].pose.translation == gt[pr.second].pose.translation;
  });
  if (same) return Pose3d::Identity();

  Vector3d mean_est = Vector3d::Zero(), mean_gt = Vector3d::Zero();
  for (const auto& [i, j] : pairs) {
    mean_est += est[i].pose.translation;
    mean_gt += gt[j].pose.translation;
  }
  mean_est /= static_cast<double>(pairs.size());
  mean_gt /= static_cast<double>(pairs.size());

  Matrix3d cross = Matrix3d::Zero();
  for (const auto& [i, j] : pairs) {
    cross += (gt[j].pose.translation - mean_gt) * (est[i].pose.translation - mean_est).transpose();
  }
  Eigen::JacobiSVD<Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d d = Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Matrix3d r = svd.matrixU() * d * svd.matrixV().transpose();
  return Pose3d(r, mean_gt - r * mean_est);
}

}  // namespace

Pose3d align(const Trajectory& est, const Trajectory& gt, double max_gap) {
  return procrustes(est, gt, associate(est, gt, max_gap));
}

AteReport evaluate_ate(const Trajectory& est, const Trajectory& gt, double max_gap) {
  const auto pairs = associate(est, gt, max_gap);
  AteReport report;
  report.alignment = procrustes(est, gt, pairs);
  report.pair_count = pairs.size();
  double sum = 0.0;
  for (const auto& [i, j] : pairs) {
    sum += (report.alignment * est[i].pose.translation - gt[j].pose.translation).squaredNorm();
  }
  report.ate_rmse = std::sqrt(sum / static_cast<double>(pairs.size()));
  return report;
}

}  // namespace mcslam
