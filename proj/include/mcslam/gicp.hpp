#pragma once

// Distribution-to-distribution registration likelihood between a scan and a
// keyframe voxel map, with its Gauss-Newton linearization.
//
// For each scan point j with a voxel correspondence:
//   e_j     = mu'_j - T mu_j
//   Omega_j = (Sigma'_j + R Sigma_j R^T)^-1
//   log L  -= e_j^T Omega_j e_j
// T is the pose of the scan frame relative to the keyframe. Points without a
// correspondence add the constant `unmatched_penalty` to the cost (zero by
// default) and nothing to H or b.
//
// Sign convention: b = -sum J^T Omega e, so that the step psi = H^-1 b applied
// as T * exp(psi) increases log L.

#include <cstddef>
#include <span>

#include "mcslam/particles.hpp"
#include "mcslam/point_cloud.hpp"
#include "mcslam/se3.hpp"

namespace mcslam {

struct LinearizedObjective {
  double log_likelihood = 0.0;
  Matrix6d H = Matrix6d::Zero();
  Vector6d b = Vector6d::Zero();
  std::size_t matched_count = 0;

  LinearizedObjective& operator+=(const LinearizedObjective& other) {
    log_likelihood += other.log_likelihood;
    H += other.H;
    b += other.b;
    matched_count += other.matched_count;
    return *this;
  }
};

/// d e / d delta for T -> T * exp(delta), delta = (rho, phi).
inline Eigen::Matrix<double, 3, 6> residual_jacobian(const Pose3d& rel_pose, const Vector3d& mean) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>() = -rel_pose.rotation;
  j.rightCols<3>() = rel_pose.rotation * hat(mean);
  return j;
}

LinearizedObjective pairwise_log_likelihood(const Scan& scan, const VoxelMap& keyframe_map, const Pose3d& rel_pose,
                                            bool with_linearization, double unmatched_penalty = 0.0);

/// Pose of the current frame in keyframe k's frame, as estimated by `particle`.
inline Pose3d relative_pose(const Particle& particle, std::size_t keyframe) {
  return inverse(particle.keyframe_poses[keyframe]) * particle.current_pose;
}

/// Sum of pairwise objectives over the neighbor keyframes.
LinearizedObjective particle_objective(const Scan& scan, const Particle& particle, const KeyframeStore& store,
                                       std::span<const std::size_t> neighbors, bool with_linearization,
                                       double unmatched_penalty = 0.0);

double particle_log_likelihood(const Scan& scan, const Particle& particle, const KeyframeStore& store,
                               std::span<const std::size_t> neighbors, double unmatched_penalty = 0.0);

/// Levenberg damping used by the filter: 1e-6 * trace(H) / 6.
inline double default_damping(const Matrix6d& h) { return 1e-6 * h.trace() / 6.0; }

/// psi = (H + damping I)^-1 b. Throws NumericalError when the damped system is
/// not positive definite.
Twist3d gauss_newton_step(const LinearizedObjective& objective, double damping);

/// Scales `step` down so its 6-vector norm is at most `max_norm`.
Twist3d clamp_step(const Twist3d& step, double max_norm);

struct RegistrationResult {
  Pose3d pose;
  int iterations = 0;
  double log_likelihood = 0.0;
  bool converged = false;
};

/// Repeated damped Gauss-Newton steps of `scan` against `map` from `initial`,
/// stopping once the step norm drops below 1e-10.
RegistrationResult register_scan(const Scan& scan, const VoxelMap& map, const Pose3d& initial, int max_iterations,
                                 double relative_damping = 1e-6, double step_clamp = 1.0);

}  // namespace mcslam
