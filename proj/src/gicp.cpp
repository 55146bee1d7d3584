#include "mcslam/gicp.hpp"

#include <Eigen/Cholesky>

#include <string>

namespace mcslam {
namespace {

// Symmetric 3x3 as its upper triangle, and its adjugate.
struct Sym3 {
  double xx, xy, xz, yy, yz, zz;
};

// cell + r * cov * r^T; only the upper triangle is formed
Sym3 combined_covariance(const Matrix3d& cell, const Matrix3d& r, const Matrix3d& cov) {
  const Matrix3d a = r * cov;
  auto at = [&](int i, int j) { return cell(i, j) + a.row(i).dot(r.row(j)); };
  return {at(0, 0), at(0, 1), at(0, 2), at(1, 1), at(1, 2), at(2, 2)};
}

// Adjugate and determinant; false unless positive definite (Sylvester).
bool adjugate_spd3(const Sym3& c, Sym3& adj, double& det) {
  adj.xx = c.yy * c.zz - c.yz * c.yz;
  adj.xy = -(c.xy * c.zz - c.yz * c.xz);
  adj.xz = c.xy * c.yz - c.yy * c.xz;
  adj.yy = c.xx * c.zz - c.xz * c.xz;
  adj.yz = -(c.xx * c.yz - c.xy * c.xz);
  adj.zz = c.xx * c.yy - c.xy * c.xy;
  det = c.xx * adj.xx + c.xy * adj.xy + c.xz * adj.xz;
  return c.xx > 0.0 && adj.zz > 0.0 && det > 0.0 && std::isfinite(det);
}

}  // namespace

LinearizedObjective pairwise_log_likelihood(const Scan& scan, const VoxelMap& keyframe_map, const Pose3d& rel_pose,
                                            bool with_linearization, double unmatched_penalty) {
  LinearizedObjective out;
  const Matrix3d& r = rel_pose.rotation;
  for (std::size_t j = 0; j < scan.points.size(); ++j) {
    const GaussianPoint3d& p = scan.points[j];
    const Vector3d moved = rel_pose * p.mean;
    const VoxelCell* cell = keyframe_map.nearest(moved);
    if (!cell) {
      out.log_likelihood -= unmatched_penalty;
      continue;
    }

    const Vector3d e = cell->aggregate.mean - moved;
    Sym3 adj;
    double det;
    if (!adjugate_spd3(combined_covariance(cell->aggregate.covariance, r, p.covariance), adj, det)) {
      throw NumericalError("pairwise_log_likelihood: combined covariance not positive definite at point " +
                           std::to_string(j));
    }
    const double quad = adj.xx * e.x() * e.x() + adj.yy * e.y() * e.y() + adj.zz * e.z() * e.z() +
                        2.0 * (adj.xy * e.x() * e.y() + adj.xz * e.x() * e.z() + adj.yz * e.y() * e.z());
    out.log_likelihood -= quad / det;
    ++out.matched_count;

    if (with_linearization) {
      Matrix3d omega;
      omega << adj.xx, adj.xy, adj.xz, adj.xy, adj.yy, adj.yz, adj.xz, adj.yz, adj.zz;
      omega /= det;
      const Eigen::Matrix<double, 3, 6> jac = residual_jacobian(rel_pose, p.mean);
      const Eigen::Matrix<double, 6, 3> jt_omega = jac.transpose() * omega;
      out.H.noalias() += jt_omega * jac;
      out.b.noalias() -= jt_omega * e;
    }
  }
  return out;
}

LinearizedObjective particle_objective(const Scan& scan, const Particle& particle, const KeyframeStore& store,
                                       std::span<const std::size_t> neighbors, bool with_linearization,
                                       double unmatched_penalty) {
  LinearizedObjective total;
  for (const std::size_t k : neighbors) {
    total += pairwise_log_likelihood(scan, store[k].voxel_map, relative_pose(particle, k), with_linearization,
                                     unmatched_penalty);
  }
  return total;
}

double particle_log_likelihood(const Scan& scan, const Particle& particle, const KeyframeStore& store,
                               std::span<const std::size_t> neighbors, double unmatched_penalty) {
  if (neighbors.empty()) throw InvalidArgument("particle_log_likelihood: no neighbor keyframes");
  for (const std::size_t k : neighbors) {
    if (k >= store.size() || k >= particle.keyframe_poses.size()) {
      throw InvalidArgument("particle_log_likelihood: neighbor " + std::to_string(k) + " not in store");
    }
  }
  return particle_objective(scan, particle, store, neighbors, false, unmatched_penalty).log_likelihood;
}

Twist3d gauss_newton_step(const LinearizedObjective& objective, double damping) {
  if (damping < 0.0) throw InvalidArgument("gauss_newton_step: negative damping");
  if (objective.b.isZero(0.0)) return Twist3d::Zero();
  Matrix6d a = objective.H + damping * Matrix6d::Identity();
  a = 0.5 * (a + a.transpose());
  const Eigen::LLT<Matrix6d> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("gauss_newton_step: damped system is singular");
  const Vector6d psi = llt.solve(objective.b);
  if (!psi.allFinite()) throw NumericalError("gauss_newton_step: non-finite step");
  return Twist3d(psi);
}

Twist3d clamp_step(const Twist3d& step, double max_norm) {
  const double n = step.vector().norm();
  if (n <= max_norm || n == 0.0) return step;
  return (max_norm / n) * step;
}

RegistrationResult register_scan(const Scan& scan, const VoxelMap& map, const Pose3d& initial, int max_iterations,
                                 double relative_damping, double step_clamp) {
  RegistrationResult result;
  result.pose = initial;
  for (int it = 0; it < max_iterations; ++it) {
    const LinearizedObjective obj = pairwise_log_likelihood(scan, map, result.pose, true);
    if (obj.matched_count == 0) break;
    const Twist3d step = clamp_step(gauss_newton_step(obj, relative_damping * obj.H.trace() / 6.0), step_clamp);
    result.pose = result.pose * exp(step);
    result.iterations = it + 1;
    if (step.vector().norm() < 1e-10) {
      result.converged = true;
      break;
    }
  }
  result.log_likelihood = pairwise_log_likelihood(scan, map, result.pose, false).log_likelihood;
  return result;
}

}  // namespace mcslam
