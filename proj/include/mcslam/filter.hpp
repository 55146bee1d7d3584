#pragma once

// Monte Carlo SLAM loop over a keyframe map. Each frame runs
//   predict -> (per particle) neighbor selection, loop check, gradient
//   correction, likelihood -> weighting -> pruning -> keyframe insertion ->
//   representative extraction.
// Per-particle phases run on `workers` threads; every random draw comes from a
// stream keyed by (seed, frame, particle), so results do not depend on the
// worker count.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcslam/gicp.hpp"
#include "mcslam/particles.hpp"
#include "mcslam/point_cloud.hpp"
#include "mcslam/se3.hpp"
#include "mcslam/trajectory.hpp"

namespace mcslam {

struct MotionDelta {
  Pose3d delta;
  Matrix6d covariance = Matrix6d::Zero();  // tangent space of delta, (rho, phi) order
};

/// How a discounted correction twist reaches a past keyframe. kBody
/// right-multiplies it onto the keyframe as is; kCurrentFrame applies it in
/// the current pose's frame, T_t exp(w psi) T_t^-1 T_k, so that the
/// correction keeps its world direction for keyframes with another heading.
enum class KeyframeUpdate { kBody, kCurrentFrame };

KeyframeUpdate parse_keyframe_update(const std::string& name);
std::string to_string(KeyframeUpdate mode);

struct FilterConfig {
  std::size_t particle_count = 1000;
  std::size_t neighbor_count = 3;
  std::size_t loop_recency_gap = 10;
  double overlap_threshold = 0.70;
  double likelihood_floor = 1e-16;
  double posterior_floor = 1e-8;
  double gn_damping = 1e-6;  // relative: lambda = gn_damping * trace(H) / 6
  double step_clamp = 1.0;
  double voxel_resolution = 0.5;
  double unmatched_penalty = 0.0;  // cost per scan point without a correspondence
  KeyframeUpdate keyframe_update = KeyframeUpdate::kBody;
  std::uint64_t rng_seed = 0;
  std::size_t workers = 1;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

void predict(ParticleSet& set, const MotionDelta& motion, std::optional<double> vertical_dispersion,
             std::uint64_t frame, std::size_t workers = 1);

/// Factor S with S S^T = covariance: Cholesky, or an eigen square root when
/// the covariance is only semidefinite.
/// Throws NumericalError if the covariance is not PSD.
Matrix6d covariance_sqrt(const Matrix6d& covariance);

std::vector<std::size_t> select_neighbor_keyframes(const Particle& particle, const KeyframeStore& store,
                                                   std::size_t count);

/// True iff some neighbor id <= latest_keyframe_id - recency_gap.
bool detect_loop(std::span<const std::size_t> neighbors, std::size_t latest_keyframe_id, std::size_t recency_gap);

/// d(t_k, t_o) / d(t, t_o) along the odometry path, clamped to [0, 1]. Zero
/// when the total path length is zero.
double discount_weight(const KeyframeStore& store, double oldest_time, double keyframe_time, double current_time);

struct CorrectionResult {
  bool applied = false;
  bool clamped = false;
  Twist3d step;
  std::size_t matched_count = 0;
};

/// One damped Gauss-Newton step on the current pose, then the same step,
/// discounted by path length, on every keyframe from the oldest neighbor up
/// to the newest. Keyframes older than the oldest neighbor are not touched.
/// A singular system leaves the particle unchanged.
CorrectionResult correct(Particle& particle, const Scan& scan, const KeyframeStore& store,
                         const FilterConfig& config, std::span<const std::size_t> neighbors);

/// Adds each frame log-likelihood to the cumulative one and renormalizes.
/// Non-finite entries mark the particle dead. Throws FilterDegeneracy if no
/// particle survives.
void update_weights(ParticleSet& set, std::span<const double> frame_log_likelihoods);

/// Replaces particles whose frame likelihood relative to the best particle is
/// below likelihood_floor, or whose posterior is below posterior_floor, by
/// clones of survivors drawn in proportion to the survivors' weights.
/// Returns the number of respawned particles.
std::size_t prune_and_respawn(ParticleSet& set, const FilterConfig& config,
                              std::span<const double> frame_log_likelihoods, std::uint64_t frame);

/// Index of the largest weight; lowest index wins ties.
std::size_t representative(const ParticleSet& set);

/// Inserts the scan as a keyframe when its overlap with the last keyframe
/// (placed by odometry) falls below the threshold, or when the store is empty.
bool maybe_insert_keyframe(const Scan& scan, const Pose3d& odom_pose, KeyframeStore& store, ParticleSet& set,
                           const FilterConfig& config);

struct FrameReport {
  std::size_t frame = 0;
  double timestamp = 0.0;
  std::size_t representative = 0;
  Pose3d representative_pose;
  double representative_weight = 0.0;
  std::size_t live_count = 0;
  std::size_t loop_count = 0;
  std::size_t corrected_count = 0;
  std::size_t respawned_count = 0;
  bool keyframe_inserted = false;
  std::size_t keyframe_count = 0;
  bool vertical_dispersion = false;
  double elapsed_ms = 0.0;
};

class MonteCarloSlam {
 public:
  explicit MonteCarloSlam(FilterConfig config, const Pose3d& initial_pose = Pose3d::Identity());

  /// Processes one frame. `scan` must carry covariances and a timestamp
  /// greater than the previous frame's.
  FrameReport step(const Scan& scan, const MotionDelta& motion,
                   std::optional<double> vertical_dispersion = std::nullopt);

  const FilterConfig& config() const { return config_; }
  const ParticleSet& particles() const { return particles_; }
  const KeyframeStore& store() const { return store_; }
  std::size_t frame_count() const { return frame_; }

  /// Dead-reckoning trajectory (odometry composed from the initial pose).
  Trajectory odometry_trajectory() const;

  /// Every frame expressed through the given particle's current keyframe
  /// estimates: T_k * (odom_k^-1 odom_t) with k the latest keyframe at or
  /// before t.
  Trajectory trajectory_of(std::size_t particle) const;

 private:
  FilterConfig config_;
  KeyframeStore store_;
  ParticleSet particles_;
  std::size_t frame_ = 0;
  Pose3d odom_pose_;
  std::vector<std::size_t> keyframe_at_frame_;  // latest keyframe id per processed frame
};

}  // namespace mcslam
