#pragma once

// Keyframe map shared by every particle, and the per-particle state that
// refers into it. Clouds live once in the store; a particle only carries its
// own estimate of each keyframe's pose.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "mcslam/point_cloud.hpp"
#include "mcslam/se3.hpp"

namespace mcslam {

struct Keyframe {
  std::size_t id = 0;
  Scan cloud;
  VoxelMap voxel_map;
  Pose3d odom_pose;
  double timestamp = 0.0;
};

struct OdometrySample {
  double timestamp = 0.0;
  Pose3d pose;
};

/// Append-only keyframe list plus the odometry trajectory used for path
/// lengths. Appends happen between filter phases; reads during a phase need
/// no locking.
class KeyframeStore {
 public:
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const Keyframe& operator[](std::size_t id) const { return keyframes_[id]; }
  const Keyframe& back() const { return keyframes_.back(); }
  std::size_t size() const { return keyframes_.size(); }
  bool empty() const { return keyframes_.empty(); }

  /// Appends a keyframe and returns its id.
  std::size_t append(Scan cloud, double voxel_resolution, const Pose3d& odom_pose, double timestamp);

  /// Records an odometry pose. Timestamps must be strictly increasing.
  void append_odometry(double timestamp, const Pose3d& pose);
  const std::vector<OdometrySample>& odom_trajectory() const { return odom_trajectory_; }

  /// Odometry travel distance between two times (linear in time between samples).
  double path_length(double from_time, double to_time) const;

  /// Bytes held by clouds and voxel maps.
  std::size_t cloud_memory_bytes() const;

 private:
  double cumulative_length_at(double time) const;

  std::vector<Keyframe> keyframes_;
  std::vector<OdometrySample> odom_trajectory_;
  std::vector<double> cumulative_length_;
};

struct Particle {
  Pose3d current_pose;
  std::vector<Pose3d> keyframe_poses;
  double log_weight = 0.0;
  double cum_log_likelihood = 0.0;

  bool dead() const { return log_weight == -std::numeric_limits<double>::infinity(); }

  /// Inline bytes plus one pose per keyframe.
  std::size_t memory_bytes() const { return sizeof(Particle) + keyframe_poses.size() * sizeof(Pose3d); }
};

struct ParticleSet {
  std::vector<Particle> particles;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return particles.size(); }
  Particle& operator[](std::size_t i) { return particles[i]; }
  const Particle& operator[](std::size_t i) const { return particles[i]; }

  /// N particles at `initial_pose` with uniform weights and no keyframe poses.
  static ParticleSet uniform(std::size_t count, const Pose3d& initial_pose, std::uint64_t seed);

  std::size_t live_count() const;

  /// exp(log_weight) per particle; dead particles map to 0.
  std::vector<double> normalized_weights() const;

  std::size_t memory_bytes() const;
};

/// Union of the keyframe clouds placed at this particle's keyframe poses.
Scan map_of(const Particle& particle, const KeyframeStore& store);

/// Appends each particle's current pose as its estimate of the newest keyframe.
void extend_all(ParticleSet& set, const KeyframeStore& store);

/// log(sum(exp(x))) over finite entries; -inf when none are finite.
double log_sum_exp(const std::vector<double>& values);

}  // namespace mcslam
