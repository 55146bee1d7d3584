#include "mcslam/particles.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mcslam {

std::size_t KeyframeStore::append(Scan cloud, double voxel_resolution, const Pose3d& odom_pose,
                                  double timestamp) {
  Keyframe kf;
  kf.id = keyframes_.size();
  kf.voxel_map = build_voxel_map(cloud, voxel_resolution);
  kf.cloud = std::move(cloud);
  kf.odom_pose = odom_pose;
  kf.timestamp = timestamp;
  keyframes_.push_back(std::move(kf));
  return keyframes_.back().id;
}

void KeyframeStore::append_odometry(double timestamp, const Pose3d& pose) {
  if (!odom_trajectory_.empty() && !(timestamp > odom_trajectory_.back().timestamp)) {
    throw InvalidArgument("append_odometry: timestamps must be strictly increasing");
  }
  const double length = odom_trajectory_.empty()
                            ? 0.0
                            : cumulative_length_.back() +
                                  (pose.translation - odom_trajectory_.back().pose.translation).norm();
  odom_trajectory_.push_back({timestamp, pose});
  cumulative_length_.push_back(length);
}

double KeyframeStore::cumulative_length_at(double time) const {
  const auto it = std::lower_bound(odom_trajectory_.begin(), odom_trajectory_.end(), time,
                                   [](const OdometrySample& s, double t) { return s.timestamp < t; });
  const auto i = static_cast<std::size_t>(it - odom_trajectory_.begin());
  if (it->timestamp == time) return cumulative_length_[i];
  const double t0 = odom_trajectory_[i - 1].timestamp;
  const double alpha = (time - t0) / (it->timestamp - t0);
  return cumulative_length_[i - 1] + alpha * (cumulative_length_[i] - cumulative_length_[i - 1]);
}

double KeyframeStore::path_length(double from_time, double to_time) const {
  if (odom_trajectory_.empty()) throw InvalidArgument("path_length: empty odometry trajectory");
  const double first = odom_trajectory_.front().timestamp;
  const double last = odom_trajectory_.back().timestamp;
  if (!(from_time <= to_time) || from_time < first || to_time > last) {
    throw InvalidArgument("path_length: times [" + std::to_string(from_time) + ", " + std::to_string(to_time) +
                          "] outside odometry range [" + std::to_string(first) + ", " + std::to_string(last) +
                          "]");
  }
  return cumulative_length_at(to_time) - cumulative_length_at(from_time);
}

std::size_t KeyframeStore::cloud_memory_bytes() const {
  std::size_t bytes = 0;
  for (const auto& kf : keyframes_) {
    bytes += kf.cloud.points.capacity() * sizeof(GaussianPoint3d) + kf.voxel_map.memory_bytes();
  }
  return bytes;
}

ParticleSet ParticleSet::uniform(std::size_t count, const Pose3d& initial_pose, std::uint64_t seed) {
  ParticleSet set;
  set.rng_seed = seed;
  const double log_w = -std::log(static_cast<double>(count));
  set.particles.assign(count, Particle{initial_pose, {}, log_w, 0.0});
  return set;
}

std::size_t ParticleSet::live_count() const {
  return static_cast<std::size_t>(
      std::count_if(particles.begin(), particles.end(), [](const Particle& p) { return !p.dead(); }));
}

std::vector<double> ParticleSet::normalized_weights() const {
  std::vector<double> w(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i) w[i] = std::exp(particles[i].log_weight);
  return w;
}

std::size_t ParticleSet::memory_bytes() const {
  std::size_t bytes = 0;
  for (const auto& p : particles) bytes += p.memory_bytes();
  return bytes;
}

Scan map_of(const Particle& particle, const KeyframeStore& store) {
  Scan map;
  std::size_t total = 0;
  for (const auto& kf : store.keyframes()) total += kf.cloud.size();
  map.points.reserve(total);
  for (const auto& kf : store.keyframes()) {
    const Pose3d& pose = particle.keyframe_poses.at(kf.id);
    for (const auto& p : kf.cloud.points) map.points.push_back(transform_gaussian(pose, p));
  }
  return map;
}

void extend_all(ParticleSet& set, const KeyframeStore& store) {
  for (auto& p : set.particles) {
    while (p.keyframe_poses.size() < store.size()) p.keyframe_poses.push_back(p.current_pose);
  }
}

double log_sum_exp(const std::vector<double>& values) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (std::isfinite(v)) peak = std::max(peak, v);
  }
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) sum += std::exp(v - peak);
  }
  return peak + std::log(sum);
}

}  // namespace mcslam
