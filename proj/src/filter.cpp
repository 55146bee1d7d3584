#include "mcslam/filter.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "mcslam/parallel.hpp"
#include "mcslam/random.hpp"

namespace mcslam {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kOrthonormalizeEvery = 500;

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw InvalidArgument(std::string("filter.") + field + ": " + why);
}

void renormalize(ParticleSet& set) {
  std::vector<double> cum(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    cum[i] = set[i].dead() ? kNegInf : set[i].cum_log_likelihood;
  }
  const double total = log_sum_exp(cum);
  if (!std::isfinite(total)) throw FilterDegeneracy("all particles are dead");
  for (std::size_t i = 0; i < set.size(); ++i) {
    set[i].log_weight = set[i].dead() ? kNegInf : set[i].cum_log_likelihood - total;
  }
}

}  // namespace

KeyframeUpdate parse_keyframe_update(const std::string& name) {
  if (name == "body") return KeyframeUpdate::kBody;
  if (name == "current_frame") return KeyframeUpdate::kCurrentFrame;
  throw InvalidArgument("keyframe_update: expected \"body\" or \"current_frame\", got \"" + name + "\"");
}

std::string to_string(KeyframeUpdate mode) { return mode == KeyframeUpdate::kBody ? "body" : "current_frame"; }

void FilterConfig::validate() const {
  require(particle_count >= 1, "particle_count", "must be >= 1");
  require(neighbor_count >= 1, "neighbor_count", "must be >= 1");
  require(loop_recency_gap >= 1, "loop_recency_gap", "must be >= 1");
  require(overlap_threshold >= 0.0 && overlap_threshold <= 1.0, "overlap_threshold", "must lie in [0, 1]");
  require(likelihood_floor > 0.0 && likelihood_floor < 1.0, "likelihood_floor", "must lie in (0, 1)");
  require(posterior_floor >= 0.0 && posterior_floor < 1.0, "posterior_floor", "must lie in [0, 1)");
  require(gn_damping >= 0.0 && std::isfinite(gn_damping), "gn_damping", "must be finite and >= 0");
  require(step_clamp > 0.0, "step_clamp", "must be > 0");
  require(voxel_resolution > 0.0 && std::isfinite(voxel_resolution), "voxel_resolution", "must be > 0");
  require(unmatched_penalty >= 0.0 && std::isfinite(unmatched_penalty), "unmatched_penalty",
          "must be finite and >= 0");
  require(workers >= 1, "workers", "must be >= 1");
}

Matrix6d covariance_sqrt(const Matrix6d& covariance) {
  if (!covariance.allFinite()) throw NumericalError("motion covariance has non-finite entries");
  const double scale = covariance.cwiseAbs().maxCoeff();
  if (scale == 0.0) return Matrix6d::Zero();
  if (!covariance.isApprox(covariance.transpose(), 1e-12)) {
    throw NumericalError("motion covariance is not symmetric");
  }
  const Eigen::LLT<Matrix6d> llt(covariance);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // semidefinite (e.g. a degenerate odometry axis): symmetric square root
  const Eigen::SelfAdjointEigenSolver<Matrix6d> eig(covariance);
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
    throw NumericalError("motion covariance is not positive semidefinite (Cholesky failed)");
  }
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

void predict(ParticleSet& set, const MotionDelta& motion, std::optional<double> vertical_dispersion,
             std::uint64_t frame, std::size_t workers) {
  if (!motion.delta.allFinite()) throw InvalidArgument("predict: non-finite motion delta");
  const Matrix6d s = covariance_sqrt(motion.covariance);
  const bool noisy = !s.isZero(0.0);
  const double sigma_z = vertical_dispersion.value_or(0.0);
  if (sigma_z < 0.0) throw InvalidArgument("predict: negative vertical dispersion");

  parallel_for(workers, set.size(), [&](std::size_t i) {
    Particle& p = set[i];
    if (p.dead()) return;
    p.current_pose = p.current_pose * motion.delta;
    if (!noisy && sigma_z == 0.0) return;
    CounterRng rng(set.rng_seed, StreamPurpose::kPrediction, frame, i);
    if (noisy) {
      const Vector6d z = rng.gaussian_vector<6>();
      p.current_pose = p.current_pose * exp(Twist3d(Vector6d(s * z)));
    }
    if (sigma_z > 0.0) p.current_pose.translation.z() += sigma_z * rng.gaussian();
  });
}

std::vector<std::size_t> select_neighbor_keyframes(const Particle& particle, const KeyframeStore& store,
                                                   std::size_t count) {
  const std::size_t n = std::min(store.size(), particle.keyframe_poses.size());
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t k = 0; k < n; ++k) {
    dist[k] = {(particle.keyframe_poses[k].translation - particle.current_pose.translation).squaredNorm(), k};
  }
  const std::size_t m = std::min(count, n);
  std::partial_sort(dist.begin(), dist.begin() + m, dist.end());
  std::vector<std::size_t> out(m);
  for (std::size_t a = 0; a < m; ++a) out[a] = dist[a].second;
  return out;
}

bool detect_loop(std::span<const std::size_t> neighbors, std::size_t latest_keyframe_id, std::size_t recency_gap) {
  if (latest_keyframe_id < recency_gap) return false;
  const std::size_t boundary = latest_keyframe_id - recency_gap;
  return std::any_of(neighbors.begin(), neighbors.end(), [&](std::size_t k) { return k <= boundary; });
}

double discount_weight(const KeyframeStore& store, double oldest_time, double keyframe_time, double current_time) {
  const double total = store.path_length(oldest_time, current_time);
  if (!(total > 0.0)) return 0.0;
  return std::clamp(store.path_length(oldest_time, keyframe_time) / total, 0.0, 1.0);
}

CorrectionResult correct(Particle& particle, const Scan& scan, const KeyframeStore& store,
                         const FilterConfig& config, std::span<const std::size_t> neighbors) {
  CorrectionResult result;
  if (neighbors.empty()) return result;
  const LinearizedObjective objective = particle_objective(scan, particle, store, neighbors, true);
  result.matched_count = objective.matched_count;
  if (objective.matched_count == 0) return result;

  Twist3d psi;
  try {
    psi = gauss_newton_step(objective, config.gn_damping * objective.H.trace() / 6.0);
  } catch (const NumericalError&) {
    return result;
  }
  const Twist3d clamped = clamp_step(psi, config.step_clamp);
  result.clamped = clamped.vector() != psi.vector();
  result.step = clamped;
  result.applied = true;

  const Pose3d before = particle.current_pose;
  particle.current_pose = before * exp(clamped);

  const std::size_t oldest = *std::min_element(neighbors.begin(), neighbors.end());
  const double t_o = store[oldest].timestamp;
  const double t = scan.timestamp;
  const double total = store.path_length(t_o, t);
  if (!(total > 0.0)) return result;
  for (std::size_t k = oldest + 1; k < store.size(); ++k) {
    const double w = std::clamp(store.path_length(t_o, store[k].timestamp) / total, 0.0, 1.0);
    if (w == 0.0) continue;
    Pose3d& kf = particle.keyframe_poses[k];
    if (config.keyframe_update == KeyframeUpdate::kBody) {
      kf = kf * exp(w * clamped);
    } else {
      kf = before * exp(w * clamped) * inverse(before) * kf;
    }
  }
  return result;
}

void update_weights(ParticleSet& set, std::span<const double> frame_log_likelihoods) {
  if (frame_log_likelihoods.size() != set.size()) {
    throw InvalidArgument("update_weights: expected " + std::to_string(set.size()) + " log-likelihoods, got " +
                          std::to_string(frame_log_likelihoods.size()));
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    Particle& p = set[i];
    if (p.dead()) continue;
    const double ll = frame_log_likelihoods[i];
    if (std::isnan(ll) || ll == kNegInf) {
      p.log_weight = kNegInf;
      continue;
    }
    p.cum_log_likelihood += ll;
  }
  renormalize(set);
}

std::size_t prune_and_respawn(ParticleSet& set, const FilterConfig& config,
                              std::span<const double> frame_log_likelihoods, std::uint64_t frame) {
  if (frame_log_likelihoods.size() != set.size()) {
    throw InvalidArgument("prune_and_respawn: log-likelihood count does not match particle count");
  }
  double best = kNegInf;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set[i].dead()) best = std::max(best, frame_log_likelihoods[i]);
  }
  const double ll_cut = std::log(config.likelihood_floor);
  const double posterior_cut = config.posterior_floor > 0.0 ? std::log(config.posterior_floor) : kNegInf;

  std::vector<std::size_t> survivors;
  std::vector<std::size_t> dead;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Particle& p = set[i];
    const bool below = p.dead() || !(frame_log_likelihoods[i] - best >= ll_cut) || p.log_weight < posterior_cut;
    (below ? dead : survivors).push_back(i);
  }
  if (dead.empty()) return 0;
  if (survivors.empty()) throw FilterDegeneracy("prune_and_respawn: no particle above the pruning floors");

  std::vector<double> cdf(survivors.size());
  const double peak = set[survivors.front()].log_weight;
  double acc = 0.0;
  for (std::size_t s = 0; s < survivors.size(); ++s) {
    acc += std::exp(set[survivors[s]].log_weight - peak);
    cdf[s] = acc;
  }
  for (const std::size_t slot : dead) {
    CounterRng rng(set.rng_seed, StreamPurpose::kPruning, frame, slot);
    const double u = rng.uniform() * acc;
    const auto pick = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    set[slot] = set[survivors[std::min(pick, survivors.size() - 1)]];
  }
  renormalize(set);
  return dead.size();
}

std::size_t representative(const ParticleSet& set) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < set.size(); ++i) {
    if (set[i].log_weight > set[best].log_weight) best = i;
  }
  return best;
}

bool maybe_insert_keyframe(const Scan& scan, const Pose3d& odom_pose, KeyframeStore& store, ParticleSet& set,
                           const FilterConfig& config) {
  if (!store.empty()) {
    if (scan.empty()) return false;
    const Keyframe& last = store.back();
    const Pose3d rel = inverse(last.odom_pose) * odom_pose;
    if (overlap_rate(scan, rel, last.voxel_map) >= config.overlap_threshold) return false;
  }
  store.append(scan, config.voxel_resolution, odom_pose, scan.timestamp);
  extend_all(set, store);
  return true;
}

MonteCarloSlam::MonteCarloSlam(FilterConfig config, const Pose3d& initial_pose)
    : config_(std::move(config)), odom_pose_(initial_pose) {
  config_.validate();
  particles_ = ParticleSet::uniform(config_.particle_count, initial_pose, config_.rng_seed);
}

FrameReport MonteCarloSlam::step(const Scan& scan, const MotionDelta& motion,
                                 std::optional<double> vertical_dispersion) {
  const auto start = std::chrono::steady_clock::now();
  if (scan.empty()) throw InvalidArgument("step: empty scan");
  const std::uint64_t frame = frame_;

  FrameReport report;
  report.frame = frame;
  report.timestamp = scan.timestamp;
  report.vertical_dispersion = vertical_dispersion.has_value();

  odom_pose_ = odom_pose_ * motion.delta;
  store_.append_odometry(scan.timestamp, odom_pose_);
  predict(particles_, motion, vertical_dispersion, frame, config_.workers);

  const std::size_t n = particles_.size();
  std::vector<double> log_likelihoods(n, 0.0);
  if (!store_.empty()) {
    std::vector<char> looped(n, 0), corrected(n, 0);
    const std::size_t latest = store_.size() - 1;
    parallel_for(config_.workers, n, [&](std::size_t i) {
      Particle& p = particles_[i];
      if (p.dead()) return;
      const auto neighbors = select_neighbor_keyframes(p, store_, config_.neighbor_count);
      if (detect_loop(neighbors, latest, config_.loop_recency_gap)) {
        looped[i] = 1;
        corrected[i] = correct(p, scan, store_, config_, neighbors).applied ? 1 : 0;
      }
      log_likelihoods[i] = particle_log_likelihood(scan, p, store_, neighbors, config_.unmatched_penalty);
    });
    report.loop_count = static_cast<std::size_t>(std::count(looped.begin(), looped.end(), 1));
    report.corrected_count = static_cast<std::size_t>(std::count(corrected.begin(), corrected.end(), 1));
  }

  update_weights(particles_, log_likelihoods);
  report.respawned_count = prune_and_respawn(particles_, config_, log_likelihoods, frame);

  if (frame > 0 && frame % kOrthonormalizeEvery == 0) {
    for (auto& p : particles_.particles) p.current_pose = orthonormalized(p.current_pose);
  }

  report.keyframe_inserted = maybe_insert_keyframe(scan, odom_pose_, store_, particles_, config_);
  keyframe_at_frame_.push_back(store_.size() - 1);

  report.representative = representative(particles_);
  const Particle& rep = particles_[report.representative];
  report.representative_pose = rep.current_pose;
  report.representative_weight = std::exp(rep.log_weight);
  report.live_count = particles_.live_count();
  report.keyframe_count = store_.size();
  ++frame_;
  report.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Trajectory MonteCarloSlam::odometry_trajectory() const {
  Trajectory out;
  out.reserve(store_.odom_trajectory().size());
  for (const auto& s : store_.odom_trajectory()) out.push_back({s.timestamp, s.pose});
  return out;
}

Trajectory MonteCarloSlam::trajectory_of(std::size_t particle) const {
  const Particle& p = particles_.particles.at(particle);
  const auto& odom = store_.odom_trajectory();
  Trajectory out;
  out.reserve(odom.size());
  for (std::size_t f = 0; f < odom.size(); ++f) {
    const Keyframe& kf = store_[keyframe_at_frame_[f]];
    out.push_back({odom[f].timestamp, p.keyframe_poses[kf.id] * (inverse(kf.odom_pose) * odom[f].pose)});
  }
  return out;
}

}  // namespace mcslam
