#pragma once

// End-to-end experiments: simulate a dataset, run the filter over it, write
// trajectories, snapshots and reports. A config plus its seed determines
// every output except wall-clock timing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcslam/evaluation.hpp"
#include "mcslam/filter.hpp"
#include "mcslam/io.hpp"
#include "mcslam/sim_world.hpp"

namespace mcslam {

struct ElevatorHeuristic {
  bool enabled = true;
  double threshold = 2.0;       // median point range, m
  double vertical_sigma = 0.5;  // random-walk step, m per frame
};

struct ExperimentConfig {
  std::string name = "experiment";
  WorldKind world_kind = WorldKind::kLoopCorridor;
  WorldParams world;
  ScriptParams script;
  SensorModel sensor;
  FilterConfig filter;
  ElevatorHeuristic elevator;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::vector<std::size_t> snapshot_frames;
  bool snapshot_after_elevator = true;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

/// Keys not present in `j` keep their defaults. The filter seed follows
/// `seed` unless filter.rng_seed is given explicitly.
ExperimentConfig config_from_json(const Json& j);
Json to_json(const ExperimentConfig& config);

struct Dataset {
  std::vector<std::vector<Vector3d>> scans;  // sensor frame, float precision
  Trajectory ground_truth;
  std::vector<MotionDelta> odometry;  // one per frame; frame 0 is the identity
  std::vector<ElevatorSegment> elevator_segments;

  std::size_t size() const { return scans.size(); }
};

Dataset generate_dataset(const ExperimentConfig& config);

/// scans/NNNNNN.ply, ground_truth.tum, odometry.jsonl, dataset.json,
/// world.json, script.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset, const ExperimentConfig& config);
Dataset read_dataset(const std::filesystem::path& dir);

struct ExperimentReport {
  std::size_t frames = 0;
  std::size_t keyframes = 0;
  std::size_t final_live = 0;
  AteReport ate_representative;
  AteReport ate_dead_reckoning;
  Pose3d final_representative_pose;
  Pose3d final_ground_truth_pose;
  std::optional<std::size_t> elevator_exit_frame;
  double mean_frame_ms = 0.0;
  double total_seconds = 0.0;
  Trajectory representative;
  Trajectory dead_reckoning;
  std::vector<Snapshot> snapshots;
  std::vector<FrameReport> frame_reports;
};

Json to_json(const ExperimentReport& report);

/// Runs the filter over `dataset`; writes outputs when config.output_dir is
/// set. FilterDegeneracy is rethrown with the frame index.
ExperimentReport run_slam(const Dataset& dataset, const ExperimentConfig& config);

inline ExperimentReport run_experiment(const ExperimentConfig& config) {
  return run_slam(generate_dataset(config), config);
}

struct Cluster {
  Vector3d center = Vector3d::Zero();
  std::size_t members = 0;
  double weight_mass = 0.0;
};

/// k-means over particle translations with farthest-point seeding (no
/// randomness), up to max_clusters; centers closer than merge_distance are
/// merged afterwards. Sorted by weight mass, heaviest first.
std::vector<Cluster> cluster_particles(const Snapshot& snapshot, std::size_t max_clusters = 6,
                                       double merge_distance = 1.5);

Json to_json(const std::vector<Cluster>& clusters);

}  // namespace mcslam
