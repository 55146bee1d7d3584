#pragma once

// File formats: TUM trajectories, ASCII PLY point clouds, JSON for configs,
// worlds, particle snapshots and per-frame reports.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mcslam/evaluation.hpp"
#include "mcslam/filter.hpp"
#include "mcslam/sim_world.hpp"
#include "mcslam/trajectory.hpp"

namespace mcslam {

using Json = nlohmann::json;

/// "timestamp tx ty tz qx qy qz qw" per line. `digits` significant digits
/// for every number; 17 round-trips doubles exactly.
void write_tum(const std::filesystem::path& path, const Trajectory& trajectory, int digits = 10);
Trajectory read_tum(const std::filesystem::path& path);

/// ASCII PLY with float x y z vertices.
void write_ply(const std::filesystem::path& path, const std::vector<Vector3d>& points);
std::vector<Vector3d> read_ply(const std::filesystem::path& path);

Json load_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& doc);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Applies environment overrides: MCSLAM_FILTER__OVERLAP_THRESHOLD=0.5 sets
/// doc["filter"]["overlap_threshold"]. Values are parsed as JSON when
/// possible, otherwise kept as strings.
void apply_env_overrides(Json& doc, const std::string& prefix = "MCSLAM_");

Json pose_to_json(const Pose3d& pose);
Pose3d pose_from_json(const Json& j, const std::string& where);

// Reading fills only the keys present; unknown keys are errors so typos in
// configs do not go unnoticed. Errors carry the dotted field path.
Json to_json(const FilterConfig& c);
void from_json(const Json& j, FilterConfig& c, const std::string& where = "filter");
Json to_json(const WorldParams& p);
void from_json(const Json& j, WorldParams& p, const std::string& where = "world");
Json to_json(const ScriptParams& p);
void from_json(const Json& j, ScriptParams& p, const std::string& where = "script");
Json to_json(const SensorModel& m);
void from_json(const Json& j, SensorModel& m, const std::string& where = "sensor");

Json to_json(const World& world);
World world_from_json(const Json& j);
Json to_json(const TrajectoryScript& script);
TrajectoryScript script_from_json(const Json& j);

Json to_json(const FrameReport& report);
Json to_json(const AteReport& report);

Json motion_to_json(const MotionDelta& m, double timestamp);
MotionDelta motion_from_json(const Json& j, const std::string& where);

struct SnapshotParticle {
  Pose3d pose;
  double weight = 0.0;
};

struct Snapshot {
  std::size_t frame = 0;
  double timestamp = 0.0;
  std::vector<SnapshotParticle> particles;
};

Snapshot make_snapshot(const ParticleSet& set, std::size_t frame, double timestamp);
Json to_json(const Snapshot& snapshot);
Snapshot snapshot_from_json(const Json& j);

}  // namespace mcslam
