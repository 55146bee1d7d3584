#pragma once

// Synthetic worlds made of analytic primitives, a ray-casting range sensor,
// and noisy odometry along scripted trajectories.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcslam/filter.hpp"
#include "mcslam/point_cloud.hpp"
#include "mcslam/se3.hpp"
#include "mcslam/trajectory.hpp"

namespace mcslam {

enum class PrimitiveKind { kBox, kCylinder, kPlane };

/// Geometry lives in the primitive's local frame, placed by `pose`:
///   box      - [-half_extents, half_extents]
///   cylinder - side surface x^2 + y^2 = radius^2 for |z| <= half_extents.z()
///   plane    - z = 0 with |x| <= half_extents.x(), |y| <= half_extents.y()
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kBox;
  Pose3d pose;
  Vector3d half_extents = Vector3d::Ones();
  double radius = 0.0;

  static Primitive box(const Vector3d& center, const Vector3d& half_extents);
  static Primitive cylinder(const Vector3d& base_center, double radius, double height);
  static Primitive plane(const Pose3d& pose, double half_x = std::numeric_limits<double>::infinity(),
                         double half_y = std::numeric_limits<double>::infinity());

  /// Distance along the unit ray to the first surface hit beyond min_t.
  std::optional<double> intersect(const Vector3d& origin, const Vector3d& direction, double min_t = 1e-9) const;
};

struct Bounds {
  Vector3d min = Vector3d::Constant(-1e3);
  Vector3d max = Vector3d::Constant(1e3);
  bool contains(const Vector3d& p, double tol = 1e-9) const {
    return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
  }
};

struct World {
  std::vector<Primitive> surfaces;
  Bounds bounds;

  /// Throws InvalidArgument if a finite primitive pokes out of bounds.
  void validate() const;
};

enum class WorldKind { kForestGrid, kMultiFloor, kLoopCorridor };

WorldKind parse_world_kind(const std::string& name);
std::string to_string(WorldKind kind);

struct WorldParams {
  // forest_grid
  double grid_pitch = 5.0;
  int grid_rows = 10;
  int grid_cols = 10;
  double tree_radius = 0.3;
  double tree_radius_jitter = 0.05;
  double tree_position_jitter = 0.05;
  double tree_height = 6.0;
  // multi_floor
  int floor_count = 3;
  double floor_height = 3.5;
  double floor_width = 24.0;   // x extent of a floor
  double floor_depth = 14.0;   // y extent of a floor
  double slab_thickness = 0.3;
  // loop_corridor
  double loop_length = 40.0;
  double loop_width = 30.0;
  double corridor_width = 3.0;
  double wall_height = 3.0;
  std::uint64_t seed = 0;
};

World generate_world(WorldKind kind, const WorldParams& params);

/// World with every primitive moved by `pose` (bounds grow to the box around
/// the moved corners).
World transformed(const World& world, const Pose3d& pose);

struct SensorModel {
  std::size_t ray_count = 2000;
  double max_range = 30.0;
  double horizontal_fov = 2.0 * 3.14159265358979323846;
  double vertical_fov = 1.0;  // centred on the horizontal plane
  double range_noise_sigma = 0.01;
  bool backward_crop = false;

  void validate() const;
};

/// Unit ray directions in the sensor frame: a grid of elevation rings by
/// azimuth columns, truncated to ray_count.
std::vector<Vector3d> ray_directions(const SensorModel& model);

/// First hits in the sensor frame with Gaussian range noise. An empty result
/// means the sensor saw nothing. Noise for ray r is the r-th draw of the
/// (seed, frame) scan stream whether or not the ray hits.
std::vector<Vector3d> simulate_scan(const World& world, const Pose3d& true_pose, const SensorModel& model,
                                    std::uint64_t seed, std::uint64_t frame);

struct ElevatorSegment {
  double start_time = 0.0;
  double end_time = 0.0;
  double floor_delta = 0.0;
};

struct TrajectoryScript {
  Trajectory waypoints;
  Matrix6d odom_noise = Matrix6d::Zero();
  Vector6d odom_bias = Vector6d::Zero();  // systematic drift per step, (rho, phi)
  std::vector<ElevatorSegment> elevator_segments;
  double elevator_covariance_scale = 4.0;

  void validate() const;
  /// True if the step ending at `time` lies inside an elevator segment.
  bool in_elevator(double time) const;
};

/// One delta per consecutive waypoint pair: the true relative motion right-
/// composed with exp(bias + noise), noise ~ N(0, odom_noise). Inside elevator
/// segments the delta is the identity and the covariance is scaled up.
std::vector<MotionDelta> simulate_odometry(const TrajectoryScript& script, std::uint64_t seed);

/// True iff the median distance of the points from the sensor origin is
/// below `threshold`. Throws InvalidArgument on an empty scan.
bool detect_elevator(std::span<const Vector3d> points, double threshold = 2.0);

struct ScriptParams {
  double speed = 1.0;        // m per frame
  double frame_period = 0.1; // s
  double translation_sigma = 0.02;  // odometry noise per frame
  double rotation_sigma = 0.002;
  double sensor_height = 1.2;
  std::size_t elevator_frames = 10;
  double feature_dwell = 8.0;  // m walked past the elevator exit
  double yaw_drift = 0.0;      // odometry heading bias, rad per frame
  double scale_drift = 0.0;    // odometry forward bias, m per frame
};

/// The scripted tour used by each preset:
///   forest_grid   - a lap around the interior rows ending back at the start
///   loop_corridor - one lap of the corridor loop plus a short overlap
///   multi_floor   - a lap of floor 1, up the stairs to the top floor, a
///                   lap there, the elevator down to the middle floor, then a
///                   walk past that floor's distinguishing feature
TrajectoryScript generate_script(WorldKind kind, const WorldParams& world, const ScriptParams& params);

}  // namespace mcslam
