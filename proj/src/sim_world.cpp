#include "mcslam/sim_world.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mcslam/random.hpp"

namespace mcslam {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Slab test against an axis-aligned box in local coordinates. From inside the
// box the exit distance counts as the hit, so boxes double as rooms.
std::optional<double> intersect_box(const Vector3d& o, const Vector3d& d, const Vector3d& half, double min_t) {
  double t_near = -kInf, t_far = kInf;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (std::abs(o[a]) > half[a]) return std::nullopt;
      continue;
    }
    double t0 = (-half[a] - o[a]) / d[a];
    double t1 = (half[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far) return std::nullopt;
  if (t_near > min_t) return t_near;
  if (t_far > min_t) return t_far;
  return std::nullopt;
}

std::optional<double> intersect_cylinder(const Vector3d& o, const Vector3d& d, double r, double half_h,
                                         double min_t) {
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a == 0.0) return std::nullopt;
  const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
  const double c = o.x() * o.x() + o.y() * o.y() - r * r;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  // numerically stable pair of roots
  const double q = -0.5 * (b + std::copysign(sq, b));
  double t0 = q / a, t1 = q != 0.0 ? c / q : -b / (2.0 * a);
  if (t0 > t1) std::swap(t0, t1);
  for (const double t : {t0, t1}) {
    if (t > min_t && std::abs(o.z() + t * d.z()) <= half_h) return t;
  }
  return std::nullopt;
}

std::optional<double> intersect_plane(const Vector3d& o, const Vector3d& d, const Vector3d& half, double min_t) {
  if (d.z() == 0.0) return std::nullopt;
  const double t = -o.z() / d.z();
  if (!(t > min_t)) return std::nullopt;
  const Vector3d p = o + t * d;
  if (std::abs(p.x()) > half.x() || std::abs(p.y()) > half.y()) return std::nullopt;
  return t;
}

Pose3d yaw_pose(const Vector3d& position, double yaw) {
  return Pose3d(exp(Twist3d(Vector3d::Zero(), Vector3d(0, 0, yaw))).rotation, position);
}

}  // namespace

Primitive Primitive::box(const Vector3d& center, const Vector3d& half_extents) {
  if (!(half_extents.array() > 0.0).all()) throw InvalidArgument("box: half extents must be positive");
  Primitive p;
  p.kind = PrimitiveKind::kBox;
  p.pose = Pose3d::Translation(center);
  p.half_extents = half_extents;
  return p;
}

Primitive Primitive::cylinder(const Vector3d& base_center, double radius, double height) {
  if (!(radius > 0.0) || !(height > 0.0)) throw InvalidArgument("cylinder: radius and height must be positive");
  Primitive p;
  p.kind = PrimitiveKind::kCylinder;
  p.pose = Pose3d::Translation(base_center + Vector3d(0, 0, height / 2));
  p.radius = radius;
  p.half_extents = Vector3d(radius, radius, height / 2);
  return p;
}

Primitive Primitive::plane(const Pose3d& pose, double half_x, double half_y) {
  if (!(half_x > 0.0) || !(half_y > 0.0)) throw InvalidArgument("plane: extents must be positive");
  Primitive p;
  p.kind = PrimitiveKind::kPlane;
  p.pose = pose;
  p.half_extents = Vector3d(half_x, half_y, 0.0);
  return p;
}

std::optional<double> Primitive::intersect(const Vector3d& origin, const Vector3d& direction, double min_t) const {
  const Vector3d o = pose.rotation.transpose() * (origin - pose.translation);
  const Vector3d d = pose.rotation.transpose() * direction;
  switch (kind) {
    case PrimitiveKind::kBox:
      return intersect_box(o, d, half_extents, min_t);
    case PrimitiveKind::kCylinder:
      return intersect_cylinder(o, d, radius, half_extents.z(), min_t);
    case PrimitiveKind::kPlane:
      return intersect_plane(o, d, half_extents, min_t);
  }
  return std::nullopt;
}

void World::validate() const {
  if (!(bounds.min.array() < bounds.max.array()).all()) throw InvalidArgument("world.bounds: min must be < max");
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    const Primitive& p = surfaces[i];
    if (!p.pose.allFinite()) throw InvalidArgument("world.surfaces[" + std::to_string(i) + "]: non-finite pose");
    if (p.kind == PrimitiveKind::kPlane && !std::isfinite(p.half_extents.x() + p.half_extents.y())) {
      if (!bounds.contains(p.pose.translation)) {
        throw InvalidArgument("world.surfaces[" + std::to_string(i) + "]: plane origin outside bounds");
      }
      continue;
    }
    for (int c = 0; c < 8; ++c) {
      const Vector3d corner((c & 1 ? 1 : -1) * p.half_extents.x(), (c & 2 ? 1 : -1) * p.half_extents.y(),
                            (c & 4 ? 1 : -1) * p.half_extents.z());
      if (!bounds.contains(p.pose * corner, 1e-6)) {
        throw InvalidArgument("world.surfaces[" + std::to_string(i) + "]: primitive extends outside bounds");
      }
    }
  }
}

WorldKind parse_world_kind(const std::string& name) {
  if (name == "forest_grid") return WorldKind::kForestGrid;
  if (name == "multi_floor" || name == "multi_floor_elevator") return WorldKind::kMultiFloor;
  if (name == "loop_corridor") return WorldKind::kLoopCorridor;
  throw InvalidArgument("world.kind: unknown world kind '" + name + "'");
}

std::string to_string(WorldKind kind) {
  switch (kind) {
    case WorldKind::kForestGrid:
      return "forest_grid";
    case WorldKind::kMultiFloor:
      return "multi_floor";
    case WorldKind::kLoopCorridor:
      return "loop_corridor";
  }
  return "unknown";
}

namespace {

World forest_grid(const WorldParams& wp) {
  if (wp.grid_rows < 1 || wp.grid_cols < 1) throw InvalidArgument("world.grid_rows/grid_cols: must be >= 1");
  if (!(wp.grid_pitch > 0.0)) throw InvalidArgument("world.grid_pitch: must be > 0");
  if (!(wp.tree_radius > wp.tree_radius_jitter) || wp.tree_radius_jitter < 0.0) {
    throw InvalidArgument("world.tree_radius: must exceed tree_radius_jitter >= 0");
  }
  if (!(2.0 * (wp.tree_radius + wp.tree_radius_jitter + wp.tree_position_jitter) < wp.grid_pitch)) {
    throw InvalidArgument("world.grid_pitch: trees would overlap");
  }
  if (!(wp.tree_height > 0.0)) throw InvalidArgument("world.tree_height: must be > 0");
  World w;
  CounterRng rng(wp.seed, StreamPurpose::kWorld);
  for (int r = 0; r < wp.grid_rows; ++r) {
    for (int c = 0; c < wp.grid_cols; ++c) {
      const double jx = (2.0 * rng.uniform() - 1.0) * wp.tree_position_jitter;
      const double jy = (2.0 * rng.uniform() - 1.0) * wp.tree_position_jitter;
      const double radius = wp.tree_radius + (2.0 * rng.uniform() - 1.0) * wp.tree_radius_jitter;
      w.surfaces.push_back(
          Primitive::cylinder(Vector3d(c * wp.grid_pitch + jx, r * wp.grid_pitch + jy, 0.0), radius, wp.tree_height));
    }
  }
  const double margin = wp.grid_pitch;
  w.surfaces.push_back(Primitive::plane(Pose3d::Identity()));
  w.bounds.min = Vector3d(-margin, -margin, -1.0);
  w.bounds.max = Vector3d((wp.grid_cols - 1) * wp.grid_pitch + margin, (wp.grid_rows - 1) * wp.grid_pitch + margin,
                          wp.tree_height + 1.0);
  return w;
}

// Wall along x or y built from boxes, with optional openings given as
// [from, to] intervals along the wall; openings keep a lintel above
// door_height.
void add_wall(World& w, bool along_x, double fixed, double from, double to, double z0, double height,
              const std::vector<std::pair<double, double>>& openings, double door_height, double thickness = 0.2) {
  auto piece = [&](double a, double b, double za, double zb) {
    if (b - a < 1e-6 || zb - za < 1e-6) return;
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    const Vector3d center = along_x ? Vector3d(mid, fixed, 0.5 * (za + zb)) : Vector3d(fixed, mid, 0.5 * (za + zb));
    const Vector3d extents =
        along_x ? Vector3d(half, thickness / 2, 0.5 * (zb - za)) : Vector3d(thickness / 2, half, 0.5 * (zb - za));
    w.surfaces.push_back(Primitive::box(center, extents));
  };
  double cursor = from;
  for (const auto& [a, b] : openings) {
    piece(cursor, a, z0, z0 + height);
    piece(a, b, z0 + door_height, z0 + height);
    cursor = b;
  }
  piece(cursor, to, z0, z0 + height);
}

World loop_corridor(const WorldParams& wp) {
  const double len = wp.loop_length, wid = wp.loop_width, cw = wp.corridor_width, h = wp.wall_height;
  if (!(len > 2.0 * cw) || !(wid > 2.0 * cw) || !(cw > 0.5) || !(h > 0.5)) {
    throw InvalidArgument("world.loop_length/loop_width/corridor_width: degenerate corridor loop");
  }
  World w;
  // outer walls
  w.surfaces.push_back(Primitive::plane(Pose3d(exp(Twist3d(Vector3d::Zero(), Vector3d(std::numbers::pi / 2, 0, 0))).rotation,
                                               Vector3d(len / 2, 0, h / 2)),
                                        len / 2, h / 2));
  w.surfaces.push_back(Primitive::plane(Pose3d(exp(Twist3d(Vector3d::Zero(), Vector3d(std::numbers::pi / 2, 0, 0))).rotation,
                                               Vector3d(len / 2, wid, h / 2)),
                                        len / 2, h / 2));
  w.surfaces.push_back(Primitive::plane(Pose3d(exp(Twist3d(Vector3d::Zero(), Vector3d(0, std::numbers::pi / 2, 0))).rotation,
                                               Vector3d(0, wid / 2, h / 2)),
                                        h / 2, wid / 2));
  w.surfaces.push_back(Primitive::plane(Pose3d(exp(Twist3d(Vector3d::Zero(), Vector3d(0, std::numbers::pi / 2, 0))).rotation,
                                               Vector3d(len, wid / 2, h / 2)),
                                        h / 2, wid / 2));
  // floor
  w.surfaces.push_back(Primitive::plane(Pose3d::Translation(Vector3d(len / 2, wid / 2, 0)), len / 2, wid / 2));
  // inner block
  w.surfaces.push_back(Primitive::box(Vector3d(len / 2, wid / 2, h / 2), Vector3d(len / 2 - cw, wid / 2 - cw, h / 2)));
  // irregular posts along the outer walls so the corridor is not degenerate
  CounterRng rng(wp.seed, StreamPurpose::kWorld);
  for (double x = 3.0; x < len - 2.0; x += 5.0 + 2.0 * rng.uniform()) {
    const double s = 0.2 + 0.2 * rng.uniform();
    w.surfaces.push_back(Primitive::box(Vector3d(x, s, 0.75), Vector3d(s, s, 0.75)));
    w.surfaces.push_back(Primitive::box(Vector3d(len - x, wid - s, 0.6), Vector3d(s, s, 0.6)));
  }
  for (double y = 3.0; y < wid - 2.0; y += 5.0 + 2.0 * rng.uniform()) {
    const double s = 0.2 + 0.2 * rng.uniform();
    w.surfaces.push_back(Primitive::box(Vector3d(s, y, 0.9), Vector3d(s, s, 0.9)));
    w.surfaces.push_back(Primitive::box(Vector3d(len - s, wid - y, 0.5), Vector3d(s, s, 0.5)));
  }
  w.bounds.min = Vector3d(-0.5, -0.5, -0.5);
  w.bounds.max = Vector3d(len + 0.5, wid + 0.5, h + 0.5);
  return w;
}

}  // namespace

namespace sim_layout {

// Multi-floor layout shared by the world and script generators. Floor plan
// spans x in [0, W], y in [0, D]; a core block sits in the middle so every
// floor has a corridor ring. The stair hall is attached at x in [W, W + 10],
// y in [0, 6]; the elevator shaft at x in [-2.5, 0], y around D / 2.
struct MultiFloor {
  double w, d, h, slab, core_margin;
  int floors;
  double stair_len = 10.0, stair_wid = 6.0;
  double shaft_depth = 2.5, shaft_half = 1.25;
  double door_height = 2.2;

  explicit MultiFloor(const WorldParams& p)
      : w(p.floor_width), d(p.floor_depth), h(p.floor_height), slab(p.slab_thickness), core_margin(4.0),
        floors(p.floor_count) {}

  double shaft_y() const { return d / 2; }
  // corridor ring centre line at core_margin / 2 from the outer walls
  double ring() const { return core_margin / 2; }
  // distinguishing feature of floor f: a box on the inner face of the outer
  // wall y = d, at an x that differs per floor
  double feature_x(int f) const { return 5.0 + 6.0 * f; }
};

}  // namespace sim_layout

namespace {

World multi_floor(const WorldParams& wp) {
  if (wp.floor_count < 2) throw InvalidArgument("world.floor_count: must be >= 2");
  if (!(wp.floor_height > 2.5)) throw InvalidArgument("world.floor_height: must be > 2.5");
  if (!(wp.floor_width >= 16.0) || !(wp.floor_depth >= 12.0)) {
    throw InvalidArgument("world.floor_width/floor_depth: floor plan too small (need >= 16 x 12)");
  }
  if (!(wp.slab_thickness > 0.0 && wp.slab_thickness < 1.0)) {
    throw InvalidArgument("world.slab_thickness: must lie in (0, 1)");
  }
  const sim_layout::MultiFloor L(wp);
  World w;
  const double top = L.floors * L.h;
  const double stair_x1 = L.w + L.stair_len;
  for (int f = 0; f <= L.floors; ++f) {
    const double z = f * L.h;
    // floor slab of the main plan (the roof for f == floors)
    w.surfaces.push_back(
        Primitive::box(Vector3d(L.w / 2, L.d / 2, z - L.slab / 2), Vector3d(L.w / 2, L.d / 2, L.slab / 2)));
    // stair-hall landings at the door end
    w.surfaces.push_back(Primitive::box(Vector3d(L.w + 0.75, L.stair_wid / 2, z - L.slab / 2),
                                        Vector3d(0.75, L.stair_wid / 2, L.slab / 2)));
    if (f == L.floors) break;
    // half landing at the far end
    w.surfaces.push_back(Primitive::box(Vector3d(stair_x1 - 0.75, L.stair_wid / 2, z + L.h / 2 - L.slab / 2),
                                        Vector3d(0.75, L.stair_wid / 2, L.slab / 2)));
    // two flights as tilted planes: y in [0, 3] rising towards +x, y in [3, 6]
    // rising back towards the door
    const double run = L.stair_len - 3.0;
    const double slope = std::atan2(L.h / 2, run);
    const double half_len = 0.5 * std::hypot(run, L.h / 2);
    const Matrix3d up_x = exp(Twist3d(Vector3d::Zero(), Vector3d(0, -slope, 0))).rotation;
    const Matrix3d up_mx = exp(Twist3d(Vector3d::Zero(), Vector3d(0, slope, 0))).rotation;
    w.surfaces.push_back(Primitive::plane(Pose3d(up_x, Vector3d(L.w + 1.5 + run / 2, 1.5, z + L.h / 4)), half_len, 1.5));
    w.surfaces.push_back(
        Primitive::plane(Pose3d(up_mx, Vector3d(L.w + 1.5 + run / 2, 4.5, z + 3 * L.h / 4)), half_len, 1.5));

    // walls of this storey; door from the plan into the stair hall at
    // y in [1, 3], door into the elevator shaft around shaft_y
    const double hs = L.h - L.slab;
    add_wall(w, true, 0.0, 0.0, L.w, z, hs, {}, L.door_height);
    add_wall(w, true, L.d, 0.0, L.w, z, hs, {}, L.door_height);
    add_wall(w, false, 0.0, 0.0, L.d, z, hs, {{L.shaft_y() - 0.8, L.shaft_y() + 0.8}}, L.door_height);
    add_wall(w, false, L.w, 0.0, L.d, z, hs, {{1.0, 3.0}}, L.door_height);
    // core block
    w.surfaces.push_back(Primitive::box(Vector3d(L.w / 2, L.d / 2, z + hs / 2),
                                        Vector3d(L.w / 2 - L.core_margin, L.d / 2 - L.core_margin, hs / 2)));
    // pillars that break the symmetry of the ring (identical on every floor)
    w.surfaces.push_back(Primitive::box(Vector3d(3.0, 0.5, z + hs / 2), Vector3d(0.3, 0.3, hs / 2)));
    w.surfaces.push_back(Primitive::box(Vector3d(L.w - 6.0, L.d - 0.6, z + hs / 2), Vector3d(0.4, 0.4, hs / 2)));
    w.surfaces.push_back(Primitive::box(Vector3d(L.w - 0.5, L.d - 4.0, z + 0.6), Vector3d(0.3, 0.8, 0.6)));
    // distinguishing feature: a cabinet against the north wall
    w.surfaces.push_back(Primitive::box(Vector3d(L.feature_x(f), L.d - 0.1 - 0.35, z + 0.9), Vector3d(0.8, 0.35, 0.9)));
  }
  // stair hall enclosure and elevator shaft, full height
  add_wall(w, true, 0.0, L.w, stair_x1, 0.0, top, {}, 0.0);
  add_wall(w, true, L.stair_wid, L.w, stair_x1, 0.0, top, {}, 0.0);
  add_wall(w, false, stair_x1, 0.0, L.stair_wid, 0.0, top, {}, 0.0);
  add_wall(w, false, -L.shaft_depth, L.shaft_y() - L.shaft_half, L.shaft_y() + L.shaft_half, 0.0, top, {}, 0.0);
  add_wall(w, true, L.shaft_y() - L.shaft_half, -L.shaft_depth, 0.0, 0.0, top, {}, 0.0);
  add_wall(w, true, L.shaft_y() + L.shaft_half, -L.shaft_depth, 0.0, 0.0, top, {}, 0.0);

  w.bounds.min = Vector3d(-L.shaft_depth - 0.5, -0.5, -1.0);
  w.bounds.max = Vector3d(stair_x1 + 0.5, L.d + 0.5, top + 1.0);
  return w;
}

}  // namespace

World generate_world(WorldKind kind, const WorldParams& params) {
  World w;
  switch (kind) {
    case WorldKind::kForestGrid:
      w = forest_grid(params);
      break;
    case WorldKind::kMultiFloor:
      w = multi_floor(params);
      break;
    case WorldKind::kLoopCorridor:
      w = loop_corridor(params);
      break;
  }
  w.validate();
  return w;
}

World transformed(const World& world, const Pose3d& pose) {
  World out;
  out.surfaces = world.surfaces;
  for (auto& p : out.surfaces) p.pose = pose * p.pose;
  out.bounds.min = Vector3d::Constant(kInf);
  out.bounds.max = Vector3d::Constant(-kInf);
  for (int c = 0; c < 8; ++c) {
    const Vector3d corner(c & 1 ? world.bounds.max.x() : world.bounds.min.x(),
                          c & 2 ? world.bounds.max.y() : world.bounds.min.y(),
                          c & 4 ? world.bounds.max.z() : world.bounds.min.z());
    const Vector3d moved = pose * corner;
    out.bounds.min = out.bounds.min.cwiseMin(moved);
    out.bounds.max = out.bounds.max.cwiseMax(moved);
  }
  return out;
}

void SensorModel::validate() const {
  if (ray_count < 1) throw InvalidArgument("sensor.ray_count: must be >= 1");
  if (!(max_range > 0.0)) throw InvalidArgument("sensor.max_range: must be > 0");
  if (!(horizontal_fov > 0.0 && horizontal_fov <= 2.0 * std::numbers::pi)) {
    throw InvalidArgument("sensor.horizontal_fov: must lie in (0, 2 pi]");
  }
  if (!(vertical_fov > 0.0 && vertical_fov < std::numbers::pi)) {
    throw InvalidArgument("sensor.vertical_fov: must lie in (0, pi)");
  }
  if (!(range_noise_sigma >= 0.0)) throw InvalidArgument("sensor.range_noise_sigma: must be >= 0");
}

std::vector<Vector3d> ray_directions(const SensorModel& model) {
  model.validate();
  const auto rings = static_cast<std::size_t>(
      std::max(1.0, std::round(std::sqrt(static_cast<double>(model.ray_count) * model.vertical_fov / model.horizontal_fov))));
  const std::size_t cols = (model.ray_count + rings - 1) / rings;
  std::vector<Vector3d> dirs;
  dirs.reserve(model.ray_count);
  for (std::size_t r = 0; r < rings && dirs.size() < model.ray_count; ++r) {
    const double el = -model.vertical_fov / 2 + model.vertical_fov * (static_cast<double>(r) + 0.5) / rings;
    for (std::size_t c = 0; c < cols && dirs.size() < model.ray_count; ++c) {
      const double az = -model.horizontal_fov / 2 + model.horizontal_fov * (static_cast<double>(c) + 0.5) / cols;
      dirs.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
  }
  return dirs;
}

std::vector<Vector3d> simulate_scan(const World& world, const Pose3d& true_pose, const SensorModel& model,
                                    std::uint64_t seed, std::uint64_t frame) {
  if (!world.bounds.contains(true_pose.translation)) throw InvalidArgument("simulate_scan: pose outside world bounds");
  const auto dirs = ray_directions(model);
  CounterRng rng(seed, StreamPurpose::kScan, frame);
  std::vector<Vector3d> points;
  points.reserve(dirs.size());
  for (const Vector3d& local : dirs) {
    const double noise = model.range_noise_sigma * rng.gaussian();
    const Vector3d dir = true_pose.rotation * local;
    double best = model.max_range;
    bool hit = false;
    for (const Primitive& p : world.surfaces) {
      const auto t = p.intersect(true_pose.translation, dir);
      if (!t || *t >= best) continue;
      if (!world.bounds.contains(true_pose.translation + *t * dir)) continue;
      best = *t;
      hit = true;
    }
    if (!hit) continue;
    if (model.backward_crop && local.x() < 0.0) continue;
    points.push_back((best + noise) * local);
  }
  return points;
}

void TrajectoryScript::validate() const {
  if (waypoints.size() < 2) throw InvalidArgument("script.waypoints: need at least 2 waypoints");
  check_increasing(waypoints, "script.waypoints");
  if (!odom_noise.allFinite() || !odom_noise.isApprox(odom_noise.transpose(), 1e-12)) {
    throw InvalidArgument("script.odom_noise: must be a finite symmetric matrix");
  }
  if (!odom_bias.allFinite()) throw InvalidArgument("script.odom_bias: must be finite");
  for (const auto& seg : elevator_segments) {
    if (!(seg.start_time < seg.end_time)) throw InvalidArgument("script.elevator_segments: start must be < end");
  }
  if (!(elevator_covariance_scale >= 1.0)) throw InvalidArgument("script.elevator_covariance_scale: must be >= 1");
}

bool TrajectoryScript::in_elevator(double time) const {
  return std::any_of(elevator_segments.begin(), elevator_segments.end(),
                     [&](const ElevatorSegment& s) { return time > s.start_time && time <= s.end_time; });
}

std::vector<MotionDelta> simulate_odometry(const TrajectoryScript& script, std::uint64_t seed) {
  script.validate();
  const Matrix6d s = covariance_sqrt(script.odom_noise);
  std::vector<MotionDelta> out;
  out.reserve(script.waypoints.size() - 1);
  for (std::size_t i = 1; i < script.waypoints.size(); ++i) {
    MotionDelta m;
    if (script.in_elevator(script.waypoints[i].timestamp)) {
      m.delta = Pose3d::Identity();
      m.covariance = script.odom_noise * script.elevator_covariance_scale;
    } else {
      CounterRng rng(seed, StreamPurpose::kOdometry, i);
      const Vector6d z = rng.gaussian_vector<6>();
      const Twist3d noise(Vector6d(script.odom_bias + s * z));
      m.delta = inverse(script.waypoints[i - 1].pose) * script.waypoints[i].pose * exp(noise);
      m.covariance = script.odom_noise;
    }
    out.push_back(m);
  }
  return out;
}

bool detect_elevator(std::span<const Vector3d> points, double threshold) {
  if (points.empty()) throw InvalidArgument("detect_elevator: empty scan");
  std::vector<double> r(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) r[i] = points[i].norm();
  const std::size_t mid = r.size() / 2;
  std::nth_element(r.begin(), r.begin() + mid, r.end());
  double median = r[mid];
  if (r.size() % 2 == 0) median = 0.5 * (median + *std::max_element(r.begin(), r.begin() + mid));
  return median < threshold;
}

namespace {

// Samples a polyline at constant speed; heading follows the path direction
// smoothed over +-1 m so corners turn over a few frames.
class Tour {
 public:
  Tour(const ScriptParams& p) : p_(p) {}

  void add(const Vector3d& point) { path_.push_back(point); }

  // Walks the current polyline, appending waypoints; keeps the final point.
  void walk(Trajectory& out, double& time) {
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < path_.size(); ++i) cum.push_back(cum.back() + (path_[i] - path_[i - 1]).norm());
    const double total = cum.back();
    auto at = [&](double s) {
      s = std::clamp(s, 0.0, total);
      const auto it = std::upper_bound(cum.begin(), cum.end(), s);
      const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), path_.size() - 1);
      const double seg = cum[i] - cum[i - 1];
      const double a = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
      return Vector3d(path_[i - 1] + a * (path_[i] - path_[i - 1]));
    };
    const auto steps = static_cast<std::size_t>(std::floor(total / p_.speed + 1e-9));
    const std::size_t first = out.empty() ? 0 : 1;
    for (std::size_t k = first; k <= steps; ++k) {
      const double s = k * p_.speed;
      const Vector3d pos = at(s);
      const Vector3d ahead = at(s + 1.0) - at(s - 1.0);
      double yaw = heading_;
      if (ahead.head<2>().norm() > 1e-6) yaw = std::atan2(ahead.y(), ahead.x());
      heading_ = yaw;
      out.push_back({time, yaw_pose(pos + Vector3d(0, 0, p_.sensor_height), yaw)});
      time += p_.frame_period;
    }
    const Vector3d last = path_.back();
    path_ = {last};
  }

  // forget the path so far; the next walk starts at `at`
  void restart(const Vector3d& at) { path_ = {at}; }

  double heading() const { return heading_; }
  void set_heading(double h) { heading_ = h; }

 private:
  ScriptParams p_;
  std::vector<Vector3d> path_;
  double heading_ = 0.0;
};

}  // namespace

TrajectoryScript generate_script(WorldKind kind, const WorldParams& wp, const ScriptParams& sp) {
  if (!(sp.speed > 0.0) || !(sp.frame_period > 0.0)) throw InvalidArgument("script: speed and frame_period must be > 0");
  TrajectoryScript script;
  Vector6d sigma;
  sigma << Vector3d::Constant(sp.translation_sigma), Vector3d::Constant(sp.rotation_sigma);
  script.odom_noise = sigma.cwiseAbs2().asDiagonal();
  script.odom_bias(0) = sp.scale_drift;
  script.odom_bias(5) = sp.yaw_drift;
  double time = 0.0;
  Tour tour(sp);
  switch (kind) {
    case WorldKind::kForestGrid: {
      // lap around an interior block of the lattice, in the lanes between
      // rows, ending where it started
      const double p = wp.grid_pitch;
      const double x0 = 1.5 * p, y0 = 1.5 * p;
      const double x1 = x0 + std::max(1, wp.grid_cols / 2) * p, y1 = y0 + std::max(1, wp.grid_rows / 3) * p;
      for (const auto& v : {Vector3d(x0, y0, 0), Vector3d(x1, y0, 0), Vector3d(x1, y1, 0), Vector3d(x0, y1, 0),
                            Vector3d(x0, y0, 0), Vector3d(x0 + 2.0 * p, y0, 0)}) {
        tour.add(v);
      }
      tour.walk(script.waypoints, time);
      break;
    }
    case WorldKind::kLoopCorridor: {
      const double c = wp.corridor_width / 2, l = wp.loop_length, w = wp.loop_width;
      for (const auto& v : {Vector3d(c + 2.0, c, 0), Vector3d(l - c, c, 0), Vector3d(l - c, w - c, 0),
                            Vector3d(c, w - c, 0), Vector3d(c, c, 0), Vector3d(c + 12.0, c, 0)}) {
        tour.add(v);
      }
      tour.walk(script.waypoints, time);
      break;
    }
    case WorldKind::kMultiFloor: {
      const sim_layout::MultiFloor L(wp);
      const double r = L.ring();
      const int top = L.floors - 1;
      const int target = std::max(0, top - 1);
      auto lap = [&](double z) {
        // counter-clockwise ring starting and ending at the stair door
        for (const auto& v : {Vector3d(L.w - r, 2.0, z), Vector3d(L.w - r, L.d - r, z), Vector3d(r, L.d - r, z),
                              Vector3d(r, r, z), Vector3d(L.w - r - 1.0, r, z)}) {
          tour.add(v);
        }
      };
      auto climb = [&](int f) {
        const double z = f * L.h;
        for (const auto& v : {Vector3d(L.w + 0.8, 1.5, z), Vector3d(L.w + 1.5, 1.5, z),
                              Vector3d(L.w + L.stair_len - 1.5, 1.5, z + L.h / 2),
                              Vector3d(L.w + L.stair_len - 0.8, 3.0, z + L.h / 2),
                              Vector3d(L.w + L.stair_len - 1.5, 4.5, z + L.h / 2), Vector3d(L.w + 1.5, 4.5, z + L.h),
                              Vector3d(L.w + 0.8, 2.0, z + L.h), Vector3d(L.w - r, 2.0, z + L.h)}) {
          tour.add(v);
        }
      };
      tour.add(Vector3d(L.w - r, 2.0, 0.0));
      for (int f = 0; f < top; ++f) {
        lap(f * L.h);
        climb(f);
      }
      // top floor: walk round to the elevator door and step inside
      const double zt = top * L.h;
      for (const auto& v : {Vector3d(L.w - r, L.d - r, zt), Vector3d(r, L.d - r, zt), Vector3d(r, L.shaft_y(), zt),
                            Vector3d(-L.shaft_depth / 2, L.shaft_y(), zt)}) {
        tour.add(v);
      }
      tour.walk(script.waypoints, time);
      // turn round in the cabin to face the door, odometry still valid
      Pose3d cabin = script.waypoints.back().pose;
      const double yaw0 = std::atan2(cabin.rotation(1, 0), cabin.rotation(0, 0));
      const double turn = std::remainder(0.0 - yaw0, 2.0 * std::numbers::pi);
      const int turn_steps = static_cast<int>(std::ceil(std::abs(turn) / 0.4));
      for (int k = 1; k <= turn_steps; ++k) {
        cabin = yaw_pose(cabin.translation, yaw0 + turn * k / turn_steps);
        script.waypoints.push_back({time, cabin});
        time += sp.frame_period;
      }
      // ride down: constant xy and heading, odometry fails
      ElevatorSegment seg;
      seg.start_time = script.waypoints.back().timestamp;
      seg.floor_delta = (target - top) * L.h;
      for (std::size_t k = 1; k <= sp.elevator_frames; ++k) {
        Pose3d p = cabin;
        p.translation.z() += seg.floor_delta * static_cast<double>(k) / sp.elevator_frames;
        script.waypoints.push_back({time, p});
        time += sp.frame_period;
      }
      seg.end_time = script.waypoints.back().timestamp;
      script.elevator_segments.push_back(seg);
      // walk out and along the north corridor past the feature
      const double zg = target * L.h;
      tour.restart(Vector3d(-L.shaft_depth / 2, L.shaft_y(), zg));
      tour.set_heading(0.0);
      for (const auto& v : {Vector3d(r, L.shaft_y(), zg), Vector3d(r, L.d - r, zg),
                            Vector3d(std::min(L.w - r, L.feature_x(target) + sp.feature_dwell), L.d - r, zg)}) {
        tour.add(v);
      }
      tour.walk(script.waypoints, time);
      break;
    }
  }
  script.validate();
  return script;
}

}  // namespace mcslam
