#include "mcslam/io.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

extern char** environ;

namespace mcslam {
namespace {

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  return out;
}

// Reads `key` into `value` if present, wrapping type errors with the path.
template <typename T>
void read_field(const Json& j, const char* key, T& value, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    value = it->get<T>();
  } catch (const Json::exception& e) {
    throw InvalidArgument(where + "." + key + ": " + e.what());
  }
}

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw InvalidArgument(where + "." + key + ": unknown field");
  }
}

Json vec_to_json(const Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vector3d vec_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument(where + ": expected [x, y, z]");
  return Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Json matrix6_to_json(const Matrix6d& m) {
  Json a = Json::array();
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) a.push_back(m(r, c));
  }
  return a;
}

Matrix6d matrix6_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 36) throw InvalidArgument(where + ": expected 36 numbers (row-major 6x6)");
  Matrix6d m;
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) m(r, c) = j[6 * r + c].get<double>();
  }
  return m;
}

}  // namespace

void write_tum(const std::filesystem::path& path, const Trajectory& trajectory, int digits) {
  std::ofstream out = open_out(path);
  for (const auto& s : trajectory) {
    Eigen::Quaterniond q(s.pose.rotation);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    out << fmt(s.timestamp, digits) << ' ' << fmt(s.pose.translation.x(), digits) << ' '
        << fmt(s.pose.translation.y(), digits) << ' ' << fmt(s.pose.translation.z(), digits) << ' '
        << fmt(q.x(), digits) << ' ' << fmt(q.y(), digits) << ' ' << fmt(q.z(), digits) << ' '
        << fmt(q.w(), digits) << '\n';
  }
}

Trajectory read_tum(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  Trajectory out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) {
      if (!(ss >> x)) throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected 8 numbers");
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 0.0)) throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": zero quaternion");
    out.push_back({v[0], Pose3d(q.normalized().toRotationMatrix(), Vector3d(v[1], v[2], v[3]))});
  }
  check_increasing(out, path.string());
  return out;
}

void write_ply(const std::filesystem::path& path, const std::vector<Vector3d>& points) {
  std::ofstream out = open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : points) {
    out << fmt(static_cast<float>(p.x()), 9) << ' ' << fmt(static_cast<float>(p.y()), 9) << ' '
        << fmt(static_cast<float>(p.z()), 9) << '\n';
  }
}

std::vector<Vector3d> read_ply(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw InvalidArgument(path.string() + ": not a PLY file");
  std::size_t count = 0;
  std::vector<std::string> props;
  std::vector<bool> single;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string kind;
      ss >> kind;
      if (kind != "ascii") throw InvalidArgument(path.string() + ": only ASCII PLY is supported");
    } else if (word == "element") {
      std::string name;
      ss >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ss >> count;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
      single.push_back(type == "float" || type == "float32");
    } else if (word == "end_header") {
      break;
    }
  }
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i] == "x") ix = static_cast<int>(i);
    if (props[i] == "y") iy = static_cast<int>(i);
    if (props[i] == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw InvalidArgument(path.string() + ": vertex needs x, y, z properties");
  std::vector<Vector3d> points;
  points.reserve(count);
  std::vector<double> row(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      std::string tok;
      if (!(in >> tok)) throw InvalidArgument(path.string() + ": truncated vertex list");
      // float properties parse straight to float; going through double can land one ulp off
      char* end = nullptr;
      row[k] = single[k] ? static_cast<double>(std::strtof(tok.c_str(), &end)) : std::strtod(tok.c_str(), &end);
      if (end == tok.c_str()) throw InvalidArgument(path.string() + ": bad vertex value '" + tok + "'");
    }
    points.emplace_back(row[ix], row[iy], row[iz]);
  }
  return points;
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out = open_out(path);
  out << doc.dump(2) << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
}

void apply_env_overrides(Json& doc, const std::string& prefix) {
  std::vector<std::pair<std::string, std::string>> vars;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos || entry.compare(0, prefix.size(), prefix) != 0) continue;
    vars.emplace_back(entry.substr(prefix.size(), eq - prefix.size()), entry.substr(eq + 1));
  }
  std::sort(vars.begin(), vars.end());
  for (const auto& [name, raw] : vars) {
    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto sep = name.find("__", start);
      std::string key = name.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
      for (char& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (key.empty()) throw InvalidArgument("environment override " + prefix + name + ": empty path segment");
      if (!node->is_object()) *node = Json::object();
      node = &(*node)[key];
      if (sep == std::string::npos) break;
      start = sep + 2;
    }
    Json value = Json::parse(raw, nullptr, false);
    *node = value.is_discarded() ? Json(raw) : value;
  }
}

Json pose_to_json(const Pose3d& pose) {
  Json rows = Json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(Json::array({pose.rotation(r, 0), pose.rotation(r, 1), pose.rotation(r, 2)}));
  return Json{{"rotation", rows}, {"translation", vec_to_json(pose.translation)}};
}

Pose3d pose_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("translation")) throw InvalidArgument(where + ": expected a pose object");
  Pose3d p;
  p.translation = vec_from_json(j["translation"], where + ".translation");
  if (j.contains("rotation")) {
    const Json& r = j["rotation"];
    if (!r.is_array() || r.size() != 3) throw InvalidArgument(where + ".rotation: expected 3 rows");
    for (int i = 0; i < 3; ++i) p.rotation.row(i) = vec_from_json(r[i], where + ".rotation").transpose();
  } else if (j.contains("yaw")) {
    p.rotation = exp(Twist3d(Vector3d::Zero(), Vector3d(0, 0, j["yaw"].get<double>()))).rotation;
  }
  if (!p.allFinite()) throw InvalidArgument(where + ": non-finite pose");
  return p;
}

Json to_json(const FilterConfig& c) {
  return Json{{"particle_count", c.particle_count},
              {"neighbor_count", c.neighbor_count},
              {"loop_recency_gap", c.loop_recency_gap},
              {"overlap_threshold", c.overlap_threshold},
              {"likelihood_floor", c.likelihood_floor},
              {"posterior_floor", c.posterior_floor},
              {"gn_damping", c.gn_damping},
              {"step_clamp", c.step_clamp},
              {"voxel_resolution", c.voxel_resolution},
              {"unmatched_penalty", c.unmatched_penalty},
              {"keyframe_update", to_string(c.keyframe_update)},
              {"rng_seed", c.rng_seed},
              {"workers", c.workers}};
}

void from_json(const Json& j, FilterConfig& c, const std::string& where) {
  reject_unknown(j,
                 {"particle_count", "neighbor_count", "loop_recency_gap", "overlap_threshold", "likelihood_floor",
                  "posterior_floor", "gn_damping", "step_clamp", "voxel_resolution", "unmatched_penalty", "keyframe_update",
                  "rng_seed", "workers"},
                 where);
  read_field(j, "particle_count", c.particle_count, where);
  read_field(j, "neighbor_count", c.neighbor_count, where);
  read_field(j, "loop_recency_gap", c.loop_recency_gap, where);
  read_field(j, "overlap_threshold", c.overlap_threshold, where);
  read_field(j, "likelihood_floor", c.likelihood_floor, where);
  read_field(j, "posterior_floor", c.posterior_floor, where);
  read_field(j, "gn_damping", c.gn_damping, where);
  read_field(j, "step_clamp", c.step_clamp, where);
  read_field(j, "voxel_resolution", c.voxel_resolution, where);
  read_field(j, "unmatched_penalty", c.unmatched_penalty, where);
  if (j.contains("keyframe_update")) {
    std::string mode;
    read_field(j, "keyframe_update", mode, where);
    try {
      c.keyframe_update = parse_keyframe_update(mode);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + "." + e.what());
    }
  }
  read_field(j, "rng_seed", c.rng_seed, where);
  read_field(j, "workers", c.workers, where);
}

Json to_json(const WorldParams& p) {
  return Json{{"grid_pitch", p.grid_pitch},         {"grid_rows", p.grid_rows},
              {"grid_cols", p.grid_cols},           {"tree_radius", p.tree_radius},
              {"tree_radius_jitter", p.tree_radius_jitter}, {"tree_position_jitter", p.tree_position_jitter},
              {"tree_height", p.tree_height},       {"floor_count", p.floor_count},
              {"floor_height", p.floor_height},     {"floor_width", p.floor_width},
              {"floor_depth", p.floor_depth},       {"slab_thickness", p.slab_thickness},
              {"loop_length", p.loop_length},       {"loop_width", p.loop_width},
              {"corridor_width", p.corridor_width}, {"wall_height", p.wall_height}};
}

void from_json(const Json& j, WorldParams& p, const std::string& where) {
  reject_unknown(j,
                 {"kind", "grid_pitch", "grid_rows", "grid_cols", "tree_radius", "tree_radius_jitter",
                  "tree_position_jitter", "tree_height", "floor_count", "floor_height", "floor_width", "floor_depth",
                  "slab_thickness", "loop_length", "loop_width", "corridor_width", "wall_height"},
                 where);
  read_field(j, "grid_pitch", p.grid_pitch, where);
  read_field(j, "grid_rows", p.grid_rows, where);
  read_field(j, "grid_cols", p.grid_cols, where);
  read_field(j, "tree_radius", p.tree_radius, where);
  read_field(j, "tree_radius_jitter", p.tree_radius_jitter, where);
  read_field(j, "tree_position_jitter", p.tree_position_jitter, where);
  read_field(j, "tree_height", p.tree_height, where);
  read_field(j, "floor_count", p.floor_count, where);
  read_field(j, "floor_height", p.floor_height, where);
  read_field(j, "floor_width", p.floor_width, where);
  read_field(j, "floor_depth", p.floor_depth, where);
  read_field(j, "slab_thickness", p.slab_thickness, where);
  read_field(j, "loop_length", p.loop_length, where);
  read_field(j, "loop_width", p.loop_width, where);
  read_field(j, "corridor_width", p.corridor_width, where);
  read_field(j, "wall_height", p.wall_height, where);
}

Json to_json(const ScriptParams& p) {
  return Json{{"speed", p.speed},
              {"frame_period", p.frame_period},
              {"translation_sigma", p.translation_sigma},
              {"rotation_sigma", p.rotation_sigma},
              {"sensor_height", p.sensor_height},
              {"elevator_frames", p.elevator_frames},
              {"feature_dwell", p.feature_dwell},
              {"yaw_drift", p.yaw_drift},
              {"scale_drift", p.scale_drift}};
}

void from_json(const Json& j, ScriptParams& p, const std::string& where) {
  reject_unknown(j,
                 {"speed", "frame_period", "translation_sigma", "rotation_sigma", "sensor_height", "elevator_frames",
                  "feature_dwell", "yaw_drift", "scale_drift"},
                 where);
  read_field(j, "speed", p.speed, where);
  read_field(j, "frame_period", p.frame_period, where);
  read_field(j, "translation_sigma", p.translation_sigma, where);
  read_field(j, "rotation_sigma", p.rotation_sigma, where);
  read_field(j, "sensor_height", p.sensor_height, where);
  read_field(j, "elevator_frames", p.elevator_frames, where);
  read_field(j, "feature_dwell", p.feature_dwell, where);
  read_field(j, "yaw_drift", p.yaw_drift, where);
  read_field(j, "scale_drift", p.scale_drift, where);
}

Json to_json(const SensorModel& m) {
  return Json{{"ray_count", m.ray_count},
              {"max_range", m.max_range},
              {"horizontal_fov", m.horizontal_fov},
              {"vertical_fov", m.vertical_fov},
              {"range_noise_sigma", m.range_noise_sigma},
              {"backward_crop", m.backward_crop}};
}

void from_json(const Json& j, SensorModel& m, const std::string& where) {
  reject_unknown(j, {"ray_count", "max_range", "horizontal_fov", "vertical_fov", "range_noise_sigma", "backward_crop"},
                 where);
  read_field(j, "ray_count", m.ray_count, where);
  read_field(j, "max_range", m.max_range, where);
  read_field(j, "horizontal_fov", m.horizontal_fov, where);
  read_field(j, "vertical_fov", m.vertical_fov, where);
  read_field(j, "range_noise_sigma", m.range_noise_sigma, where);
  read_field(j, "backward_crop", m.backward_crop, where);
}

Json to_json(const World& world) {
  Json surfaces = Json::array();
  for (const auto& p : world.surfaces) {
    Json s{{"pose", pose_to_json(p.pose)}};
    switch (p.kind) {
      case PrimitiveKind::kBox:
        s["type"] = "box";
        s["half_extents"] = vec_to_json(p.half_extents);
        break;
      case PrimitiveKind::kCylinder:
        s["type"] = "cylinder";
        s["radius"] = p.radius;
        s["height"] = 2.0 * p.half_extents.z();
        break;
      case PrimitiveKind::kPlane:
        s["type"] = "plane";
        // JSON has no infinity; null marks an unbounded extent
        s["half_x"] = std::isfinite(p.half_extents.x()) ? Json(p.half_extents.x()) : Json(nullptr);
        s["half_y"] = std::isfinite(p.half_extents.y()) ? Json(p.half_extents.y()) : Json(nullptr);
        break;
    }
    surfaces.push_back(s);
  }
  return Json{{"surfaces", surfaces},
              {"bounds", Json{{"min", vec_to_json(world.bounds.min)}, {"max", vec_to_json(world.bounds.max)}}}};
}

World world_from_json(const Json& j) {
  World w;
  if (!j.contains("surfaces") || !j["surfaces"].is_array()) throw InvalidArgument("world.surfaces: expected a list");
  for (std::size_t i = 0; i < j["surfaces"].size(); ++i) {
    const Json& s = j["surfaces"][i];
    const std::string where = "world.surfaces[" + std::to_string(i) + "]";
    const std::string type = s.value("type", "");
    const Pose3d pose = pose_from_json(s.at("pose"), where + ".pose");
    Primitive p;
    if (type == "box") {
      p = Primitive::box(Vector3d::Zero(), vec_from_json(s.at("half_extents"), where + ".half_extents"));
    } else if (type == "cylinder") {
      p = Primitive::cylinder(Vector3d::Zero(), s.at("radius").get<double>(), s.at("height").get<double>());
    } else if (type == "plane") {
      auto extent = [&](const char* key) {
        return s.contains(key) && !s[key].is_null() ? s[key].get<double>() : std::numeric_limits<double>::infinity();
      };
      p = Primitive::plane(Pose3d::Identity(), extent("half_x"), extent("half_y"));
    } else {
      throw InvalidArgument(where + ".type: expected box, cylinder or plane");
    }
    p.pose = pose;
    w.surfaces.push_back(p);
  }
  if (j.contains("bounds")) {
    w.bounds.min = vec_from_json(j["bounds"].at("min"), "world.bounds.min");
    w.bounds.max = vec_from_json(j["bounds"].at("max"), "world.bounds.max");
  }
  w.validate();
  return w;
}

Json to_json(const TrajectoryScript& script) {
  Json wp = Json::array();
  for (const auto& s : script.waypoints) wp.push_back(Json{{"t", s.timestamp}, {"pose", pose_to_json(s.pose)}});
  Json segs = Json::array();
  for (const auto& s : script.elevator_segments) {
    segs.push_back(Json{{"start_time", s.start_time}, {"end_time", s.end_time}, {"floor_delta", s.floor_delta}});
  }
  return Json{{"waypoints", wp},
              {"odom_noise", matrix6_to_json(script.odom_noise)},
              {"odom_bias", std::vector<double>(script.odom_bias.data(), script.odom_bias.data() + 6)},
              {"elevator_segments", segs},
              {"elevator_covariance_scale", script.elevator_covariance_scale}};
}

TrajectoryScript script_from_json(const Json& j) {
  TrajectoryScript s;
  for (std::size_t i = 0; i < j.at("waypoints").size(); ++i) {
    const Json& w = j["waypoints"][i];
    s.waypoints.push_back({w.at("t").get<double>(), pose_from_json(w.at("pose"), "script.waypoints[" + std::to_string(i) + "].pose")});
  }
  if (j.contains("odom_noise")) s.odom_noise = matrix6_from_json(j["odom_noise"], "script.odom_noise");
  if (j.contains("odom_bias")) {
    const auto bias = j["odom_bias"].get<std::vector<double>>();
    if (bias.size() != 6) throw InvalidArgument("script.odom_bias: expected 6 numbers");
    s.odom_bias = Eigen::Map<const Vector6d>(bias.data());
  }
  if (j.contains("elevator_segments")) {
    for (const Json& e : j["elevator_segments"]) {
      s.elevator_segments.push_back(
          {e.at("start_time").get<double>(), e.at("end_time").get<double>(), e.value("floor_delta", 0.0)});
    }
  }
  read_field(j, "elevator_covariance_scale", s.elevator_covariance_scale, "script");
  s.validate();
  return s;
}

Json to_json(const FrameReport& r) {
  Eigen::Quaterniond q(r.representative_pose.rotation);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return Json{{"frame", r.frame},
              {"timestamp", r.timestamp},
              {"representative", r.representative},
              {"translation", vec_to_json(r.representative_pose.translation)},
              {"quaternion", Json::array({q.x(), q.y(), q.z(), q.w()})},
              {"representative_weight", r.representative_weight},
              {"live_count", r.live_count},
              {"loop_count", r.loop_count},
              {"corrected_count", r.corrected_count},
              {"respawned_count", r.respawned_count},
              {"keyframe_inserted", r.keyframe_inserted},
              {"keyframe_count", r.keyframe_count},
              {"vertical_dispersion", r.vertical_dispersion},
              {"elapsed_ms", r.elapsed_ms}};
}

Json to_json(const AteReport& r) {
  return Json{{"ate_rmse", r.ate_rmse}, {"pair_count", r.pair_count}, {"alignment", pose_to_json(r.alignment)}};
}

Json motion_to_json(const MotionDelta& m, double timestamp) {
  return Json{{"t", timestamp}, {"delta", pose_to_json(m.delta)}, {"covariance", matrix6_to_json(m.covariance)}};
}

MotionDelta motion_from_json(const Json& j, const std::string& where) {
  MotionDelta m;
  m.delta = pose_from_json(j.at("delta"), where + ".delta");
  m.covariance = matrix6_from_json(j.at("covariance"), where + ".covariance");
  return m;
}

Snapshot make_snapshot(const ParticleSet& set, std::size_t frame, double timestamp) {
  Snapshot s{frame, timestamp, {}};
  const auto w = set.normalized_weights();
  for (std::size_t i = 0; i < set.size(); ++i) s.particles.push_back({set[i].current_pose, w[i]});
  return s;
}

Json to_json(const Snapshot& snapshot) {
  Json particles = Json::array();
  for (const auto& p : snapshot.particles) {
    Json j = pose_to_json(p.pose);
    j["weight"] = p.weight;
    particles.push_back(j);
  }
  return Json{{"frame", snapshot.frame}, {"timestamp", snapshot.timestamp}, {"particles", particles}};
}

Snapshot snapshot_from_json(const Json& j) {
  Snapshot s;
  read_field(j, "frame", s.frame, "snapshot");
  read_field(j, "timestamp", s.timestamp, "snapshot");
  if (!j.contains("particles") || !j["particles"].is_array()) {
    throw InvalidArgument("snapshot.particles: expected a list");
  }
  for (std::size_t i = 0; i < j["particles"].size(); ++i) {
    const Json& p = j["particles"][i];
    const std::string where = "snapshot.particles[" + std::to_string(i) + "]";
    s.particles.push_back({pose_from_json(p, where), p.value("weight", 0.0)});
  }
  return s;
}

}  // namespace mcslam
