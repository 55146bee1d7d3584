#include "mcslam/experiment.hpp"

#include "mcslam/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mcslam {
namespace {

std::string frame_name(std::size_t frame) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", frame);
  return buf;
}

// Goes through a float buffer. Rounding in place miscompiles under GCC 11 -O3:
// the vectorized loop tail skips the float conversion.
std::vector<Vector3d> to_float_precision(const std::vector<Vector3d>& points) {
  std::vector<Eigen::Vector3f> single(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) single[i] = points[i].cast<float>();
  std::vector<Vector3d> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = single[i].cast<double>();
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  filter.validate();
  sensor.validate();
  if (!(elevator.threshold > 0.0)) throw InvalidArgument("elevator.threshold: must be > 0");
  if (!(elevator.vertical_sigma >= 0.0)) throw InvalidArgument("elevator.vertical_sigma: must be >= 0");
  if (!(script.speed > 0.0)) throw InvalidArgument("script.speed: must be > 0");
  if (!(script.frame_period > 0.0)) throw InvalidArgument("script.frame_period: must be > 0");
  if (!(script.translation_sigma >= 0.0)) throw InvalidArgument("script.translation_sigma: must be >= 0");
  if (!(script.rotation_sigma >= 0.0)) throw InvalidArgument("script.rotation_sigma: must be >= 0");
}

ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"name",     "world",          "script",          "sensor",
                                  "filter",   "elevator",       "seed",            "output_dir",
                                  "snapshot_frames", "snapshot_after_elevator", "description"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw InvalidArgument("config." + key + ": unknown field");
    }
  }
  ExperimentConfig c;
  auto get = [&](const char* key, auto& value) {
    if (!j.contains(key)) return;
    try {
      value = j[key].get<std::decay_t<decltype(value)>>();
    } catch (const Json::exception& e) {
      throw InvalidArgument(std::string("config.") + key + ": " + e.what());
    }
  };
  get("name", c.name);
  get("seed", c.seed);
  std::string out;
  get("output_dir", out);
  c.output_dir = out;
  get("snapshot_frames", c.snapshot_frames);
  get("snapshot_after_elevator", c.snapshot_after_elevator);
  if (j.contains("world")) {
    const Json& w = j["world"];
    if (w.contains("kind")) c.world_kind = parse_world_kind(w["kind"].get<std::string>());
    from_json(w, c.world, "world");
  }
  if (j.contains("script")) from_json(j["script"], c.script, "script");
  if (j.contains("sensor")) from_json(j["sensor"], c.sensor, "sensor");
  c.filter.rng_seed = c.seed;
  if (j.contains("filter")) from_json(j["filter"], c.filter, "filter");
  if (j.contains("elevator")) {
    const Json& e = j["elevator"];
    for (const auto& [key, value] : e.items()) {
      if (key != "enabled" && key != "threshold" && key != "vertical_sigma") {
        throw InvalidArgument("elevator." + key + ": unknown field");
      }
    }
    c.elevator.enabled = e.value("enabled", c.elevator.enabled);
    c.elevator.threshold = e.value("threshold", c.elevator.threshold);
    c.elevator.vertical_sigma = e.value("vertical_sigma", c.elevator.vertical_sigma);
  }
  c.world.seed = c.seed;
  c.validate();
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json world = to_json(c.world);
  world["kind"] = to_string(c.world_kind);
  return Json{{"name", c.name},
              {"seed", c.seed},
              {"world", world},
              {"script", to_json(c.script)},
              {"sensor", to_json(c.sensor)},
              {"filter", to_json(c.filter)},
              {"elevator",
               Json{{"enabled", c.elevator.enabled},
                    {"threshold", c.elevator.threshold},
                    {"vertical_sigma", c.elevator.vertical_sigma}}},
              {"output_dir", c.output_dir.string()},
              {"snapshot_frames", c.snapshot_frames},
              {"snapshot_after_elevator", c.snapshot_after_elevator}};
}

Dataset generate_dataset(const ExperimentConfig& config) {
  config.validate();
  WorldParams wp = config.world;
  wp.seed = config.seed;
  const World world = generate_world(config.world_kind, wp);
  const TrajectoryScript script = generate_script(config.world_kind, wp, config.script);
  const auto deltas = simulate_odometry(script, config.seed);

  Dataset d;
  d.ground_truth = script.waypoints;
  d.elevator_segments = script.elevator_segments;
  d.odometry.push_back(MotionDelta{});
  d.odometry.insert(d.odometry.end(), deltas.begin(), deltas.end());
  d.scans.resize(script.waypoints.size());
  // scans are independent; the stream key makes the order irrelevant
  parallel_for(config.filter.workers, d.scans.size(), [&](std::size_t f) {
    d.scans[f] = to_float_precision(simulate_scan(world, script.waypoints[f].pose, config.sensor, config.seed, f));
  });
  return d;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& d, const ExperimentConfig& config) {
  std::filesystem::create_directories(dir / "scans");
  for (std::size_t f = 0; f < d.size(); ++f) write_ply(dir / "scans" / (frame_name(f) + ".ply"), d.scans[f]);
  write_tum(dir / "ground_truth.tum", d.ground_truth, 17);
  std::string odom;
  for (std::size_t f = 0; f < d.size(); ++f) {
    odom += motion_to_json(d.odometry[f], d.ground_truth[f].timestamp).dump() + "\n";
  }
  write_text(dir / "odometry.jsonl", odom);
  Json segs = Json::array();
  for (const auto& s : d.elevator_segments) {
    segs.push_back(Json{{"start_time", s.start_time}, {"end_time", s.end_time}, {"floor_delta", s.floor_delta}});
  }
  write_json(dir / "dataset.json", Json{{"frames", d.size()}, {"elevator_segments", segs}, {"config", to_json(config)}});
  WorldParams wp = config.world;
  wp.seed = config.seed;
  write_json(dir / "world.json", to_json(generate_world(config.world_kind, wp)));
  write_json(dir / "script.json", to_json(generate_script(config.world_kind, wp, config.script)));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const Json meta = load_json(dir / "dataset.json");
  Dataset d;
  const auto frames = meta.at("frames").get<std::size_t>();
  d.ground_truth = read_tum(dir / "ground_truth.tum");
  if (d.ground_truth.size() != frames) throw InvalidArgument("dataset: ground_truth.tum frame count mismatch");
  std::ifstream in(dir / "odometry.jsonl");
  if (!in) throw InvalidArgument("dataset: cannot open odometry.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    d.odometry.push_back(motion_from_json(Json::parse(line), "odometry[" + std::to_string(d.odometry.size()) + "]"));
  }
  if (d.odometry.size() != frames) throw InvalidArgument("dataset: odometry.jsonl frame count mismatch");
  for (std::size_t f = 0; f < frames; ++f) d.scans.push_back(read_ply(dir / "scans" / (frame_name(f) + ".ply")));
  for (const Json& s : meta.value("elevator_segments", Json::array())) {
    d.elevator_segments.push_back(
        {s.at("start_time").get<double>(), s.at("end_time").get<double>(), s.value("floor_delta", 0.0)});
  }
  return d;
}

Json to_json(const ExperimentReport& r) {
  Json j{{"frames", r.frames},
         {"keyframes", r.keyframes},
         {"final_live", r.final_live},
         {"ate_representative", r.ate_representative.ate_rmse},
         {"ate_dead_reckoning", r.ate_dead_reckoning.ate_rmse},
         {"representative_ate_report", to_json(r.ate_representative)},
         {"dead_reckoning_ate_report", to_json(r.ate_dead_reckoning)},
         {"final_representative_pose", pose_to_json(r.final_representative_pose)},
         {"final_ground_truth_pose", pose_to_json(r.final_ground_truth_pose)}};
  if (r.elevator_exit_frame) j["elevator_exit_frame"] = *r.elevator_exit_frame;
  return j;
}

ExperimentReport run_slam(const Dataset& d, const ExperimentConfig& config) {
  config.validate();
  if (d.size() == 0) throw InvalidArgument("run: empty dataset");
  if (d.odometry.size() != d.size() || d.ground_truth.size() != d.size()) {
    throw InvalidArgument("run: dataset scans, odometry and ground truth differ in length");
  }
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport report;
  std::optional<std::size_t> exit_frame;
  if (!d.elevator_segments.empty()) {
    const double end = d.elevator_segments.back().end_time;
    for (std::size_t f = 0; f < d.size(); ++f) {
      if (d.ground_truth[f].timestamp > end) {
        exit_frame = f;
        break;
      }
    }
  }
  report.elevator_exit_frame = exit_frame;

  const bool write = !config.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(config.output_dir);
    Json resolved = to_json(config);
    resolved["filter"].erase("workers");  // results do not depend on it
    write_json(config.output_dir / "config.json", resolved);
  }
  std::string frames_log, timing_log;

  MonteCarloSlam slam(config.filter, d.ground_truth.front().pose);
  double total_ms = 0.0;
  std::size_t processed = 0;
  MotionDelta pending;  // odometry of skipped frames accumulates into the next
  bool have_pending = false;
  for (std::size_t f = 0; f < d.size(); ++f) {
    MotionDelta motion = d.odometry[f];
    if (have_pending) {
      motion.delta = pending.delta * motion.delta;
      motion.covariance = pending.covariance + motion.covariance;
      have_pending = false;
    }
    if (d.scans[f].size() <= static_cast<std::size_t>(kDefaultCovarianceNeighbors)) {
      pending = motion;
      have_pending = true;
      continue;
    }
    std::optional<double> vertical;
    if (config.elevator.enabled && detect_elevator(d.scans[f], config.elevator.threshold)) {
      vertical = config.elevator.vertical_sigma;
    }
    const Scan scan = estimate_covariances(d.scans[f], kDefaultCovarianceNeighbors, d.ground_truth[f].timestamp);
    FrameReport fr;
    try {
      fr = slam.step(scan, motion, vertical);
    } catch (const FilterDegeneracy& e) {
      throw FilterDegeneracy("frame " + std::to_string(f) + ": " + e.what());
    }
    fr.frame = f;
    total_ms += fr.elapsed_ms;
    ++processed;
    Json line = to_json(fr);
    timing_log += Json{{"frame", f}, {"elapsed_ms", fr.elapsed_ms}}.dump() + "\n";
    line.erase("elapsed_ms");
    frames_log += line.dump() + "\n";
    report.frame_reports.push_back(fr);

    const bool wanted = std::find(config.snapshot_frames.begin(), config.snapshot_frames.end(), f) !=
                            config.snapshot_frames.end() ||
                        (config.snapshot_after_elevator && exit_frame && *exit_frame == f);
    if (wanted) {
      report.snapshots.push_back(make_snapshot(slam.particles(), f, d.ground_truth[f].timestamp));
      if (write) {
        write_json(config.output_dir / "snapshots" / ("frame_" + frame_name(f) + ".json"),
                   to_json(report.snapshots.back()));
      }
    }
  }
  if (processed == 0) throw InvalidArgument("run: every scan was empty");

  const std::size_t rep = representative(slam.particles());
  report.frames = processed;
  report.keyframes = slam.store().size();
  report.final_live = slam.particles().live_count();
  report.representative = slam.trajectory_of(rep);
  report.dead_reckoning = slam.odometry_trajectory();
  report.ate_representative = evaluate_ate(report.representative, d.ground_truth);
  report.ate_dead_reckoning = evaluate_ate(report.dead_reckoning, d.ground_truth);
  report.final_representative_pose = report.representative.back().pose;
  report.final_ground_truth_pose = d.ground_truth.back().pose;
  for (const auto& s : d.ground_truth) {
    if (s.timestamp == report.representative.back().timestamp) report.final_ground_truth_pose = s.pose;
  }
  report.mean_frame_ms = total_ms / static_cast<double>(processed);
  report.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (write) {
    const auto& out = config.output_dir;
    write_text(out / "frames.jsonl", frames_log);
    write_text(out / "timing.jsonl", timing_log);
    write_tum(out / "trajectory.tum", report.representative);
    write_tum(out / "dead_reckoning.tum", report.dead_reckoning);
    write_tum(out / "ground_truth.tum", d.ground_truth);
    write_ply(out / "map.ply", means_of(map_of(slam.particles()[rep], slam.store())));
    write_json(out / "report.json", to_json(report));
  }
  return report;
}

std::vector<Cluster> cluster_particles(const Snapshot& snapshot, std::size_t max_clusters, double merge_distance) {
  if (snapshot.particles.empty()) throw InvalidArgument("cluster_particles: empty snapshot");
  if (max_clusters < 1) throw InvalidArgument("cluster_particles: max_clusters must be >= 1");
  const std::size_t n = snapshot.particles.size();
  std::vector<Vector3d> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = snapshot.particles[i].pose.translation;

  // farthest-point seeding from the heaviest particle
  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (snapshot.particles[i].weight > snapshot.particles[first].weight) first = i;
  }
  std::vector<Vector3d> centers{pts[first]};
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = (pts[i] - centers[0]).norm();
  while (centers.size() < max_clusters) {
    const auto far = static_cast<std::size_t>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
    if (nearest[far] < merge_distance) break;
    centers.push_back(pts[far]);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], (pts[i] - pts[far]).norm());
  }

  std::vector<std::size_t> label(n, 0);
  auto assign = [&] {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < centers.size(); ++c) {
        if ((pts[i] - centers[c]).squaredNorm() < (pts[i] - centers[best]).squaredNorm()) best = c;
      }
      changed = changed || label[i] != best;
      label[i] = best;
    }
    return changed;
  };
  auto update = [&] {
    std::vector<Vector3d> sum(centers.size(), Vector3d::Zero());
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[label[i]] += pts[i];
      ++count[label[i]];
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (count[c] > 0) centers[c] = sum[c] / static_cast<double>(count[c]);
    }
  };
  assign();
  for (int iter = 0; iter < 100; ++iter) {
    update();
    if (!assign()) break;
  }

  // merge the closest pair of centers while it is within merge_distance
  while (centers.size() > 1) {
    double best = merge_distance;
    std::size_t a = 0, b = 0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      for (std::size_t k = i + 1; k < centers.size(); ++k) {
        const double dist = (centers[i] - centers[k]).norm();
        if (dist < best) {
          best = dist;
          a = i;
          b = k;
        }
      }
    }
    if (a == b) break;
    for (auto& l : label) {
      if (l == b) l = a;
      else if (l > b) --l;
    }
    centers.erase(centers.begin() + static_cast<std::ptrdiff_t>(b));
    update();
  }

  std::vector<Cluster> clusters(centers.size());
  for (std::size_t i = 0; i < n; ++i) {
    clusters[label[i]].center += pts[i];
    ++clusters[label[i]].members;
    clusters[label[i]].weight_mass += snapshot.particles[i].weight;
  }
  for (auto& c : clusters) {
    if (c.members > 0) c.center /= static_cast<double>(c.members);
  }
  clusters.erase(std::remove_if(clusters.begin(), clusters.end(), [](const Cluster& c) { return c.members == 0; }),
                 clusters.end());
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const Cluster& x, const Cluster& y) { return x.weight_mass > y.weight_mass; });
  return clusters;
}

Json to_json(const std::vector<Cluster>& clusters) {
  Json out = Json::array();
  for (const auto& c : clusters) {
    out.push_back(Json{{"center", Json::array({c.center.x(), c.center.y(), c.center.z()})},
                       {"members", c.members},
                       {"weight_mass", c.weight_mass}});
  }
  return out;
}

}  // namespace mcslam
