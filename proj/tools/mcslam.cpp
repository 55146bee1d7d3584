// mcslam: dataset generation, filtering, evaluation and cluster reports.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mcslam/errors.hpp"
#include "mcslam/experiment.hpp"

using namespace mcslam;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> particles;
  std::optional<std::size_t> workers;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool need_out) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--particles", f.particles, "particle count");
  cmd->add_option("--workers", f.workers, "worker threads (no effect on results)");
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (need_out) out->required();
}

ExperimentConfig resolve(const CommonFlags& f) {
  Json doc = f.config.empty() ? Json::object() : load_json(f.config);
  apply_env_overrides(doc);
  if (f.seed) doc["seed"] = *f.seed;
  if (f.particles) doc["filter"]["particle_count"] = *f.particles;
  if (f.workers) doc["filter"]["workers"] = *f.workers;
  if (!f.out.empty()) doc["output_dir"] = f.out;
  return config_from_json(doc);
}

void print_summary(const ExperimentReport& r) {
  std::printf("frames %zu  keyframes %zu  live %zu\n", r.frames, r.keyframes, r.final_live);
  std::printf("ate representative %.4f m  dead reckoning %.4f m\n", r.ate_representative.ate_rmse,
              r.ate_dead_reckoning.ate_rmse);
  std::printf("mean frame %.1f ms  total %.1f s\n", r.mean_frame_ms, r.total_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo SLAM experiments"};
  app.require_subcommand(1);

  CommonFlags gen_flags;
  auto* gen = app.add_subcommand("generate", "synthesize a dataset directory");
  add_common(gen, gen_flags, true);

  CommonFlags slam_flags;
  std::string dataset_dir;
  auto* slam = app.add_subcommand("slam", "run the filter on a dataset directory");
  slam->add_option("--dataset", dataset_dir, "dataset directory from `generate`")->required()->check(CLI::ExistingDirectory);
  add_common(slam, slam_flags, true);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "generate a dataset in memory and run the filter");
  add_common(run, run_flags, false);

  std::string estimate, reference, eval_out;
  double gap = kDefaultAssociationGap;
  auto* eval = app.add_subcommand("eval", "ATE between two TUM trajectories");
  eval->add_option("estimate", estimate)->required()->check(CLI::ExistingFile);
  eval->add_option("reference", reference)->required()->check(CLI::ExistingFile);
  eval->add_option("--max-gap", gap, "timestamp association gap, s");
  eval->add_option("--out", eval_out, "output directory");

  std::string snapshot_path, cluster_out;
  std::size_t max_clusters = 6;
  double merge_distance = 1.5;
  auto* clusters = app.add_subcommand("cluster-report", "k-means over particle translations of a snapshot");
  clusters->add_option("snapshot", snapshot_path)->required()->check(CLI::ExistingFile);
  clusters->add_option("--max-clusters", max_clusters);
  clusters->add_option("--merge-distance", merge_distance);
  clusters->add_option("--out", cluster_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const ExperimentConfig config = resolve(gen_flags);
      const Dataset d = generate_dataset(config);
      write_dataset(gen_flags.out, d, config);
      std::printf("wrote %zu frames to %s\n", d.size(), gen_flags.out.c_str());
    } else if (*slam) {
      // the dataset's own config is the base; --config and flags override it
      Json doc = load_json(std::filesystem::path(dataset_dir) / "dataset.json").at("config");
      if (!slam_flags.config.empty()) doc.merge_patch(load_json(slam_flags.config));
      apply_env_overrides(doc);
      if (slam_flags.seed) doc["seed"] = *slam_flags.seed;
      if (slam_flags.particles) doc["filter"]["particle_count"] = *slam_flags.particles;
      if (slam_flags.workers) doc["filter"]["workers"] = *slam_flags.workers;
      doc["output_dir"] = slam_flags.out;
      const ExperimentConfig config = config_from_json(doc);
      print_summary(run_slam(read_dataset(dataset_dir), config));
    } else if (*run) {
      const ExperimentConfig config = resolve(run_flags);
      print_summary(run_experiment(config));
    } else if (*eval) {
      const AteReport r = evaluate_ate(read_tum(estimate), read_tum(reference), gap);
      const Json j = to_json(r);
      std::cout << j.dump(2) << "\n";
      if (!eval_out.empty()) {
        std::filesystem::create_directories(eval_out);
        write_json(std::filesystem::path(eval_out) / "ate.json", j);
      }
    } else if (*clusters) {
      const auto result = cluster_particles(snapshot_from_json(load_json(snapshot_path)), max_clusters, merge_distance);
      const Json j = to_json(result);
      std::cout << j.dump(2) << "\n";
      if (!cluster_out.empty()) {
        std::filesystem::create_directories(cluster_out);
        write_json(std::filesystem::path(cluster_out) / "clusters.json", j);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
