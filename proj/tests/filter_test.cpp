#include "mcslam/filter.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mcslam/evaluation.hpp"
#include "test_util.hpp"

namespace mcslam {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Scan room_scan(std::uint64_t seed, double timestamp = 0.0) {
  std::mt19937_64 rng(seed);
  const auto pts = testing::room_points(rng);
  return estimate_covariances(pts, kDefaultCovarianceNeighbors, timestamp);
}

// Odometry along x at 1 m per second, t = 0..n.
KeyframeStore straight_store(int n) {
  KeyframeStore store;
  for (int t = 0; t <= n; ++t) store.append_odometry(t, Pose3d::Translation(Vector3d(t, 0, 0)));
  return store;
}

TEST(PredictTest, NoiselessMotionTranslatesEveryParticle) {
  ParticleSet set = ParticleSet::uniform(5, Pose3d::Identity(), 1);
  std::mt19937_64 rng(1);
  for (auto& p : set.particles) p.current_pose = testing::random_pose(rng);
  const ParticleSet before = set;
  predict(set, {Pose3d::Translation(Vector3d(1, 0, 0)), Matrix6d::Zero()}, std::nullopt, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Pose3d expected = before[i].current_pose * Pose3d::Translation(Vector3d(1, 0, 0));
    EXPECT_TRUE(set[i].current_pose == expected);
    EXPECT_NEAR((set[i].current_pose.translation - before[i].current_pose.translation).norm(), 1.0, 1e-12);
  }
}

TEST(PredictTest, NoiseStatisticsMatchCovariance) {
  const std::size_t n = 10000;
  const double var = 1e-4;
  ParticleSet set = ParticleSet::uniform(n, Pose3d::Identity(), 7);
  predict(set, {Pose3d::Identity(), Matrix6d::Identity() * var}, std::nullopt, 0);
  std::vector<Vector6d> twists;
  for (const auto& p : set.particles) twists.push_back(log(p.current_pose).vector());
  Vector6d mean = Vector6d::Zero();
  for (const auto& v : twists) mean += v;
  mean /= n;
  Matrix6d cov = Matrix6d::Zero();
  for (const auto& v : twists) cov += (v - mean) * (v - mean).transpose();
  cov /= (n - 1);
  const double sigma = std::sqrt(var);
  for (int a = 0; a < 6; ++a) {
    EXPECT_LT(std::abs(mean[a]), 3.0 * sigma / std::sqrt(n));
    EXPECT_LT(std::abs(cov(a, a) - var), 3.0 * var * std::sqrt(2.0 / n));
    for (int b = 0; b < a; ++b) EXPECT_LT(std::abs(cov(a, b)), 3.0 * var / std::sqrt(n));
  }
}

TEST(PredictTest, VerticalRandomWalkSpread) {
  const std::size_t n = 10000;
  ParticleSet set = ParticleSet::uniform(n, Pose3d::Identity(), 3);
  for (std::uint64_t frame = 0; frame < 10; ++frame) {
    predict(set, {Pose3d::Identity(), Matrix6d::Zero()}, 0.5, frame);
  }
  double mean = 0.0, sq = 0.0;
  for (const auto& p : set.particles) mean += p.current_pose.translation.z();
  mean /= n;
  for (const auto& p : set.particles) sq += std::pow(p.current_pose.translation.z() - mean, 2);
  const double sd = std::sqrt(sq / (n - 1));
  const double expected = 0.5 * std::sqrt(10.0);
  EXPECT_LT(std::abs(sd - expected), 3.0 * expected / std::sqrt(2.0 * n));
  for (const auto& p : set.particles) {
    EXPECT_EQ(p.current_pose.translation.x(), 0.0);
    EXPECT_EQ(p.current_pose.translation.y(), 0.0);
  }
}

TEST(PredictTest, IndependentOfWorkerCount) {
  ParticleSet a = ParticleSet::uniform(257, Pose3d::Identity(), 11);
  ParticleSet b = a;
  const MotionDelta m{Pose3d::Translation(Vector3d(0.3, 0, 0)), Matrix6d::Identity() * 1e-3};
  predict(a, m, 0.2, 4, 1);
  predict(b, m, 0.2, 4, 5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].current_pose == b[i].current_pose);
}

TEST(PredictTest, NonPsdCovarianceThrows) {
  ParticleSet set = ParticleSet::uniform(2, Pose3d::Identity(), 1);
  Matrix6d cov = Matrix6d::Identity();
  cov(2, 2) = -1.0;
  EXPECT_THROW(predict(set, {Pose3d::Identity(), cov}, std::nullopt, 0), NumericalError);
}

TEST(PredictTest, CovarianceSqrtReproducesSemidefiniteMatrix) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Matrix<double, 6, 4> a;
    for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    const Matrix6d cov = a * a.transpose();  // rank 4
    const Matrix6d s = covariance_sqrt(cov);
    EXPECT_LT((s * s.transpose() - cov).norm(), 1e-10 * cov.norm());
  }
}

KeyframeStore store_with_keyframes_at(const std::vector<double>& xs, Particle& particle) {
  KeyframeStore store;
  store.append_odometry(0.0, Pose3d::Identity());
  const Scan scan = room_scan(1);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    store.append(scan, 0.5, Pose3d::Identity(), 0.0);
    particle.keyframe_poses.push_back(Pose3d::Translation(Vector3d(xs[k], 0, 0)));
  }
  return store;
}

TEST(NeighborTest, SingleKeyframe) {
  Particle p;
  const KeyframeStore store = store_with_keyframes_at({4.0}, p);
  EXPECT_EQ(select_neighbor_keyframes(p, store, 3), std::vector<std::size_t>{0});
}

TEST(NeighborTest, NearestByTranslation) {
  Particle p;
  const KeyframeStore store = store_with_keyframes_at({0.0, 10.0, 20.0}, p);
  p.current_pose = Pose3d::Translation(Vector3d(1, 0, 0));
  EXPECT_EQ(select_neighbor_keyframes(p, store, 2), (std::vector<std::size_t>{0, 1}));
  p.current_pose = Pose3d::Translation(Vector3d(19, 0, 0));
  EXPECT_EQ(select_neighbor_keyframes(p, store, 2), (std::vector<std::size_t>{2, 1}));
}

TEST(NeighborTest, TiesGoToLowerIndex) {
  Particle p;
  const KeyframeStore store = store_with_keyframes_at({2.0, -2.0, 2.0, -2.0}, p);
  EXPECT_EQ(select_neighbor_keyframes(p, store, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(NeighborTest, MatchesSortedDistanceOracle) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-20, 20);
  std::vector<double> xs;
  for (int i = 0; i < 30; ++i) xs.push_back(std::round(u(rng)));
  Particle p;
  const KeyframeStore store = store_with_keyframes_at(xs, p);
  for (int trial = 0; trial < 20; ++trial) {
    p.current_pose = Pose3d::Translation(Vector3d(std::round(u(rng)), 0, 0));
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(xs[a] - p.current_pose.translation.x()) < std::abs(xs[b] - p.current_pose.translation.x());
    });
    order.resize(3);
    EXPECT_EQ(select_neighbor_keyframes(p, store, 3), order);
  }
}

TEST(LoopTest, Cases) {
  const std::vector<std::size_t> recent{50, 49};
  EXPECT_FALSE(detect_loop(recent, 50, 10));
  const std::vector<std::size_t> old{49, 0};
  EXPECT_TRUE(detect_loop(old, 50, 10));
  const std::vector<std::size_t> boundary{40};
  EXPECT_TRUE(detect_loop(boundary, 50, 10));
  const std::vector<std::size_t> inside{41};
  EXPECT_FALSE(detect_loop(inside, 50, 10));
  EXPECT_FALSE(detect_loop(std::vector<std::size_t>{0}, 5, 10));
  EXPECT_FALSE(detect_loop(std::vector<std::size_t>{}, 50, 10));
}

TEST(PathLengthTest, Cases) {
  const KeyframeStore store = straight_store(5);
  EXPECT_EQ(store.path_length(2.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(store.path_length(0.0, 5.0), 5.0);
  EXPECT_DOUBLE_EQ(store.path_length(1.5, 3.0), 1.5);
  EXPECT_THROW(store.path_length(-1.0, 2.0), InvalidArgument);
  EXPECT_THROW(store.path_length(0.0, 6.0), InvalidArgument);
  EXPECT_THROW(store.path_length(3.0, 2.0), InvalidArgument);
  EXPECT_THROW(KeyframeStore().path_length(0.0, 0.0), InvalidArgument);
}

TEST(PathLengthTest, ZigZagMatchesDirectSum) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  KeyframeStore store;
  std::vector<Vector3d> pts;
  for (int t = 0; t < 40; ++t) {
    pts.emplace_back(u(rng), u(rng), u(rng));
    store.append_odometry(0.5 * t, Pose3d::Translation(pts.back()));
  }
  for (int a = 0; a < 40; a += 3) {
    for (int b = a; b < 40; b += 5) {
      double direct = 0.0;
      for (int i = a; i < b; ++i) direct += (pts[i + 1] - pts[i]).norm();
      EXPECT_NEAR(store.path_length(0.5 * a, 0.5 * b), direct, 1e-12);
    }
  }
}

TEST(DiscountTest, BoundaryValuesAndMonotonicity) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2, 2);
  KeyframeStore store;
  Vector3d pos = Vector3d::Zero();
  for (int t = 0; t < 60; ++t) {
    // include stationary stretches
    if (t % 7 != 3) pos += Vector3d(u(rng), u(rng), 0.2 * u(rng));
    store.append_odometry(t, Pose3d::Translation(pos));
  }
  for (int o = 0; o < 59; o += 4) {
    for (int t = o + 1; t < 60; t += 3) {
      EXPECT_EQ(discount_weight(store, o, o, t), 0.0);
      if (store.path_length(o, t) == 0.0) continue;
      EXPECT_EQ(discount_weight(store, o, t, t), 1.0);
      double prev = 0.0;
      for (int k = o; k <= t; ++k) {
        const double w = discount_weight(store, o, k, t);
        EXPECT_GE(w, prev);
        EXPECT_LE(w, 1.0);
        prev = w;
      }
    }
  }
  EXPECT_EQ(discount_weight(straight_store(3), 1.0, 1.0, 1.0), 0.0);
}

// Store whose keyframes all share one cloud; keyframe k sits at time 2k on a
// straight odometry path at x = t.
struct CorrectionFixture {
  KeyframeStore store;
  Particle particle;
  Scan scan;
  FilterConfig config;

  explicit CorrectionFixture(int keyframes) {
    const Scan cloud = room_scan(3);
    const int last = 2 * keyframes;
    for (int t = 0; t <= last; ++t) store.append_odometry(t, Pose3d::Translation(Vector3d(t, 0, 0)));
    std::mt19937_64 rng(8);
    for (int k = 0; k < keyframes; ++k) {
      store.append(cloud, 0.5, Pose3d::Translation(Vector3d(2 * k, 0, 0)), 2.0 * k);
      particle.keyframe_poses.push_back(exp(testing::random_twist(rng, 0.5)));
    }
    scan = cloud;
    scan.timestamp = last;
  }
};

TEST(CorrectTest, ZeroStepChangesNothing) {
  // one point per voxel, so every point is its own correspondence and b = 0
  CorrectionFixture f(1);
  Scan cloud;
  for (const auto& cell : f.store[0].voxel_map.cells()) cloud.points.push_back(cell.aggregate);
  f.store = KeyframeStore();
  for (int t = 0; t <= 12; ++t) f.store.append_odometry(t, Pose3d::Translation(Vector3d(t, 0, 0)));
  std::mt19937_64 rng(2);
  f.particle.keyframe_poses.clear();
  for (int k = 0; k < 6; ++k) {
    f.store.append(cloud, 0.5, Pose3d::Identity(), 2.0 * k);
    f.particle.keyframe_poses.push_back(k == 1 ? Pose3d::Identity() : exp(testing::random_twist(rng, 0.5)));
  }
  f.scan = cloud;
  f.scan.timestamp = 12.0;
  f.particle.current_pose = Pose3d::Identity();
  const Particle before = f.particle;
  const std::vector<std::size_t> neighbors{1};
  correct(f.particle, f.scan, f.store, f.config, neighbors);
  EXPECT_TRUE(f.particle.current_pose == before.current_pose);
  for (std::size_t k = 0; k < before.keyframe_poses.size(); ++k) {
    EXPECT_TRUE(f.particle.keyframe_poses[k] == before.keyframe_poses[k]);
  }
}

TEST(CorrectTest, DiscountedPropagation) {
  // keyframes at t = 0, 2, 4, 6, 8, 10; current time 12; neighbors {2, 4}
  // so t_o = 4 and keyframe 4 (t = 8) sits exactly halfway.
  CorrectionFixture f(6);
  f.particle.current_pose =
      f.particle.keyframe_poses[2] * exp(Twist3d(Vector3d(0.05, -0.03, 0.02), Vector3d(0.01, 0.02, -0.01)));
  const Particle before = f.particle;
  const std::vector<std::size_t> neighbors{2, 4};
  const auto objective = particle_objective(f.scan, before, f.store, neighbors, true);
  const Twist3d psi = gauss_newton_step(objective, default_damping(objective.H));
  const CorrectionResult r = correct(f.particle, f.scan, f.store, f.config, neighbors);
  ASSERT_TRUE(r.applied);
  EXPECT_GT(psi.vector().norm(), 1e-3);
  EXPECT_EQ(r.step.vector(), psi.vector());
  EXPECT_TRUE(f.particle.current_pose == before.current_pose * exp(psi));
  for (std::size_t k = 0; k <= 2; ++k) EXPECT_TRUE(f.particle.keyframe_poses[k] == before.keyframe_poses[k]);
  const double weights[] = {0, 0, 0, 0.25, 0.5, 0.75};
  for (std::size_t k = 3; k < 6; ++k) {
    const Pose3d expected = before.keyframe_poses[k] * exp(weights[k] * psi);
    EXPECT_LT(testing::pose_distance(f.particle.keyframe_poses[k], expected), 1e-15) << k;
  }
}

TEST(CorrectTest, ImprovesLikelihoodOnSmallDisplacements) {
  CorrectionFixture f(4);
  std::mt19937_64 rng(12);
  int improved = 0;
  const int trials = 40;
  for (int trial = 0; trial < trials; ++trial) {
    Particle p = f.particle;
    p.current_pose = p.keyframe_poses[0] * exp(testing::random_twist(rng, 0.1));
    const std::vector<std::size_t> neighbors{0};
    const double before = particle_log_likelihood(f.scan, p, f.store, neighbors);
    const auto r = correct(p, f.scan, f.store, f.config, neighbors);
    if (!r.clamped && particle_log_likelihood(f.scan, p, f.store, neighbors) > before) ++improved;
  }
  EXPECT_GE(improved, trials * 95 / 100);
}

TEST(WeightsTest, HandCase) {
  ParticleSet set = ParticleSet::uniform(2, Pose3d::Identity(), 0);
  update_weights(set, std::vector<double>{0.0, -std::log(3.0)});
  const auto w = set.normalized_weights();
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_NEAR(w[1], 0.25, 1e-12);
}

TEST(WeightsTest, EqualLikelihoodsStayUniform) {
  ParticleSet set = ParticleSet::uniform(8, Pose3d::Identity(), 0);
  for (int frame = 0; frame < 20; ++frame) {
    update_weights(set, std::vector<double>(8, -123.4));
    for (double w : set.normalized_weights()) EXPECT_NEAR(w, 1.0 / 8, 1e-12);
  }
}

TEST(WeightsTest, SumToOneAndDeadHandling) {
  ParticleSet set = ParticleSet::uniform(50, Pose3d::Identity(), 0);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-500, 0);
  for (int frame = 0; frame < 30; ++frame) {
    std::vector<double> ll(50);
    for (auto& v : ll) v = u(rng);
    if (frame == 3) ll[7] = kNegInf;
    if (frame == 4) ll[9] = std::numeric_limits<double>::quiet_NaN();
    update_weights(set, ll);
    const auto w = set.normalized_weights();
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
  }
  EXPECT_TRUE(set[7].dead());
  EXPECT_TRUE(set[9].dead());
  EXPECT_EQ(set.live_count(), 48u);
}

TEST(WeightsTest, AllDeadThrows) {
  ParticleSet set = ParticleSet::uniform(2, Pose3d::Identity(), 0);
  EXPECT_THROW(update_weights(set, std::vector<double>{kNegInf, kNegInf}), FilterDegeneracy);
  EXPECT_THROW(update_weights(set, std::vector<double>{0.0}), InvalidArgument);
}

ParticleSet labeled_set(const std::vector<double>& weights) {
  ParticleSet set = ParticleSet::uniform(weights.size(), Pose3d::Identity(), 17);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    set[i].current_pose = Pose3d::Translation(Vector3d(static_cast<double>(i), 0, 0));
    set[i].keyframe_poses = {Pose3d::Translation(Vector3d(0, static_cast<double>(i), 0)),
                             Pose3d::Translation(Vector3d(0, 0, static_cast<double>(i)))};
    set[i].log_weight = weights[i] > 0.0 ? std::log(weights[i]) : kNegInf;
    set[i].cum_log_likelihood = weights[i] > 0.0 ? std::log(weights[i]) : kNegInf;
  }
  return set;
}

TEST(PruneTest, NothingBelowFloorsLeavesSetUnchanged) {
  ParticleSet set = labeled_set({0.25, 0.25, 0.25, 0.25});
  const ParticleSet before = set;
  EXPECT_EQ(prune_and_respawn(set, FilterConfig{}, std::vector<double>{-5, -6, -7, -8}, 0), 0u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(set[i].current_pose == before[i].current_pose);
    EXPECT_EQ(set[i].log_weight, before[i].log_weight);
  }
}

TEST(PruneTest, OnlySubThresholdParticlesAreReplaced) {
  ParticleSet set = labeled_set({0.3, 0.3, 0.3, 0.1 - 1e-9, 1e-9});
  // particle 1 fails the likelihood floor, particle 4 the posterior floor
  const std::vector<double> ll{-10.0, -10.0 - 40.0, -12.0, -11.0, -10.0};
  EXPECT_EQ(prune_and_respawn(set, FilterConfig{}, ll, 3), 2u);
  for (std::size_t i : {0, 2, 3}) {
    EXPECT_TRUE(set[i].current_pose == Pose3d::Translation(Vector3d(static_cast<double>(i), 0, 0)));
  }
  const auto w = set.normalized_weights();
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
}

TEST(PruneTest, RespawnFrequenciesFollowSurvivorWeights) {
  const int trials = 10000;
  for (const std::vector<double>& weights :
       {std::vector<double>{0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3}, std::vector<double>{0.5, 0.0, 0.3, 0.2}}) {
    std::vector<int> counts(weights.size(), 0);
    const std::size_t dead_slot = weights[0] == 0.0 ? 0 : 1;
    for (int trial = 0; trial < trials; ++trial) {
      ParticleSet set = labeled_set(weights);
      prune_and_respawn(set, FilterConfig{}, std::vector<double>(weights.size(), -1.0), trial);
      const auto donor = static_cast<std::size_t>(set[dead_slot].current_pose.translation.x());
      ++counts[donor];
      // deep copy of the donor's whole state
      EXPECT_EQ(set[dead_slot].keyframe_poses.size(), 2u);
      EXPECT_TRUE(set[dead_slot].keyframe_poses[1] == Pose3d::Translation(Vector3d(0, 0, double(donor))));
      EXPECT_EQ(set[dead_slot].cum_log_likelihood, std::log(weights[donor]));
    }
    EXPECT_EQ(counts[dead_slot], 0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (i == dead_slot) continue;
      const double p = weights[i];
      const double sigma = std::sqrt(trials * p * (1 - p));
      EXPECT_LT(std::abs(counts[i] - trials * p), 3.0 * sigma) << "donor " << i;
    }
  }
}

TEST(RepresentativeTest, Cases) {
  EXPECT_EQ(representative(labeled_set({0.25, 0.25, 0.25, 0.25})), 0u);
  EXPECT_EQ(representative(labeled_set({0.1, 0.7, 0.2})), 1u);
  EXPECT_EQ(representative(labeled_set({0.0, 0.4, 0.2, 0.4})), 1u);

  ParticleSet set = ParticleSet::uniform(200, Pose3d::Identity(), 0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 0);
  std::vector<double> ll(200);
  for (auto& v : ll) v = u(rng);
  ll[137] = 10.0;
  update_weights(set, ll);
  std::size_t naive = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    if (std::exp(set[i].log_weight) > std::exp(set[naive].log_weight)) naive = i;
  }
  EXPECT_EQ(representative(set), naive);
  EXPECT_EQ(naive, 137u);
}

Scan lattice_scan(double timestamp) {
  // 20 x 4 points, one per 0.5 m voxel centre, spanning 10 m along x
  Scan scan;
  scan.timestamp = timestamp;
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 4; ++j) scan.points.push_back({Vector3d(0.25 + 0.5 * i, 0.25 + 0.5 * j, 0.25), Matrix3d::Identity()});
  }
  return scan;
}

TEST(KeyframeInsertionTest, Cases) {
  FilterConfig config;
  KeyframeStore store;
  ParticleSet set = ParticleSet::uniform(3, Pose3d::Identity(), 0);
  store.append_odometry(0.0, Pose3d::Identity());
  EXPECT_TRUE(maybe_insert_keyframe(lattice_scan(0.0), Pose3d::Identity(), store, set, config));
  EXPECT_EQ(store.size(), 1u);
  for (const auto& p : set.particles) EXPECT_EQ(p.keyframe_poses.size(), 1u);

  EXPECT_FALSE(maybe_insert_keyframe(lattice_scan(1.0), Pose3d::Identity(), store, set, config));
  EXPECT_EQ(store.size(), 1u);

  const Pose3d shifted = Pose3d::Translation(Vector3d(5.0, 0, 0));
  EXPECT_DOUBLE_EQ(overlap_rate(lattice_scan(2.0), shifted, store.back().voxel_map), 0.5);
  EXPECT_TRUE(maybe_insert_keyframe(lattice_scan(2.0), shifted, store, set, config));
  EXPECT_EQ(store.size(), 2u);
  EXPECT_TRUE(store.back().odom_pose == shifted);
  for (const auto& p : set.particles) EXPECT_EQ(p.keyframe_poses.size(), 2u);
}

TEST(ConfigTest, ValidationNamesField) {
  FilterConfig c;
  c.overlap_threshold = 1.5;
  try {
    c.validate();
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("overlap_threshold"), std::string::npos);
  }
  c = FilterConfig{};
  c.particle_count = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = FilterConfig{};
  c.workers = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_NO_THROW(FilterConfig{}.validate());
}

// A corridor along x with walls, floor and irregular posts, sampled on a
// grid. Scans are the world points within `range` of the sensor.
struct Corridor {
  std::vector<Vector3d> points;

  Corridor() {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    const double s = 0.2;
    for (double x = -10; x <= 50; x += s) {
      for (double y = -2; y <= 2; y += s) points.emplace_back(x + jitter(rng), y + jitter(rng), 0.0);
      for (double z = s; z <= 2.5; z += s) {
        points.emplace_back(x + jitter(rng), -2.0, z + jitter(rng));
        points.emplace_back(x + jitter(rng), 2.0, z + jitter(rng));
      }
    }
    for (double x0 = -8; x0 <= 50; x0 += 3.7) {
      const double w = 0.3 + 0.05 * std::fmod(x0 + 8, 1.3);
      for (double a = 0; a <= w; a += 0.1) {
        for (double z = 0.1; z <= 1.5; z += 0.1) {
          points.emplace_back(x0 + a, -2.0 + w, z);
          points.emplace_back(x0, -2.0 + a, z);
        }
      }
    }
  }

  Scan scan_from(const Pose3d& pose, double timestamp, double range = 8.0) const {
    const Pose3d inv = inverse(pose);
    std::vector<Vector3d> local;
    for (const auto& p : points) {
      const Vector3d q = inv * p;
      if (q.norm() < range) local.push_back(q);
    }
    return estimate_covariances(local, kDefaultCovarianceNeighbors, timestamp);
  }
};

const Corridor& corridor() {
  static const Corridor c;
  return c;
}

std::vector<std::pair<Scan, Pose3d>> corridor_run(int frames, double step) {
  std::vector<std::pair<Scan, Pose3d>> out;
  for (int f = 0; f < frames; ++f) {
    const Pose3d gt = Pose3d::Translation(Vector3d(f * step, 0, 1.0));
    out.emplace_back(corridor().scan_from(gt, 0.1 * f), gt);
  }
  return out;
}

TEST(StepTest, SingleNoiselessParticleFollowsOdometry) {
  FilterConfig config;
  config.particle_count = 1;
  const auto run = corridor_run(12, 0.5);
  MonteCarloSlam slam(config, run[0].second);
  for (std::size_t f = 0; f < run.size(); ++f) {
    const Pose3d delta = f == 0 ? Pose3d::Identity() : inverse(run[f - 1].second) * run[f].second;
    const FrameReport r = slam.step(run[f].first, {delta, Matrix6d::Zero()});
    EXPECT_EQ(r.live_count, 1u);
  }
  const Trajectory est = slam.trajectory_of(0);
  const Trajectory odom = slam.odometry_trajectory();
  ASSERT_EQ(est.size(), odom.size());
  for (std::size_t f = 0; f < est.size(); ++f) {
    EXPECT_LT(testing::pose_distance(est[f].pose, odom[f].pose), 1e-12);
  }
  EXPECT_TRUE(slam.particles()[0].current_pose == odom.back().pose);
}

TEST(StepTest, DeterministicAcrossWorkerCounts) {
  const auto run = corridor_run(10, 0.6);
  auto replay = [&](std::size_t workers) {
    FilterConfig config;
    config.particle_count = 40;
    config.workers = workers;
    config.rng_seed = 5;
    config.loop_recency_gap = 1;
    MonteCarloSlam slam(config, run[0].second);
    std::vector<FrameReport> reports;
    for (std::size_t f = 0; f < run.size(); ++f) {
      const Pose3d delta = f == 0 ? Pose3d::Identity() : inverse(run[f - 1].second) * run[f].second;
      reports.push_back(slam.step(run[f].first, {delta, Matrix6d::Identity() * 1e-4}));
    }
    return std::make_pair(reports, slam.trajectory_of(reports.back().representative));
  };
  const auto [ra, ta] = replay(1);
  const auto [rb, tb] = replay(4);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t f = 0; f < ra.size(); ++f) {
    EXPECT_EQ(ra[f].representative, rb[f].representative);
    EXPECT_TRUE(ra[f].representative_pose == rb[f].representative_pose);
    EXPECT_EQ(ra[f].representative_weight, rb[f].representative_weight);
    EXPECT_EQ(ra[f].respawned_count, rb[f].respawned_count);
    EXPECT_EQ(ra[f].corrected_count, rb[f].corrected_count);
  }
  for (std::size_t f = 0; f < ta.size(); ++f) EXPECT_TRUE(ta[f].pose == tb[f].pose);
}

TEST(StepTest, StraightCorridorRepresentativeStaysClose) {
  const auto run = corridor_run(40, 0.5);
  FilterConfig config;
  config.particle_count = 100;
  config.rng_seed = 3;
  MonteCarloSlam slam(config, run[0].second);
  Trajectory gt;
  for (std::size_t f = 0; f < run.size(); ++f) {
    const Pose3d delta = f == 0 ? Pose3d::Identity() : inverse(run[f - 1].second) * run[f].second;
    Matrix6d cov = Matrix6d::Identity() * 1e-4;
    const FrameReport r = slam.step(run[f].first, {delta, cov});
    const auto w = slam.particles().normalized_weights();
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
    EXPECT_GE(r.live_count, 1u);
    gt.push_back({run[f].first.timestamp, run[f].second});
  }
  const Trajectory est = slam.trajectory_of(representative(slam.particles()));
  EXPECT_LT(ate_rmse(est, gt), config.voxel_resolution / 2);
}

TEST(StepTest, EmptyScanRejected) {
  MonteCarloSlam slam(FilterConfig{});
  EXPECT_THROW(slam.step(Scan{}, {}), InvalidArgument);
}

}  // namespace
}  // namespace mcslam
