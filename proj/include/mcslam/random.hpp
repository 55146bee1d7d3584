#pragma once

// Counter-based random streams. A stream is identified by a key tuple
// (seed, purpose, frame, index); two streams with the same key produce the
// same sequence no matter which thread draws from them or in what order the
// streams are created.

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <random>

namespace mcslam {

enum class StreamPurpose : std::uint64_t {
  kPrediction = 1,
  kPruning = 2,
  kScan = 3,
  kOdometry = 4,
  kWorld = 5,
  kInitialization = 6,
  kClustering = 7,
  kTest = 99,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// UniformRandomBitGenerator whose n-th output is a hash of (key, n).
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, StreamPurpose purpose, std::uint64_t frame = 0, std::uint64_t index = 0)
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(purpose)) ^ frame) ^
             splitmix64(index + 0x632be59bd9b4e019ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Standard normal draw.
  double gaussian() { return normal_(*this); }

  /// Uniform draw in [0, 1).
  double uniform() { return std::generate_canonical<double, 64>(*this); }

  template <int N>
  Eigen::Matrix<double, N, 1> gaussian_vector() {
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v[i] = gaussian();
    return v;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_;
};

}  // namespace mcslam
