#pragma once

#include <string>
#include <vector>

#include "mcslam/se3.hpp"

namespace mcslam {

struct TimedPose {
  double timestamp = 0.0;
  Pose3d pose;
};

/// Timestamped poses, timestamps strictly increasing.
using Trajectory = std::vector<TimedPose>;

/// Throws InvalidArgument unless timestamps are strictly increasing.
inline void check_increasing(const Trajectory& t, const std::string& what) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i].timestamp > t[i - 1].timestamp)) {
      throw InvalidArgument(what + ": timestamps must be strictly increasing");
    }
  }
}

}  // namespace mcslam
