#pragma once

#include <stdexcept>
#include <string>

namespace mcslam {

/// Bad caller input (non-finite values, too few points, out-of-range times).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear-algebra step failed: singular system, non-PSD covariance, log near pi.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every particle fell below the pruning floors in the same frame.
class FilterDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mcslam
