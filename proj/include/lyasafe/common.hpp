#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace lyasafe {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecI = Eigen::VectorXi;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Slack subtracted on the right-hand side of every strict decrease test so
/// that float-equality never certifies a pair.
inline constexpr double kDecreaseStrictness = 1e-12;

/// Gap between the initial safe rows' upper bound and the decrease threshold.
/// Must exceed kDecreaseStrictness so the initial rows certify by construction.
inline constexpr double kInitialRowMargin = 1e-9;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace lyasafe
