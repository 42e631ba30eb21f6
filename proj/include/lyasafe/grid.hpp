#pragma once

#include <cmath>
#include <utility>

#include "lyasafe/common.hpp"

namespace lyasafe {

/// Uniform axis-aligned grid over a box. Points are enumerated row-major
/// (first axis slowest). tau is half the largest 1-norm distance from any
/// point in the box to its nearest grid point.
class Discretization {
 public:
  Discretization(Vec lower, Vec upper, VecI points_per_axis)
      : lower_(std::move(lower)), upper_(std::move(upper)), counts_(std::move(points_per_axis)) {
    require(lower_.size() == upper_.size() && lower_.size() == counts_.size(),
            "grid: bounds and cell counts must agree in dimension");
    require(lower_.size() > 0, "grid: needs at least one axis");
    require(lower_.allFinite() && upper_.allFinite(), "grid: bounds must be finite");
    for (int i = 0; i < dims(); ++i) {
      require(counts_(i) >= 2, "grid: at least 2 points per axis");
      require(lower_(i) < upper_(i), "grid: lower bound must be below upper bound");
    }
    spacing_ = (upper_ - lower_).array() / (counts_.cast<double>().array() - 1.0);
    tau_ = 0.5 * spacing_.sum();
    num_points_ = 1;
    for (int i = 0; i < dims(); ++i) num_points_ *= counts_(i);
  }

  int dims() const { return static_cast<int>(lower_.size()); }
  long num_points() const { return num_points_; }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const Vec& spacing() const { return spacing_; }
  const VecI& points_per_axis() const { return counts_; }
  double tau() const { return tau_; }

  VecI multi_index(long flat) const {
    VecI idx(dims());
    for (int axis = dims() - 1; axis >= 0; --axis) {
      idx(axis) = static_cast<int>(flat % counts_(axis));
      flat /= counts_(axis);
    }
    return idx;
  }

  long flat_index(const VecI& idx) const {
    long flat = 0;
    for (int axis = 0; axis < dims(); ++axis) flat = flat * counts_(axis) + idx(axis);
    return flat;
  }

  Vec point(long flat) const {
    const VecI idx = multi_index(flat);
    return lower_.array() + idx.cast<double>().array() * spacing_.array();
  }

  /// All grid points as rows, row-major order.
  Mat all_points() const {
    Mat pts(num_points_, dims());
    for (long i = 0; i < num_points_; ++i) pts.row(i) = point(i).transpose();
    return pts;
  }

  bool contains(const Vec& x) const {
    return (x.array() >= lower_.array()).all() && (x.array() <= upper_.array()).all();
  }

  struct Nearest {
    long index;
    bool clamped;
  };

  /// Grid point with the smallest 1-norm distance to x; exact midpoints break
  /// toward the lexicographically smaller index. Points outside the box are
  /// clamped and flagged.
  Nearest nearest(const Vec& x) const {
    require(x.size() == dims(), "nearest: dimension mismatch");
    VecI idx(dims());
    bool clamped = false;
    for (int axis = 0; axis < dims(); ++axis) {
      const double t = (x(axis) - lower_(axis)) / spacing_(axis);
      double i = std::ceil(t - 0.5);
      if (i < 0) {
        i = 0;
        clamped = t < 0;
      }
      if (i > counts_(axis) - 1) {
        i = counts_(axis) - 1;
        clamped = true;
      }
      idx(axis) = static_cast<int>(i);
    }
    return {flat_index(idx), clamped};
  }

 private:
  Vec lower_, upper_;
  VecI counts_;
  Vec spacing_;
  double tau_ = 0.0;
  long num_points_ = 0;
};

inline Discretization build_grid(const Vec& lower, const Vec& upper, const VecI& points_per_axis) {
  return Discretization(lower, upper, points_per_axis);
}

/// Discrete action set inside the action box U.
struct ActionGrid {
  Mat actions;  // count x d_u
  Vec lower, upper;

  int count() const { return static_cast<int>(actions.rows()); }
  int dims() const { return static_cast<int>(actions.cols()); }
  Vec action(int i) const { return actions.row(i).transpose(); }
};

inline ActionGrid build_action_grid(const Vec& lower, const Vec& upper,
                                    const VecI& points_per_axis) {
  const Discretization g(lower, upper, points_per_axis);
  return ActionGrid{g.all_points(), lower, upper};
}

}  // namespace lyasafe
