#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/grid.hpp"

namespace lyasafe {

/// Vertex-valued function on a grid, interpolated over the Kuhn
/// (Freudenthal) triangulation of each rectangular cell. Reproduces affine
/// functions exactly and is exact on vertices.
class PiecewiseLinearValue {
 public:
  PiecewiseLinearValue(Discretization grid, Vec vertex_values)
      : grid_(std::move(grid)), values_(std::move(vertex_values)) {
    require(values_.size() == grid_.num_points(), "value vector must match grid size");
  }

  const Discretization& grid() const { return grid_; }
  const Vec& values() const { return values_; }
  void set_values(Vec v) {
    require(v.size() == grid_.num_points(), "value vector must match grid size");
    values_ = std::move(v);
  }
  double max_value() const { return values_.maxCoeff(); }

  struct Interp {
    double value;
    std::vector<long> vertices;  // simplex corner flat indices
    Vec weights;                 // nonnegative barycentric weights, sum 1
    bool clamped;
  };

  Interp interpolate(const Vec& x) const {
    const int d = grid_.dims();
    require(x.size() == d, "interpolate: dimension mismatch");
    Vec t(d);
    VecI base(d);
    bool clamped = false;
    for (int axis = 0; axis < d; ++axis) {
      double s = (x(axis) - grid_.lower()(axis)) / grid_.spacing()(axis);
      if (s < 0.0) {
        s = 0.0;
        clamped = true;
      }
      const double max_s = grid_.points_per_axis()(axis) - 1.0;
      if (s > max_s) {
        s = max_s;
        clamped = true;
      }
      double cell = std::floor(s);
      if (cell > max_s - 1.0) cell = max_s - 1.0;  // top face belongs to the last cell
      base(axis) = static_cast<int>(cell);
      t(axis) = s - cell;
    }
    // Kuhn simplex: sort local coordinates descending, walk unit steps along
    // the sorted axes.
    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return t(i) > t(j); });

    Interp out;
    out.clamped = clamped;
    out.vertices.resize(d + 1);
    out.weights = Vec(d + 1);
    VecI corner = base;
    out.vertices[0] = grid_.flat_index(corner);
    out.weights(0) = 1.0 - t(order[0]);
    for (int k = 0; k < d; ++k) {
      corner(order[k]) += 1;
      out.vertices[k + 1] = grid_.flat_index(corner);
      out.weights(k + 1) = (k + 1 < d) ? t(order[k]) - t(order[k + 1]) : t(order[d - 1]);
    }
    out.value = 0.0;
    for (int k = 0; k <= d; ++k) out.value += out.weights(k) * values_(out.vertices[k]);
    return out;
  }

  double value_at(const Vec& x) const { return interpolate(x).value; }

  /// Value and the (a.e. defined) simplex gradient at x.
  double value_and_grad(const Vec& x, Vec* grad) const {
    const Interp in = interpolate(x);
    if (grad) {
      const int d = grid_.dims();
      grad->setZero(d);
      // Within the simplex the value is affine; the derivative along the k-th
      // sorted axis is the difference of consecutive corner values.
      // Recover axis order from the corner walk.
      for (int k = 0; k < d; ++k) {
        const long delta = in.vertices[k + 1] - in.vertices[k];
        // Identify which axis this unit step took.
        long stride = 1;
        for (int axis = d - 1; axis >= 0; --axis) {
          if (delta == stride) {
            (*grad)(axis) =
                (values_(in.vertices[k + 1]) - values_(in.vertices[k])) / grid_.spacing()(axis);
            break;
          }
          stride *= grid_.points_per_axis()(axis);
        }
      }
    }
    return in.value;
  }

  Vec value_batch(const Mat& X) const {
    Vec out(X.rows());
    for (long i = 0; i < X.rows(); ++i) out(i) = value_at(X.row(i).transpose());
    return out;
  }

 private:
  Discretization grid_;
  Vec values_;
};

/// Frozen interpolation pattern for a fixed set of query points: vertex ids
/// and barycentric weights, applied to changing vertex values. Queries
/// outside the box are flagged so callers can charge an escape value.
struct InterpStencil {
  Eigen::MatrixX<long> vertices;  // m x (d+1)
  Mat weights;                    // m x (d+1)
  std::vector<char> outside;

  static InterpStencil build(const PiecewiseLinearValue& pl, const Mat& queries) {
    const int d = pl.grid().dims();
    InterpStencil s;
    s.vertices.resize(queries.rows(), d + 1);
    s.weights.resize(queries.rows(), d + 1);
    s.outside.resize(queries.rows());
    for (long i = 0; i < queries.rows(); ++i) {
      const Vec x = queries.row(i).transpose();
      s.outside[i] = !pl.grid().contains(x);
      const auto in = pl.interpolate(x);
      for (int k = 0; k <= d; ++k) {
        s.vertices(i, k) = in.vertices[k];
        s.weights(i, k) = in.weights(k);
      }
    }
    return s;
  }

  /// Interpolated values with `escape` charged to out-of-box queries.
  Vec apply(const Vec& values, double escape) const {
    Vec out(vertices.rows());
    for (long i = 0; i < vertices.rows(); ++i) {
      if (outside[i]) {
        out(i) = escape;
        continue;
      }
      double acc = 0.0;
      for (int k = 0; k < vertices.cols(); ++k) acc += weights(i, k) * values(vertices(i, k));
      out(i) = acc;
    }
    return out;
  }
};

namespace detail {

/// Max 1-norm of the interpolation gradient over every simplex of one cell.
inline double cell_max_gradient_1norm(const PiecewiseLinearValue& pl, const VecI& base) {
  const auto& grid = pl.grid();
  const int d = grid.dims();
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  double best = 0.0;
  do {
    VecI corner = base;
    long prev = grid.flat_index(corner);
    double norm1 = 0.0;
    for (int k = 0; k < d; ++k) {
      corner(order[k]) += 1;
      const long next = grid.flat_index(corner);
      norm1 += std::abs(pl.values()(next) - pl.values()(prev)) / grid.spacing()(order[k]);
      prev = next;
    }
    best = std::max(best, norm1);
  } while (std::next_permutation(order.begin(), order.end()));
  return best;
}

}  // namespace detail

/// Per-grid-point local Lipschitz constants of the interpolant: the max
/// simplex gradient 1-norm over all cells incident to the point.
inline Vec local_lipschitz_per_point(const PiecewiseLinearValue& pl) {
  const auto& grid = pl.grid();
  const int d = grid.dims();
  const long n = grid.num_points();
  // One pass over cells, scatter the cell bound to its 2^d corners.
  Vec out = Vec::Zero(n);
  VecI cells = grid.points_per_axis().array() - 1;
  long num_cells = 1;
  for (int i = 0; i < d; ++i) num_cells *= cells(i);
  for (long c = 0; c < num_cells; ++c) {
    VecI base(d);
    long rest = c;
    for (int axis = d - 1; axis >= 0; --axis) {
      base(axis) = static_cast<int>(rest % cells(axis));
      rest /= cells(axis);
    }
    const double bound = detail::cell_max_gradient_1norm(pl, base);
    for (long corner = 0; corner < (1L << d); ++corner) {
      VecI idx = base;
      for (int axis = 0; axis < d; ++axis)
        if (corner & (1L << axis)) idx(axis) += 1;
      const long flat = grid.flat_index(idx);
      out(flat) = std::max(out(flat), bound);
    }
  }
  return out;
}

}  // namespace lyasafe
