#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/value_function.hpp"

namespace lyasafe {

struct QuadraticLyapunov {
  Mat P;  // v(x) = x^T P x
};

/// Lyapunov candidate: either an explicit quadratic form or a piecewise
/// linear value function. Grid values and per-point local Lipschitz
/// constants (1-norm of the gradient) are cached at construction; instances
/// are immutable afterwards.
class LyapunovFunction {
 public:
  static LyapunovFunction quadratic(Mat P, const Discretization& grid) {
    LyapunovFunction v;
    v.form_ = QuadraticLyapunov{std::move(P)};
    v.cache(grid);
    return v;
  }

  static LyapunovFunction from_values(PiecewiseLinearValue pl) {
    LyapunovFunction v;
    v.form_ = std::move(pl);
    v.cache(std::get<PiecewiseLinearValue>(v.form_).grid());
    return v;
  }

  double operator()(const Vec& x) const {
    if (const auto* quad = std::get_if<QuadraticLyapunov>(&form_)) {
      return x.dot(quad->P * x);
    }
    return std::get<PiecewiseLinearValue>(form_).value_at(x);
  }

  /// Value of v at the predicted next state; queries outside the grid box are
  /// charged the maximum grid value so they can never certify.
  double value_capped(const Vec& x) const {
    if (!grid_->contains(x)) return max_grid_value_;
    return (*this)(x);
  }

  Vec gradient(const Vec& x) const {
    if (const auto* quad = std::get_if<QuadraticLyapunov>(&form_)) {
      return 2.0 * (quad->P * x);
    }
    Vec g;
    std::get<PiecewiseLinearValue>(form_).value_and_grad(x, &g);
    return g;
  }

  const Discretization& grid() const { return *grid_; }
  const Vec& grid_values() const { return grid_values_; }
  double max_grid_value() const { return max_grid_value_; }
  double global_lipschitz() const { return global_lipschitz_; }
  const Vec& local_lipschitz() const { return local_lipschitz_; }
  bool is_quadratic() const { return std::holds_alternative<QuadraticLyapunov>(form_); }

 private:
  LyapunovFunction() = default;

  void cache(const Discretization& grid) {
    grid_ = std::make_shared<Discretization>(grid);
    const long n = grid.num_points();
    grid_values_.resize(n);
    for (long i = 0; i < n; ++i) grid_values_(i) = (*this)(grid.point(i));
    max_grid_value_ = grid_values_.maxCoeff();
    if (const auto* quad = std::get_if<QuadraticLyapunov>(&form_)) {
      local_lipschitz_ = quadratic_local_lipschitz(quad->P, grid);
    } else {
      local_lipschitz_ = local_lipschitz_per_point(std::get<PiecewiseLinearValue>(form_));
    }
    global_lipschitz_ = local_lipschitz_.maxCoeff();
  }

  /// Max over cells incident to each point of sup_cell |2 P x|_1, row-wise
  /// interval arithmetic over the cell box.
  static Vec quadratic_local_lipschitz(const Mat& P, const Discretization& grid) {
    const int d = grid.dims();
    const long n = grid.num_points();
    Vec out = Vec::Zero(n);
    for (long i = 0; i < n; ++i) {
      const Vec x = grid.point(i);
      // Cells incident to the point: one spacing in every direction,
      // clipped to the box.
      Vec lo = (x - grid.spacing()).cwiseMax(grid.lower());
      Vec hi = (x + grid.spacing()).cwiseMin(grid.upper());
      const Vec center = 0.5 * (lo + hi);
      const Vec radius = 0.5 * (hi - lo);
      double norm1 = 0.0;
      for (int r = 0; r < d; ++r) {
        const Vec row = 2.0 * P.row(r).transpose();
        norm1 += std::abs(row.dot(center)) + row.cwiseAbs().dot(radius);
      }
      out(i) = norm1;
    }
    return out;
  }

  std::variant<QuadraticLyapunov, PiecewiseLinearValue> form_;
  std::shared_ptr<Discretization> grid_;
  Vec grid_values_;
  double max_grid_value_ = 0.0;
  double global_lipschitz_ = 0.0;
  Vec local_lipschitz_;
};

struct LipschitzConstants {
  double L_h = 0.0;
  double L_g = 0.0;
  double L_pi = 0.0;       // policy class constant
  double L_v_global = 0.0;
  Vec L_v_local;           // per grid point
  bool use_local = true;

  double L_f() const { return L_h + L_g; }
  double L_v_at(long cell) const {
    return (use_local && cell >= 0 && cell < L_v_local.size()) ? L_v_local(cell) : L_v_global;
  }
};

/// L_dv = L_v L_f (L_pi + 1) + L_v, with L_v global or local to the cell.
inline double l_delta_v(const LipschitzConstants& c, bool use_local, long cell) {
  const double lv =
      (use_local && cell >= 0 && cell < c.L_v_local.size()) ? c.L_v_local(cell) : c.L_v_global;
  return lv * c.L_f() * (c.L_pi + 1.0) + lv;
}

struct ValidationReport {
  struct Violation {
    long cell;
    std::string what;
  };
  std::vector<Violation> items;
  bool ok() const { return items.empty(); }
};

/// Checks the Lyapunov candidate assumptions on the grid: zero at the origin
/// point, positive elsewhere, and (when a mean dynamics map under a policy is
/// supplied) one-step decrease of v along the mean transitions.
inline ValidationReport lyapunov_validate(
    const LyapunovFunction& v, const Discretization& grid,
    const std::function<Vec(const Vec&)>& mean_step_under_policy = nullptr) {
  ValidationReport report;
  const long origin_cell = grid.nearest(Vec::Zero(grid.dims())).index;
  for (long i = 0; i < grid.num_points(); ++i) {
    const double vi = v.grid_values()(i);
    if (i == origin_cell) {
      if (std::abs(vi) > 1e-9)
        report.items.push_back({i, "v at the origin point is not zero"});
      continue;
    }
    if (!(vi > 0.0)) {
      report.items.push_back({i, "v is not positive away from the origin"});
      continue;
    }
    if (mean_step_under_policy) {
      const Vec next = mean_step_under_policy(grid.point(i));
      // The decrease check only applies where the mean image stays in the
      // domain; beyond the box v has no honest value.
      if (grid.contains(next) && v.value_capped(next) >= vi)
        report.items.push_back({i, "mean dynamics do not decrease v"});
    }
  }
  return report;
}

}  // namespace lyasafe
