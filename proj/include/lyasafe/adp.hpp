#pragma once

#include <functional>
#include <utility>

#include "lyasafe/common.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/policy.hpp"
#include "lyasafe/value_function.hpp"

namespace lyasafe {

struct CostSpec {
  Mat Q;  // positive definite state weights
  Mat R;  // positive definite action weights
  double gamma = 0.98;   // discount in (0, 1)
  double lambda = 1.0;   // safety constraint multiplier

  void validate() const {
    require(gamma > 0.0 && gamma < 1.0, "cost: discount must lie in (0, 1)");
    require(lambda >= 0.0, "cost: lambda must be nonnegative");
    Eigen::SelfAdjointEigenSolver<Mat> q(Q), r(R);
    require(q.eigenvalues().minCoeff() > 0.0, "cost: Q must be positive definite");
    require(r.eigenvalues().minCoeff() > 0.0, "cost: R must be positive definite");
  }
};

inline double stage_cost(const CostSpec& cost, const Vec& x, const Vec& u) {
  return x.dot(cost.Q * x) + u.dot(cost.R * u);
}

/// Batched stage cost, one row of X / U per sample.
inline Vec stage_cost_batch(const CostSpec& cost, const Mat& X, const Mat& U) {
  return ((X * cost.Q).cwiseProduct(X)).rowwise().sum() +
         ((U * cost.R).cwiseProduct(U)).rowwise().sum();
}

/// Batched mean dynamics: rows of states/actions in, rows of next states out.
using MeanDynamics = std::function<Mat(const Mat& states, const Mat& actions)>;

/// One backup sweep of the cost-to-go under the policy and the mean dynamics:
/// J'(x) = r(x, pi(x)) + gamma J(mu(x, pi(x))) at every vertex. Mean images
/// that leave the grid box are charged the current maximum vertex value so
/// that escaping is never attractive. Returns the max vertex change.
inline double adp_sweep(PiecewiseLinearValue& V, const NeuralPolicy& policy,
                        const MeanDynamics& mean, const CostSpec& cost, const Mat& grid_points) {
  const long n = grid_points.rows();
  const Mat U = policy.forward_batch(grid_points);
  const Mat next = mean(grid_points, U);
  const Vec r = stage_cost_batch(cost, grid_points, U);
  const double escape_value = V.max_value();
  Vec updated(n);
  for (long i = 0; i < n; ++i) {
    const Vec xn = next.row(i).transpose();
    const double j_next = V.grid().contains(xn) ? V.value_at(xn) : escape_value;
    updated(i) = r(i) + cost.gamma * j_next;
  }
  const double residual = (updated - V.values()).cwiseAbs().maxCoeff();
  V.set_values(std::move(updated));
  return residual;
}

struct AdpConvergence {
  int sweeps = 0;
  double final_residual = 0.0;
  bool converged = false;
};

inline AdpConvergence adp_solve(PiecewiseLinearValue& V, const NeuralPolicy& policy,
                                const MeanDynamics& mean, const CostSpec& cost,
                                const Mat& grid_points, int max_sweeps, double tolerance) {
  AdpConvergence out;
  for (int s = 0; s < max_sweeps; ++s) {
    out.final_residual = adp_sweep(V, policy, mean, cost, grid_points);
    out.sweeps = s + 1;
    if (out.final_residual < tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// Value iteration against a discrete action set; used to construct the
/// prior-optimal policy and its cost-to-go. Returns the max vertex change.
inline double value_iteration_sweep(PiecewiseLinearValue& V, const ActionGrid& actions,
                                    const MeanDynamics& mean, const CostSpec& cost,
                                    const Mat& grid_points, VecI* best_action = nullptr) {
  const long n = grid_points.rows();
  const double escape_value = V.max_value();
  Vec best = Vec::Constant(n, kInf);
  if (best_action) best_action->setZero(n);
  for (int a = 0; a < actions.count(); ++a) {
    const Mat U = actions.actions.row(a).replicate(n, 1);
    const Mat next = mean(grid_points, U);
    const Vec r = stage_cost_batch(cost, grid_points, U);
    for (long i = 0; i < n; ++i) {
      const Vec xn = next.row(i).transpose();
      const double j_next = V.grid().contains(xn) ? V.value_at(xn) : escape_value;
      const double total = r(i) + cost.gamma * j_next;
      if (total < best(i)) {
        best(i) = total;
        if (best_action) (*best_action)(i) = a;
      }
    }
  }
  const double residual = (best - V.values()).cwiseAbs().maxCoeff();
  V.set_values(std::move(best));
  return residual;
}

}  // namespace lyasafe
