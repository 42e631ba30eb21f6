#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "lyasafe/adp.hpp"
#include "lyasafe/common.hpp"
#include "lyasafe/confidence.hpp"
#include "lyasafe/gp.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/lyapunov.hpp"
#include "lyasafe/policy.hpp"

namespace lyasafe {

/// Ground-truth plant in normalized coordinates: states and actions live in
/// [-1, 1] boxes, physical values are scale * normalized. The prior is the
/// exact affine model the learner is given; the true step is hidden behind a
/// function so environments stay interchangeable.
struct Plant {
  int state_dim = 0;
  int action_dim = 0;
  Vec state_scale;   // physical = scale .* normalized
  Vec action_scale;
  std::function<Vec(const Vec&, const Vec&)> step_true_physical;
  AffinePrior prior_physical;

  Vec to_physical_state(const Vec& xn) const { return state_scale.cwiseProduct(xn); }
  Vec to_normalized_state(const Vec& xp) const { return xp.cwiseQuotient(state_scale); }
  Vec to_physical_action(const Vec& un) const { return action_scale.cwiseProduct(un); }

  Vec step_true(const Vec& x_norm, const Vec& u_norm) const {
    return to_normalized_state(
        step_true_physical(to_physical_state(x_norm), to_physical_action(u_norm)));
  }

  AffinePrior prior_normalized() const {
    const Mat Tx = state_scale.asDiagonal();
    const Mat Tx_inv = state_scale.cwiseInverse().asDiagonal();
    const Mat Tu = action_scale.asDiagonal();
    return {Tx_inv * prior_physical.A * Tx, Tx_inv * prior_physical.B * Tu};
  }
};

/// Measurement of a next state with independent truncated-Gaussian noise per
/// dimension, bounded at three standard deviations (hence sub-Gaussian).
inline Vec observe(const Vec& true_next, double noise_sigma, std::mt19937_64& rng) {
  require(noise_sigma >= 0.0, "observe: noise must be nonnegative");
  if (noise_sigma == 0.0) return true_next;
  std::normal_distribution<double> dist(0.0, noise_sigma);
  Vec out = true_next;
  for (long i = 0; i < out.size(); ++i) {
    double draw = dist(rng);
    while (std::abs(draw) > 3.0 * noise_sigma) draw = dist(rng);
    out(i) += draw;
  }
  return out;
}

struct RolloutResult {
  Mat states;   // (steps + 1) x d_x, normalized
  Mat actions;  // steps x d_u
  double discounted_cost = 0.0;
};

/// Closed-loop rollout under the true dynamics, accumulating the discounted
/// stage cost.
inline RolloutResult rollout(const Plant& plant, const NeuralPolicy& policy, const Vec& x0_norm,
                             int steps, const CostSpec& cost) {
  require(steps >= 1, "rollout: needs at least one step");
  RolloutResult out;
  out.states.resize(steps + 1, plant.state_dim);
  out.actions.resize(steps, plant.action_dim);
  Vec x = x0_norm;
  out.states.row(0) = x.transpose();
  double discount = 1.0;
  for (int t = 0; t < steps; ++t) {
    const Vec u = policy.forward(x);
    out.discounted_cost += discount * stage_cost(cost, x, u);
    discount *= cost.gamma;
    x = plant.step_true(x, u);
    out.states.row(t + 1) = x.transpose();
    out.actions.row(t) = u.transpose();
  }
  return out;
}

/// Brute-force region-of-attraction membership for grid cells: a cell is in
/// the set iff its closed-loop trajectory stays inside the verification box
/// and ends inside the goal ball. `subset` restricts the sweep; untested
/// cells report false.
inline std::vector<char> true_roa_oracle(const Plant& plant, const NeuralPolicy& policy,
                                         const Discretization& grid, int horizon_steps,
                                         double ball_radius,
                                         const std::vector<long>* subset = nullptr) {
  std::vector<char> member(grid.num_points(), 0);
  std::vector<long> cells;
  if (subset) {
    cells = *subset;
  } else {
    cells.resize(grid.num_points());
    std::iota(cells.begin(), cells.end(), 0);
  }
  for (long cell : cells) {
    Vec x = grid.point(cell);
    bool stayed = true;
    for (int t = 0; t < horizon_steps; ++t) {
      x = plant.step_true(x, policy.forward(x));
      if (!grid.contains(x)) {
        stayed = false;
        break;
      }
      if (x.lpNorm<Eigen::Infinity>() < 1e-4) break;  // deep in the goal ball
    }
    member[cell] = stayed && x.norm() <= ball_radius;
  }
  return member;
}

struct MeasuredTransition {
  Vec input;              // concatenated (x, u), normalized
  Vec measured_next;      // noisy successor, normalized
  Vec true_next;          // noise-free successor (ground truth, logging only)
  bool violation = false; // true successor left the certified level set
  bool backup_engaged = false;
  int backup_steps = 0;
};

/// Collects one measurement at a chosen safe pair: the system is reset to the
/// target state (episodic evaluation), the action is applied once through the
/// true dynamics and the noisy sensor. If the successor's upper confidence
/// bound reaches the certified level, the backup policy walks it back into
/// the interior; a ground-truth check records whether the successor actually
/// stayed inside the level set.
template <typename UpperBoundFn>
MeasuredTransition collect_measurement(const Plant& plant, const Vec& target_state,
                                       const Vec& target_action, const NeuralPolicy& backup_policy,
                                       const LyapunovFunction& v, double c_n, double noise_sigma,
                                       std::mt19937_64& rng, const UpperBoundFn& policy_upper_bound,
                                       int max_backup_steps = 50) {
  MeasuredTransition out;
  out.input.resize(target_state.size() + target_action.size());
  out.input << target_state, target_action;
  out.true_next = plant.step_true(target_state, target_action);
  out.measured_next = observe(out.true_next, noise_sigma, rng);
  out.violation = v.value_capped(out.true_next) > c_n;

  Vec x = out.true_next;
  while (out.backup_steps < max_backup_steps && policy_upper_bound(x) > c_n) {
    out.backup_engaged = true;
    x = plant.step_true(x, backup_policy.forward(x));
    ++out.backup_steps;
  }
  return out;
}

}  // namespace lyasafe
