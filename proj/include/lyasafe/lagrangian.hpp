#pragma once

#include <utility>

#include "lyasafe/adp.hpp"
#include "lyasafe/common.hpp"
#include "lyasafe/confidence.hpp"
#include "lyasafe/gp.hpp"
#include "lyasafe/lyapunov.hpp"
#include "lyasafe/policy.hpp"
#include "lyasafe/value_function.hpp"

namespace lyasafe {

struct LagrangianTerms {
  double objective = 0.0;
  double cost_to_go = 0.0;  // sum of r + gamma J(mu) over the batch
  double penalty = 0.0;     // lambda-weighted decrease surplus
};

/// Safety-constrained policy objective over a batch of grid states:
///
///   sum_x  r(x, pi(x)) + gamma J(mu(x, pi(x)))
///          + lambda ( v(mu(x, pi(x))) + L_v beta sigma(x, pi(x))
///                     - v(x) + L_dv tau )
///
/// The penalty uses a fresh one-step bound on v(f) (not the intersected
/// table) so the term stays differentiable in the policy parameters. When a
/// gradient is requested it is accumulated by reverse mode through the
/// policy, the GP mean and deviation, and the interpolated values.
inline LagrangianTerms lagrangian_objective(
    const NeuralPolicy& policy, const PiecewiseLinearValue& cost_to_go,
    const LyapunovFunction& lyapunov, const PosteriorDynamicsModel& model,
    const Mat& batch_states, const CostSpec& cost, const LipschitzConstants& lips, double tau,
    double beta, Vec* gradient = nullptr) {
  const long batch = batch_states.rows();
  const int d_u = policy.output_dim();
  const int d_x = policy.input_dim();
  LagrangianTerms terms;
  Mat dLdU = Mat::Zero(batch, d_u);
  const Mat U = policy.forward_batch(batch_states);

  for (long i = 0; i < batch; ++i) {
    const Vec x = batch_states.row(i).transpose();
    const Vec u = U.row(i).transpose();
    Vec a(d_x + d_u);
    a << x, u;

    const auto pred = model.predict_with_grad(a);
    const Vec mu = pred.mean;
    const double sigma_sum = pred.sigma.sum();
    const Mat dmu_du = pred.dmean_da.rightCols(d_u);
    const Vec dsig_du = static_cast<double>(model.output_count()) *
                        pred.dsigma_da.tail(d_u);  // shared kernel: equal per-dim sigmas

    const bool inside = cost_to_go.grid().contains(mu);
    Vec grad_J = Vec::Zero(d_x);
    const double j_mu =
        inside ? cost_to_go.value_and_grad(mu, gradient ? &grad_J : nullptr)
               : cost_to_go.max_value();
    Vec grad_v = Vec::Zero(d_x);
    double v_mu = lyapunov.max_grid_value();
    if (inside) {
      v_mu = lyapunov(mu);
      if (gradient) grad_v = lyapunov.gradient(mu);
    }

    const long cell_x = lyapunov.grid().nearest(x).index;
    const long cell_mu = lyapunov.grid().nearest(mu).index;
    const double lv = lips.L_v_at(cell_mu);
    const double l_dv = l_delta_v(lips, lips.use_local, cell_x);

    const double r = stage_cost(cost, x, u);
    const double cost_term = r + cost.gamma * j_mu;
    const double penalty_core = v_mu + lv * beta * sigma_sum - lyapunov(x) + l_dv * tau;
    terms.cost_to_go += cost_term;
    terms.penalty += cost.lambda * penalty_core;

    if (gradient) {
      Vec ddu = 2.0 * (cost.R * u);
      ddu += dmu_du.transpose() * (cost.gamma * grad_J + cost.lambda * grad_v);
      ddu += cost.lambda * lv * beta * dsig_du;
      dLdU.row(i) = ddu.transpose();
    }
  }
  terms.objective = terms.cost_to_go + terms.penalty;
  if (gradient) *gradient = policy.backward_batch(batch_states, dLdU);
  return terms;
}

}  // namespace lyasafe
