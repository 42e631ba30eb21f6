#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lyasafe/adp.hpp"
#include "lyasafe/checkpoint.hpp"
#include "lyasafe/config.hpp"
#include "lyasafe/confidence.hpp"
#include "lyasafe/csv.hpp"
#include "lyasafe/env.hpp"
#include "lyasafe/gp.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/lagrangian.hpp"
#include "lyasafe/lyapunov.hpp"
#include "lyasafe/pendulum.hpp"
#include "lyasafe/policy.hpp"
#include "lyasafe/safe_sets.hpp"
#include "lyasafe/value_function.hpp"

namespace lyasafe {

// ---------------------------------------------------------------------------
// Plants
// ---------------------------------------------------------------------------

inline Plant make_pendulum_plant(const ExperimentConfig& cfg) {
  PendulumParams params{cfg.pend_mass,    cfg.pend_length, cfg.pend_gravity,
                        cfg.pend_friction, cfg.pend_torque_max, cfg.pend_dt,
                        cfg.pend_control_substeps};
  params.validate();
  const double angle_max =
      cfg.pend_angle_max > 0.0 ? cfg.pend_angle_max : 1.25 * params.saturation_angle();
  const double velocity_max = cfg.pend_velocity_max > 0.0
                                  ? cfg.pend_velocity_max
                                  : std::sqrt(params.gravity / params.length) * angle_max;
  Plant plant;
  plant.state_dim = 2;
  plant.action_dim = 1;
  plant.state_scale = Vec(2);
  plant.state_scale << angle_max, velocity_max;
  plant.action_scale = Vec::Constant(1, params.effective_torque_max());
  plant.step_true_physical = [params](const Vec& x, const Vec& u) {
    return pendulum_step_true(params, x, u(0)).state;
  };
  plant.prior_physical = pendulum_prior(params, cfg.pend_mass_prior);
  return plant;
}

/// Fig.-1-style 1-D system: unstable drift with a cubic hardening term and a
/// torque-limited input, so large states cannot be recovered. The prior is
/// the exact discretization of a too-optimistic linear model.
inline Plant make_toy1d_plant(const ExperimentConfig& cfg) {
  const double a = cfg.toy_a;
  const double cubic = cfg.toy_cubic;
  const double u_max = cfg.toy_u_max;
  const double dt = cfg.toy_dt;
  const int sub = cfg.toy_control_substeps;
  require(a > 0 && u_max > 0 && dt > 0 && sub >= 1 && cfg.toy_x_max > 0,
          "toy plant: parameters must be positive");
  Plant plant;
  plant.state_dim = 1;
  plant.action_dim = 1;
  plant.state_scale = Vec::Constant(1, cfg.toy_x_max);
  plant.action_scale = Vec::Constant(1, u_max);
  const double stop = 3.0 * cfg.toy_x_max;  // hard stop; the cubic ODE blows up otherwise
  plant.step_true_physical = [a, cubic, u_max, dt, sub, stop](const Vec& x, const Vec& u) {
    double s = x(0);
    const double tq = std::clamp(u(0), -u_max, u_max);
    for (int i = 0; i < sub; ++i) {
      auto deriv = [&](double z) { return a * z + cubic * z * z * z + tq; };
      const double k1 = deriv(s);
      const double k2 = deriv(s + 0.5 * dt * k1);
      const double k3 = deriv(s + 0.5 * dt * k2);
      const double k4 = deriv(s + dt * k3);
      s = std::clamp(s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), -stop, stop);
    }
    return Vec::Constant(1, s);
  };
  const double T = dt * sub;
  const double ad = std::exp(cfg.toy_a_prior * T);
  Mat A(1, 1), B(1, 1);
  A << ad;
  B << (ad - 1.0) / cfg.toy_a_prior;
  plant.prior_physical = {A, B};
  return plant;
}

inline Plant make_plant(const ExperimentConfig& cfg) {
  return cfg.environment == "pendulum" ? make_pendulum_plant(cfg) : make_toy1d_plant(cfg);
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

struct IterationRecord {
  int n = 0;
  double beta = 0.0;
  double c_n = 0.0;
  long certified_cells = 0;
  long safe_set_size = 0;
  long dec_set_size = 0;
  long sampled_cell = -1;
  int sampled_action = 0;
  double sampled_action_value = 0.0;
  double sample_width = 0.0;
  long cum_violations = 0;
  bool policy_accepted = false;
  bool oracle_sound = true;
  int calibration_warnings = 0;
  bool backup_engaged = false;
};

struct RunLog {
  std::vector<IterationRecord> rows;
  double c_initial = 0.0;
  long initial_cells = 0;
  double c_final = 0.0;
  long final_cells = 0;
  long total_violations = 0;
  bool all_oracle_sound = true;
  bool sets_monotone = true;
  bool levels_monotone = true;
  bool early_stop_no_safe_sample = false;
  double initial_policy_cost = 0.0;
  double learned_policy_cost = 0.0;
  long measurements = 0;
  std::vector<double> wall_ms;  // timing sidecar, excluded from deterministic artifacts
};

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

namespace detail {

/// Scales weights and biases layer-wise (ReLU is positively homogeneous) so
/// the certified Lipschitz bound stays within the policy class.
inline void project_lipschitz(NeuralPolicy& policy, double max_bound) {
  const double bound = policy.lipschitz_bound();
  if (bound <= max_bound || bound <= 0.0) return;
  const double factor =
      std::pow(max_bound / bound, 1.0 / static_cast<double>(policy.layer_count()));
  for (int l = 0; l < policy.layer_count(); ++l) {
    policy.weights()[l] *= factor;
    policy.biases()[l] *= factor;
  }
}

/// Embeds the linear map u = K x exactly into a two-hidden-layer ReLU
/// network over the box |x| <= 1: a bias shift keeps the passthrough units
/// on the active side of the ReLU, so the certified bound stays near |K|.
/// The remaining units get small live weights for later refinement.
inline void init_linear(NeuralPolicy& policy, const Mat& K, std::mt19937_64& rng) {
  const int d = policy.input_dim();
  require(policy.layer_count() >= 2, "linear init needs at least one hidden layer");
  require(policy.weights().front().rows() >= d, "linear init needs at least d hidden units");
  std::normal_distribution<double> noise(0.0, 0.002);
  auto fill_small = [&](Mat& W) {
    for (long i = 0; i < W.rows(); ++i)
      for (long j = 0; j < W.cols(); ++j) W(i, j) = noise(rng);
  };
  for (int l = 0; l < policy.layer_count(); ++l) {
    fill_small(policy.weights()[l]);
    policy.biases()[l].setConstant(0.25);  // keep spare units alive
  }
  // First layer: exact passthrough of x + 2 (positive on the box).
  Mat& W0 = policy.weights()[0];
  W0.topRows(d).setZero();
  W0.topLeftCorner(d, d) = Mat::Identity(d, d);
  policy.biases()[0].head(d).setConstant(2.0);
  // Middle layers: exact identity on the passthrough block.
  for (int l = 1; l + 1 < policy.layer_count(); ++l) {
    Mat& W = policy.weights()[l];
    W.topRows(d).setZero();
    W.topLeftCorner(d, d) = Mat::Identity(d, d);
    policy.biases()[l].head(d).setZero();
  }
  // Output layer: K times the passthrough with the shift removed.
  Mat& Wn = policy.weights().back();
  Wn.setZero();
  Wn.leftCols(d) = K;
  policy.biases().back() = -2.0 * K.rowwise().sum();
}

inline std::string pad_number(int value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace detail

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg)
      : config_(std::move(cfg)),
        plant_(make_plant(config_)),
        grid_(build_grid(Vec::Constant(plant_.state_dim, -1.0),
                         Vec::Constant(plant_.state_dim, 1.0), grid_counts(config_, plant_))),
        actions_(build_action_grid(Vec::Constant(plant_.action_dim, -1.0),
                                   Vec::Constant(plant_.action_dim, 1.0),
                                   VecI::Constant(plant_.action_dim, config_.action_points))),
        policy_(plant_.state_dim, config_.policy_hidden, plant_.action_dim,
                Vec::Constant(plant_.action_dim, 1.0)),
        rng_(static_cast<uint64_t>(config_.seed)) {
    config_.validate();
    grid_points_ = grid_.all_points();
    cost_ = make_cost(config_, plant_);
    kernel_ = make_kernel(config_, plant_);

    // Cost-to-go of the prior-optimal policy via value iteration; it doubles
    // as the (frozen) Lyapunov candidate after normalization.
    PiecewiseLinearValue prior_value(grid_, Vec::Zero(grid_.num_points()));
    Mat greedy_targets;
    solve_prior_value(prior_value, &greedy_targets);

    // Seed the network with the best linear fit of the greedy actions (in
    // pre-squash space, away from saturation), then refine it within the
    // policy class.
    {
      std::vector<long> fit_rows;
      for (long i = 0; i < grid_points_.rows(); ++i)
        if (greedy_targets.row(i).cwiseAbs().maxCoeff() <= 0.8) fit_rows.push_back(i);
      Mat K = Mat::Zero(plant_.action_dim, plant_.state_dim);
      if (fit_rows.size() >= static_cast<size_t>(plant_.state_dim + 1)) {
        Mat X(fit_rows.size(), plant_.state_dim), Z(fit_rows.size(), plant_.action_dim);
        for (size_t r = 0; r < fit_rows.size(); ++r) {
          X.row(r) = grid_points_.row(fit_rows[r]);
          Z.row(r) = greedy_targets.row(fit_rows[r]).unaryExpr(
              [](double t) { return std::atanh(std::clamp(t, -0.999, 0.999)); });
        }
        K = (X.colPivHouseholderQr().solve(Z)).transpose();
      }
      const double gain = K.cwiseAbs().maxCoeff();
      if (gain > 0.95 * config_.lipschitz_policy_max)
        K *= 0.95 * config_.lipschitz_policy_max / gain;
      detail::init_linear(policy_, K, rng_);
    }
    distill(policy_, greedy_targets);
    detail::project_lipschitz(policy_, config_.lipschitz_policy_max);
    initial_policy_ = policy_;

    Vec lyap_values = prior_value.values();
    const long origin = grid_.nearest(Vec::Zero(plant_.state_dim)).index;
    lyap_values.array() -= lyap_values(origin);
    lyap_values = lyap_values.cwiseMax(0.0);
    lyap_values(origin) = 0.0;
    lyapunov_.emplace(LyapunovFunction::from_values(PiecewiseLinearValue(grid_, lyap_values)));
    value_.emplace(PiecewiseLinearValue(grid_, lyap_values));

    lips_.L_h = prior_one_norm(plant_.prior_normalized());
    lips_.L_g = config_.lipschitz_model_error;
    lips_.L_pi = config_.lipschitz_policy_max;
    lips_.L_v_global = lyapunov_->global_lipschitz();
    lips_.L_v_local = lyapunov_->local_lipschitz();
    lips_.use_local = config_.lipschitz_use_local;

    setup_initial_safe_set();

    table_.emplace(grid_, actions_);
    table_->init_initial_rows(s0_cells_, s0_actions_, s0_bounds_);
    table_->reset_policy_rows(policy_.forward_batch(grid_points_));

    obs_ = ObservationSet{Mat(0, plant_.state_dim + plant_.action_dim),
                          Mat(0, plant_.state_dim), config_.noise_sigma};
    model_.emplace(fit_posterior(plant_.prior_normalized(), kernel_, obs_));
  }

  const ExperimentConfig& config() const { return config_; }
  const Plant& plant() const { return plant_; }
  const Discretization& grid() const { return grid_; }
  const ActionGrid& actions() const { return actions_; }
  const LyapunovFunction& lyapunov() const { return *lyapunov_; }
  const LipschitzConstants& lipschitz() const { return lips_; }
  const NeuralPolicy& policy() const { return policy_; }
  const NeuralPolicy& initial_policy() const { return initial_policy_; }
  const PairSet& initial_pairs() const { return s0_pairs_; }
  const PosteriorDynamicsModel& model() const { return *model_; }
  ConfidenceTable& table() { return *table_; }
  double initial_level() const { return c_init_; }
  std::mt19937_64& rng() { return rng_; }

  void load_measurements(const Mat& inputs, const Mat& residuals) {
    obs_.inputs = inputs;
    obs_.residuals = residuals;
    model_.emplace(fit_posterior(plant_.prior_normalized(), kernel_, obs_));
  }

  /// Certifies the current policy against the current model (no learning).
  LevelResult certify() {
    table_->reset_policy_rows(policy_.forward_batch(grid_points_));
    table_->update(RowFamily::kPolicy, *model_, *lyapunov_, lips_, current_beta());
    return largest_level(*lyapunov_, grid_, *table_, lips_, grid_.tau());
  }

  void set_policy(NeuralPolicy p) { policy_ = std::move(p); }

  double current_beta() {
    if (config_.beta_mode == "fixed") return config_.beta_fixed;
    // Greedy capacity over a deterministic subsample of the box.
    const int m = std::min<long>(config_.capacity_candidates, grid_.num_points());
    Mat cands(m, plant_.state_dim + plant_.action_dim);
    const long stride = std::max<long>(1, grid_.num_points() / m);
    for (int i = 0; i < m; ++i) {
      const long cell = std::min<long>(i * stride, grid_.num_points() - 1);
      cands.row(i) << grid_points_.row(cell),
          actions_.actions.row(i % actions_.count());
    }
    const int budget = std::min<int>(m, static_cast<int>(obs_.count()) + 1);
    const double gamma_n = info_capacity_greedy(kernel_, cands, budget, config_.noise_sigma);
    return beta_value(ConfidenceScale::theoretical(config_.beta_rkhs_bound, config_.beta_delta),
                      gamma_n, config_.noise_sigma);
  }

  RunLog run() {
    namespace fs = std::filesystem;
    fs::create_directories(config_.output_dir);
    {
      std::ofstream out(path("config_resolved.cfg"));
      write_config(config_, out);
    }

    RunLog log;
    const double beta0 = current_beta();
    LevelResult level = certify();
    log.c_initial = level.c;
    log.initial_cells = static_cast<long>(level.cells.size());
    write_certificate(level, 0);

    PairSet S_prev = s0_pairs_;
    PairSet D_prev;
    OracleState oracle;
    CsvWriter safe_csv(path("safe_set_growth.csv"));
    safe_csv.row({"iteration", "cell", "action", "action_value", "u_n", "l_n", "member_of"});
    append_set_rows(safe_csv, 0, s0_pairs_, PairSet(), S_prev);

    double c_prev = level.c;
    for (int n = 1; n <= config_.iterations; ++n) {
      const auto t0 = std::chrono::steady_clock::now();
      IterationRecord rec;
      rec.n = n;
      rec.beta = (config_.beta_mode == "fixed") ? config_.beta_fixed : current_beta();

      // Policy evaluation and improvement against the current model.
      const MeanDynamics mean = gp_mean_dynamics();
      for (int s = 0; s < config_.adp_iter_sweeps; ++s)
        adp_sweep(*value_, policy_, mean, cost_, grid_points_);

      NeuralPolicy candidate = improve_policy(rec.beta);

      // Certified level under the incumbent (its rows keep intersecting).
      rec.calibration_warnings +=
          static_cast<int>(table_->update(RowFamily::kPolicy, *model_, *lyapunov_, lips_,
                                          rec.beta).size());
      const LevelResult level_cur = largest_level(*lyapunov_, grid_, *table_, lips_, grid_.tau());
      // Certified level under the candidate (fresh rows).
      auto incumbent_rows = table_->policy_snapshot();
      table_->reset_policy_rows(candidate.forward_batch(grid_points_));
      rec.calibration_warnings +=
          static_cast<int>(table_->update(RowFamily::kPolicy, *model_, *lyapunov_, lips_,
                                          rec.beta).size());
      const LevelResult level_cand = largest_level(*lyapunov_, grid_, *table_, lips_, grid_.tau());

      const bool candidate_ok =
          level_cand.c + kDecreaseStrictness >= level_cur.c &&
          candidate.lipschitz_bound() <= config_.lipschitz_policy_max * (1.0 + 1e-9) &&
          mean_decrease_on_initial_set(candidate);
      if (candidate_ok) {
        policy_ = std::move(candidate);
        level = level_cand;
        rec.policy_accepted = true;
      } else {
        table_->restore_policy_rows(std::move(incumbent_rows));
        level = level_cur;
        rec.policy_accepted = false;
      }
      rec.c_n = level.c;
      rec.certified_cells = static_cast<long>(level.cells.size());
      log.levels_monotone = log.levels_monotone && (level.c >= c_prev - kDecreaseStrictness);
      c_prev = level.c;

      // Confidence refresh for the discrete product rows near the level set,
      // plus the fixed initial rows.
      rec.calibration_warnings += static_cast<int>(
          table_->update(RowFamily::kInitial, *model_, *lyapunov_, lips_, rec.beta).size());
      rec.calibration_warnings += static_cast<int>(
          table_->update_discrete_rows(discrete_refresh_rows(level.c), *model_, *lyapunov_,
                                       lips_, rec.beta).size());

      // Safe and decrease sets with their monotone-growth contract.
      PairSet D_n = dec_set_direct(*table_, *lyapunov_, grid_, lips_, grid_.tau());
      PairSet S_n = safe_set_direct(level.c, grid_, actions_, *table_, *lyapunov_, s0_pairs_);
      S_n.set_generation(n);
      D_n.set_generation(n);
      log.sets_monotone = log.sets_monotone && S_prev.is_subset_of(S_n) &&
                          (D_prev.empty() || D_prev.is_subset_of(D_n));
      rec.safe_set_size = static_cast<long>(S_n.size());
      rec.dec_set_size = static_cast<long>(D_n.size());
      append_set_rows(safe_csv, n, S_n, S_prev, S_n);

      // Most uncertain safe pair, restricted to actions near the policy.
      const PairSet window_set = window_candidates(S_n);
      auto choice = select_sample(window_set.empty() ? S_n : window_set, *table_);
      if (!choice) {
        log.early_stop_no_safe_sample = true;
        log.rows.push_back(rec);
        break;
      }
      rec.sampled_cell = choice->pair.cell;
      rec.sampled_action = choice->pair.action;
      rec.sample_width = choice->width;
      const Vec target_state = grid_.point(choice->pair.cell);
      const Vec target_action = choice->pair.action == kInitialAction
                                    ? table_->initial_action(choice->pair.cell)
                                    : actions_.action(choice->pair.action);
      rec.sampled_action_value = target_action(0);

      auto upper_bound_at = [&](const Vec& x) {
        return table_->policy_row(grid_.nearest(x).index).hi;
      };
      const auto meas =
          collect_measurement(plant_, target_state, target_action, policy_, *lyapunov_, level.c,
                              config_.noise_sigma, rng_, upper_bound_at);
      rec.backup_engaged = meas.backup_engaged;
      if (meas.violation) ++log.total_violations;
      rec.cum_violations = log.total_violations;
      measurements_.push_back(meas);

      // GP update with the residual against the prior.
      const long n_obs = obs_.inputs.rows();
      obs_.inputs.conservativeResize(n_obs + 1, Eigen::NoChange);
      obs_.residuals.conservativeResize(n_obs + 1, Eigen::NoChange);
      obs_.inputs.row(n_obs) = meas.input.transpose();
      obs_.residuals.row(n_obs) =
          (meas.measured_next - plant_.prior_normalized().apply(meas.input)).transpose();
      model_.emplace(fit_posterior(plant_.prior_normalized(), kernel_, obs_));

      if (config_.soundness_check) {
        rec.oracle_sound = oracle.contains_all(*this, level.cells, rec.policy_accepted);
        log.all_oracle_sound = log.all_oracle_sound && rec.oracle_sound;
      }

      if (config_.export_every > 0 && n % config_.export_every == 0 && n != config_.iterations)
        write_certificate(level, n);

      S_prev = std::move(S_n);
      D_prev = std::move(D_n);
      log.rows.push_back(rec);
      log.wall_ms.push_back(std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count());
    }

    log.c_final = level.c;
    log.final_cells = static_cast<long>(level.cells.size());
    log.measurements = obs_.inputs.rows();
    write_certificate(level, config_.iterations);
    write_final_artifacts(log, level);
    return log;
  }

  /// Discounted-cost comparison from a representative start state on the
  /// initial level boundary along the first axis.
  Vec comparison_start_state() const {
    Vec x = Vec::Zero(plant_.state_dim);
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 40; ++i) {
      const double mid = 0.5 * (lo + hi);
      x(0) = mid;
      ((*lyapunov_)(x) <= 0.9 * c_init_ ? lo : hi) = mid;
    }
    x(0) = lo;
    return x;
  }

  void write_certificate(const LevelResult& level, int iteration) {
    CsvWriter csv(path("certificate_" + detail::pad_number(iteration, 4) + ".csv"));
    std::vector<std::string> header = {"cell"};
    for (int i = 0; i < plant_.state_dim; ++i) header.push_back("x" + std::to_string(i));
    header.insert(header.end(), {"v", "l_n", "u_n", "in_level_set"});
    csv.row(header);
    std::vector<char> in_set(grid_.num_points(), 0);
    for (long cell : level.cells) in_set[cell] = 1;
    for (long cell = 0; cell < grid_.num_points(); ++cell) {
      std::vector<std::string> row = {std::to_string(cell)};
      const Vec x = grid_.point(cell);
      for (int i = 0; i < plant_.state_dim; ++i) row.push_back(csv_num(x(i)));
      const Interval& iv = table_->policy_row(cell);
      row.push_back(csv_num(lyapunov_->grid_values()(cell)));
      row.push_back(csv_num(iv.lo));
      row.push_back(csv_num(iv.hi));
      row.push_back(in_set[cell] ? "1" : "0");
      csv.row(row);
    }
  }

 private:
  static VecI grid_counts(const ExperimentConfig& cfg, const Plant& plant) {
    require(static_cast<int>(cfg.grid_points.size()) == plant.state_dim,
            "config: grid.points must list one count per state dimension");
    VecI counts(plant.state_dim);
    for (int i = 0; i < plant.state_dim; ++i) counts(i) = cfg.grid_points[i];
    return counts;
  }

  static CostSpec make_cost(const ExperimentConfig& cfg, const Plant& plant) {
    const int dx = plant.state_dim, du = plant.action_dim;
    require(static_cast<int>(cfg.cost_q.size()) == dx * dx,
            "config: cost.q must be a row-major d_x x d_x matrix");
    require(static_cast<int>(cfg.cost_r.size()) == du * du,
            "config: cost.r must be a row-major d_u x d_u matrix");
    CostSpec cost;
    cost.Q = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                            Eigen::RowMajor>>(cfg.cost_q.data(), dx, dx);
    cost.R = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                            Eigen::RowMajor>>(cfg.cost_r.data(), du, du);
    cost.gamma = cfg.cost_gamma;
    cost.lambda = cfg.cost_lambda;
    cost.validate();
    return cost;
  }

  static KernelSpec make_kernel(const ExperimentConfig& cfg, const Plant& plant) {
    const int d = plant.state_dim + plant.action_dim;
    require(static_cast<int>(cfg.kernel_linear_weights.size()) == d,
            "config: kernel.linear_weights must have one entry per input dimension");
    require(static_cast<int>(cfg.kernel_lengthscales.size()) == d,
            "config: kernel.lengthscales must have one entry per input dimension");
    Vec w(d), l(d);
    for (int i = 0; i < d; ++i) {
      w(i) = cfg.kernel_linear_weights[i];
      l(i) = cfg.kernel_lengthscales[i];
    }
    auto spec = KernelSpec::sum({KernelSpec::linear(w),
                                 KernelSpec::matern32(l, cfg.kernel_signal_variance)});
    validate_kernel(spec);
    return spec;
  }

  static double prior_one_norm(const AffinePrior& prior) {
    Mat joint(prior.A.rows(), prior.A.cols() + prior.B.cols());
    joint << prior.A, prior.B;
    return joint.cwiseAbs().colwise().sum().maxCoeff();
  }

  MeanDynamics prior_mean_dynamics() const {
    const AffinePrior prior = plant_.prior_normalized();
    return [prior](const Mat& X, const Mat& U) -> Mat {
      return X * prior.A.transpose() + U * prior.B.transpose();
    };
  }

  MeanDynamics gp_mean_dynamics() const {
    return [this](const Mat& X, const Mat& U) -> Mat {
      Mat q(X.rows(), X.cols() + U.cols());
      q << X, U;
      Mat means;
      model_->predict_batch(q, &means, nullptr);
      return means;
    };
  }

  void solve_prior_value(PiecewiseLinearValue& V, Mat* greedy_targets) {
    const ActionGrid vi_actions = build_action_grid(
        Vec::Constant(plant_.action_dim, -1.0), Vec::Constant(plant_.action_dim, 1.0),
        VecI::Constant(plant_.action_dim, config_.vi_action_points));
    const AffinePrior prior = plant_.prior_normalized();
    // Frozen interpolation stencils per action make the sweeps cheap.
    std::vector<InterpStencil> stencils;
    std::vector<Vec> stage;
    stencils.reserve(vi_actions.count());
    for (int a = 0; a < vi_actions.count(); ++a) {
      const Mat U = vi_actions.actions.row(a).replicate(grid_points_.rows(), 1);
      const Mat next = grid_points_ * prior.A.transpose() + U * prior.B.transpose();
      stencils.push_back(InterpStencil::build(V, next));
      stage.push_back(stage_cost_batch(cost_, grid_points_, U));
    }
    VecI best_action = VecI::Zero(grid_points_.rows());
    for (int sweep = 0; sweep < config_.adp_init_sweeps; ++sweep) {
      const double escape = V.max_value();
      Vec best = Vec::Constant(grid_points_.rows(), kInf);
      for (int a = 0; a < vi_actions.count(); ++a) {
        const Vec total = stage[a] + cost_.gamma * stencils[a].apply(V.values(), escape);
        for (long i = 0; i < total.size(); ++i) {
          if (total(i) < best(i)) {
            best(i) = total(i);
            best_action(i) = a;
          }
        }
      }
      const double residual = (best - V.values()).cwiseAbs().maxCoeff();
      V.set_values(std::move(best));
      if (residual < config_.adp_tolerance) break;
    }
    if (greedy_targets) {
      greedy_targets->resize(grid_points_.rows(), plant_.action_dim);
      for (long i = 0; i < grid_points_.rows(); ++i)
        greedy_targets->row(i) = vi_actions.actions.row(best_action(i));
    }
  }

  /// Supervised fit of the network to the prior-optimal greedy actions,
  /// constrained to the policy class: the Lipschitz projection runs inside
  /// the loop so the optimizer adapts to it rather than being rescaled once
  /// at the end. Targets are pulled inside the box so the squash can reach
  /// them.
  void distill(NeuralPolicy& policy, const Mat& targets_in) {
    Mat targets = targets_in.cwiseMax(-0.95).cwiseMin(0.95);
    std::uniform_int_distribution<long> pick(0, grid_points_.rows() - 1);
    const int batch = config_.sgd_batch;
    Mat X(batch, plant_.state_dim), T(batch, plant_.action_dim);
    for (int step = 0; step < config_.distill_steps; ++step) {
      for (int b = 0; b < batch; ++b) {
        const long i = pick(rng_);
        X.row(b) = grid_points_.row(i);
        T.row(b) = targets.row(i);
      }
      const Mat U = policy.forward_batch(X);
      const Mat dLdU = (2.0 / batch) * (U - T);
      sgd_update(policy, policy.backward_batch(X, dLdU), config_.distill_learning_rate);
      detail::project_lipschitz(policy, config_.lipschitz_policy_max);
    }
  }

  void setup_initial_safe_set() {
    const Vec& v = lyapunov_->grid_values();
    if (config_.initial_level > 0.0) {
      c_init_ = config_.initial_level;
    } else {
      // Smallest level whose set contains the configured ball.
      double c = 0.0;
      for (long i = 0; i < grid_.num_points(); ++i) {
        if (grid_.point(i).norm() <= config_.initial_safe_radius) c = std::max(c, v(i));
      }
      c_init_ = c;
    }
    require(c_init_ > 0.0, "initial safe level must be positive");
    std::vector<PairKey> pairs;
    for (long i = 0; i < grid_.num_points(); ++i) {
      if (v(i) <= c_init_) {
        s0_cells_.push_back(i);
        pairs.push_back({i, kInitialAction});
      }
    }
    require(!s0_cells_.empty(), "initial safe set is empty");
    s0_actions_.resize(s0_cells_.size(), plant_.action_dim);
    s0_bounds_.resize(s0_cells_.size());
    for (size_t i = 0; i < s0_cells_.size(); ++i) {
      const long cell = s0_cells_[i];
      s0_actions_.row(i) = policy_.forward(grid_.point(cell)).transpose();
      const double l_dv = l_delta_v(lips_, lips_.use_local, cell);
      s0_bounds_(i) = v(cell) - l_dv * grid_.tau() - kInitialRowMargin;
    }
    s0_pairs_ = PairSet(std::move(pairs));
  }

  NeuralPolicy improve_policy(double beta) {
    NeuralPolicy candidate = policy_;
    std::uniform_int_distribution<long> pick(0, grid_points_.rows() - 1);
    Mat batch(config_.sgd_batch, plant_.state_dim);
    Vec grad;
    for (int step = 0; step < config_.sgd_steps; ++step) {
      for (int b = 0; b < config_.sgd_batch; ++b) batch.row(b) = grid_points_.row(pick(rng_));
      lagrangian_objective(candidate, *value_, *lyapunov_, *model_, batch, cost_, lips_,
                           grid_.tau(), beta, &grad);
      sgd_update(candidate, grad / config_.sgd_batch, config_.sgd_learning_rate);
      detail::project_lipschitz(candidate, config_.lipschitz_policy_max);
    }
    return candidate;
  }

  /// Model-mean sanity gate for candidate policies on the assumed-safe seed
  /// region: the mean dynamics must keep decreasing v there.
  bool mean_decrease_on_initial_set(const NeuralPolicy& candidate) {
    Mat X(s0_cells_.size(), plant_.state_dim);
    for (size_t i = 0; i < s0_cells_.size(); ++i) X.row(i) = grid_points_.row(s0_cells_[i]);
    const Mat U = candidate.forward_batch(X);
    Mat q(X.rows(), X.cols() + U.cols());
    q << X, U;
    Mat means;
    model_->predict_batch(q, &means, nullptr);
    for (long i = 0; i < X.rows(); ++i) {
      const double vx = lyapunov_->grid_values()(s0_cells_[i]);
      if (vx <= 0.0) continue;
      if (lyapunov_->value_capped(means.row(i).transpose()) >= vx) return false;
    }
    return true;
  }

  /// Discrete rows worth refreshing: cells within the banded level set,
  /// actions inside the exploration window around the current policy.
  std::vector<long> discrete_refresh_rows(double c_n) const {
    const double band = std::max(c_n * config_.confidence_band, c_init_ * config_.confidence_band);
    std::vector<long> rows;
    const Mat policy_actions = table_->policy_actions();
    for (long cell = 0; cell < grid_.num_points(); ++cell) {
      if (lyapunov_->grid_values()(cell) > band) continue;
      const auto window =
          restrict_actions(actions_, policy_actions.row(cell).transpose(), config_.action_window);
      for (int a : window.indices) rows.push_back(cell * actions_.count() + a);
    }
    return rows;
  }

  PairSet window_candidates(const PairSet& S_n) const {
    std::vector<PairKey> keep;
    for (const PairKey& key : S_n.items()) {
      const Vec pi_x = table_->policy_action(key.cell);
      const Vec action = key.action == kInitialAction ? table_->initial_action(key.cell)
                                                      : actions_.action(key.action);
      if (((action - pi_x).cwiseAbs().array() <= config_.action_window).all()) keep.push_back(key);
    }
    return PairSet(std::move(keep));
  }

  struct OracleState {
    int version = -1;
    std::vector<char> tested, member;

    bool contains_all(Experiment& exp, const std::vector<long>& cells, bool policy_changed) {
      if (version < 0 || policy_changed) {
        ++version;
        tested.assign(exp.grid_.num_points(), 0);
        member.assign(exp.grid_.num_points(), 0);
      }
      std::vector<long> fresh;
      for (long cell : cells)
        if (!tested[cell]) fresh.push_back(cell);
      if (!fresh.empty()) {
        const int horizon = static_cast<int>(
            exp.config_.oracle_horizon_seconds /
            (control_period(exp.config_)));
        const auto part = true_roa_oracle(exp.plant_, exp.policy_, exp.grid_, horizon,
                                          exp.config_.oracle_ball_radius, &fresh);
        for (long cell : fresh) {
          tested[cell] = 1;
          member[cell] = part[cell];
        }
      }
      for (long cell : cells)
        if (!member[cell]) return false;
      return true;
    }
  };

  static double control_period(const ExperimentConfig& cfg) {
    return cfg.environment == "pendulum" ? cfg.pend_dt * cfg.pend_control_substeps
                                         : cfg.toy_dt * cfg.toy_control_substeps;
  }

  void append_set_rows(CsvWriter& csv, int iteration, const PairSet& S_n, const PairSet& S_prev,
                       const PairSet& /*unused*/) {
    // Monotone sets allow delta encoding: only newly certified pairs.
    for (const PairKey& key : S_n.items()) {
      if (S_prev.contains(key)) continue;
      const Interval& iv = table_->row(key);
      const Vec action =
          key.action == kInitialAction ? table_->initial_action(key.cell) : actions_.action(key.action);
      csv.row({std::to_string(iteration), std::to_string(key.cell), std::to_string(key.action),
               csv_num(action(0)), csv_num(iv.hi), csv_num(iv.lo), "S"});
    }
  }

  void write_final_artifacts(RunLog& log, const LevelResult& level) {
    // Rollout comparison from the shared start state.
    const Vec x_start = comparison_start_state();
    const int steps = static_cast<int>(config_.oracle_horizon_seconds / control_period(config_));
    const RolloutResult before = rollout(plant_, initial_policy_, x_start, steps, cost_);
    const RolloutResult after = rollout(plant_, policy_, x_start, steps, cost_);
    log.initial_policy_cost = before.discounted_cost;
    log.learned_policy_cost = after.discounted_cost;
    write_rollout(before, "rollout_initial.csv");
    write_rollout(after, "rollout_final.csv");

    save_policy(policy_, path("policy.ckpt"));
    save_policy(initial_policy_, path("policy_initial.ckpt"));
    save_vertex_values(*value_, path("value.csv"));
    {
      PiecewiseLinearValue lv(grid_, lyapunov_->grid_values());
      save_vertex_values(lv, path("lyapunov.csv"));
    }
    {
      CsvWriter csv(path("measurements.csv"));
      std::vector<std::string> header;
      for (int i = 0; i < plant_.state_dim; ++i) header.push_back("x" + std::to_string(i));
      for (int i = 0; i < plant_.action_dim; ++i) header.push_back("u" + std::to_string(i));
      for (int i = 0; i < plant_.state_dim; ++i) header.push_back("y" + std::to_string(i));
      csv.row(header);
      for (long i = 0; i < obs_.inputs.rows(); ++i) {
        std::vector<std::string> row;
        for (long j = 0; j < obs_.inputs.cols(); ++j)
          row.push_back(csv_num_exact(obs_.inputs(i, j)));
        const Vec measured =
            plant_.prior_normalized().apply(obs_.inputs.row(i).transpose()) +
            obs_.residuals.row(i).transpose();
        for (long j = 0; j < measured.size(); ++j) row.push_back(csv_num_exact(measured(j)));
        csv.row(row);
      }
    }
    {
      CsvWriter csv(path("runlog.csv"));
      csv.row({"n", "beta", "c_n", "certified_cells", "safe_set_size", "dec_set_size",
               "sampled_cell", "sampled_action", "sampled_action_value", "sample_width",
               "cum_violations", "policy_accepted", "oracle_sound", "calibration_warnings",
               "backup_engaged"});
      for (const auto& r : log.rows) {
        csv.row({std::to_string(r.n), csv_num(r.beta), csv_num(r.c_n),
                 std::to_string(r.certified_cells), std::to_string(r.safe_set_size),
                 std::to_string(r.dec_set_size), std::to_string(r.sampled_cell),
                 std::to_string(r.sampled_action), csv_num(r.sampled_action_value),
                 csv_num(r.sample_width), std::to_string(r.cum_violations),
                 r.policy_accepted ? "1" : "0", r.oracle_sound ? "1" : "0",
                 std::to_string(r.calibration_warnings), r.backup_engaged ? "1" : "0"});
      }
    }
    {
      // Wall-clock sidecar, deliberately outside the deterministic artifacts.
      CsvWriter csv(path("timing.csv"));
      csv.row({"n", "wall_ms"});
      for (size_t i = 0; i < log.wall_ms.size(); ++i)
        csv.row({std::to_string(i + 1), csv_num(log.wall_ms[i])});
    }
    {
      std::ofstream out(path("summary.txt"));
      out << "environment " << config_.environment << "\n";
      out << "iterations " << log.rows.size() << "\n";
      out << "c_initial " << csv_num(log.c_initial) << "\n";
      out << "c_final " << csv_num(level.c) << "\n";
      out << "initial_cells " << log.initial_cells << "\n";
      out << "final_cells " << level.cells.size() << "\n";
      out << "violations " << log.total_violations << "\n";
      out << "oracle_sound " << (log.all_oracle_sound ? 1 : 0) << "\n";
      out << "sets_monotone " << (log.sets_monotone ? 1 : 0) << "\n";
      out << "levels_monotone " << (log.levels_monotone ? 1 : 0) << "\n";
      out << "initial_policy_cost " << csv_num(log.initial_policy_cost) << "\n";
      out << "learned_policy_cost " << csv_num(log.learned_policy_cost) << "\n";
    }
  }

  void write_rollout(const RolloutResult& roll, const std::string& name) {
    CsvWriter csv(path(name));
    std::vector<std::string> header = {"t"};
    for (int i = 0; i < plant_.state_dim; ++i) header.push_back("x" + std::to_string(i));
    header.push_back("u");
    header.push_back("r");
    csv.row(header);
    const double T = control_period(config_);
    for (long t = 0; t < roll.actions.rows(); ++t) {
      std::vector<std::string> row = {csv_num(t * T)};
      const Vec xp = plant_.to_physical_state(roll.states.row(t).transpose());
      for (long i = 0; i < xp.size(); ++i) row.push_back(csv_num(xp(i)));
      row.push_back(csv_num(plant_.to_physical_action(roll.actions.row(t).transpose())(0)));
      row.push_back(csv_num(stage_cost(cost_, roll.states.row(t).transpose(),
                                       roll.actions.row(t).transpose())));
      csv.row(row);
    }
  }

  std::string path(const std::string& name) const {
    return (std::filesystem::path(config_.output_dir) / name).string();
  }

  ExperimentConfig config_;
  Plant plant_;
  Discretization grid_;
  ActionGrid actions_;
  Mat grid_points_;
  CostSpec cost_;
  KernelSpec kernel_ = KernelSpec::linear(Vec::Ones(1));
  NeuralPolicy policy_;
  NeuralPolicy initial_policy_ = policy_;
  std::optional<PiecewiseLinearValue> value_;
  std::optional<LyapunovFunction> lyapunov_;
  LipschitzConstants lips_;
  double c_init_ = 0.0;
  std::vector<long> s0_cells_;
  Mat s0_actions_;
  Vec s0_bounds_;
  PairSet s0_pairs_;
  std::optional<ConfidenceTable> table_;
  ObservationSet obs_;
  std::optional<PosteriorDynamicsModel> model_;
  std::vector<MeasuredTransition> measurements_;
  std::mt19937_64 rng_;
};

inline RunLog run_experiment(const ExperimentConfig& config) {
  Experiment experiment(config);
  return experiment.run();
}

// ---------------------------------------------------------------------------
// Standalone certification of a stored policy
// ---------------------------------------------------------------------------

struct VerifyResult {
  double c = 0.0;
  long certified_cells = 0;
  bool oracle_contained = true;
  std::string certificate_path;
};

inline VerifyResult verify_only(const ExperimentConfig& config,
                                const std::string& checkpoint_path,
                                const std::string& measurements_path = "") {
  Experiment experiment(config);
  experiment.set_policy(load_policy(checkpoint_path));
  if (!measurements_path.empty()) {
    const CsvTable table = read_csv(measurements_path);
    const int dx = experiment.plant().state_dim;
    const int du = experiment.plant().action_dim;
    Mat inputs(table.rows.size(), dx + du), residuals(table.rows.size(), dx);
    for (size_t i = 0; i < table.rows.size(); ++i) {
      for (int j = 0; j < dx + du; ++j) inputs(i, j) = std::stod(table.rows[i][j]);
      Vec measured(dx);
      for (int j = 0; j < dx; ++j) measured(j) = std::stod(table.rows[i][dx + du + j]);
      residuals.row(i) =
          (measured - experiment.plant().prior_normalized().apply(inputs.row(i).transpose()))
              .transpose();
    }
    experiment.load_measurements(inputs, residuals);
  }
  const LevelResult level = experiment.certify();
  std::filesystem::create_directories(config.output_dir);
  experiment.write_certificate(level, 0);

  VerifyResult out;
  out.c = level.c;
  out.certified_cells = static_cast<long>(level.cells.size());
  out.certificate_path =
      (std::filesystem::path(config.output_dir) / "certificate_0000.csv").string();
  if (config.soundness_check && !level.cells.empty()) {
    const int horizon = static_cast<int>(config.oracle_horizon_seconds /
                                         (config.environment == "pendulum"
                                              ? config.pend_dt * config.pend_control_substeps
                                              : config.toy_dt * config.toy_control_substeps));
    const auto member = true_roa_oracle(experiment.plant(), experiment.policy(),
                                        experiment.grid(), horizon, config.oracle_ball_radius,
                                        &level.cells);
    for (long cell : level.cells)
      if (!member[cell]) {
        out.oracle_contained = false;
        break;
      }
  }
  return out;
}

}  // namespace lyasafe
