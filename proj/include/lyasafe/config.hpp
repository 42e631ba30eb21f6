#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lyasafe/common.hpp"

namespace lyasafe {

/// Experiment configuration. Every field has a default; files and CLI
/// overrides may only touch keys in the published schema below.
struct ExperimentConfig {
  std::string environment = "pendulum";  // pendulum | toy_1d
  long seed = 1;
  int iterations = 50;
  std::string output_dir = "out";

  // Pendulum plant (physical units).
  double pend_mass = 0.15;
  double pend_mass_prior = 0.135;
  double pend_length = 0.5;
  double pend_gravity = 9.81;
  double pend_friction = 0.05;
  double pend_torque_max = 0.0;  // 0: half the holding torque at 90 degrees
  double pend_dt = 0.01;
  int pend_control_substeps = 15;
  double pend_angle_max = 0.0;     // rad; 0: 1.25x the saturation angle
  double pend_velocity_max = 0.0;  // rad/s; 0: sqrt(g/l) * angle_max

  // 1-D toy plant: dx/dt = a x + cubic x^3 + u, prior neglects the cubic term
  // and underestimates a.
  double toy_a = 1.0;
  double toy_cubic = 2.0;
  double toy_a_prior = 0.6;
  double toy_u_max = 1.0;
  double toy_x_max = 1.0;
  double toy_dt = 0.05;
  int toy_control_substeps = 10;

  // Verification grid and discrete actions (normalized coordinates).
  std::vector<int> grid_points = {351, 351};
  int action_points = 13;
  double action_window = 0.3;  // exploration half-width around the policy

  // GP kernel over the normalized (x, u) inputs: linear + matern32 sum.
  std::vector<double> kernel_linear_weights = {0.04, 0.04, 0.09};
  std::vector<double> kernel_lengthscales = {0.5, 0.5, 1.0};
  double kernel_signal_variance = 6.25e-4;
  double noise_sigma = 0.002;

  // Confidence scaling.
  std::string beta_mode = "fixed";  // fixed | theoretical
  double beta_fixed = 2.0;
  double beta_rkhs_bound = 2.0;
  double beta_delta = 0.05;
  int capacity_candidates = 128;  // greedy information-capacity subsample

  // Lipschitz constants the verifier assumes.
  double lipschitz_model_error = 0.4;  // L_g
  double lipschitz_policy_max = 1.5;   // policy class constant L_pi
  bool lipschitz_use_local = true;

  // Stage cost (row-major matrices), discount and constraint multiplier.
  std::vector<double> cost_q = {1.0, 0.3, 0.3, 0.35};
  std::vector<double> cost_r = {0.01};
  double cost_gamma = 0.95;
  double cost_lambda = 1.0;

  // Dynamic programming and policy optimization.
  int adp_init_sweeps = 3000;
  double adp_tolerance = 1e-6;
  int adp_iter_sweeps = 10;
  int vi_action_points = 31;  // action resolution of the initial value iteration
  double sgd_learning_rate = 1e-3;
  int sgd_batch = 64;
  int sgd_steps = 120;
  int distill_steps = 4000;
  double distill_learning_rate = 2e-3;
  std::vector<int> policy_hidden = {32, 32};

  // Initial safe level set and monitoring.
  double initial_level = 0.05;        // c_0; 0 means derive from the radius rule
  double initial_safe_radius = 0.20;  // fallback: smallest level enclosing this ball
  double confidence_band = 2.0;       // refresh discrete rows with v <= band * c_n
  int export_every = 10;              // certificate export cadence (0: first and last)
  double oracle_horizon_seconds = 10.0;
  double oracle_ball_radius = 0.07;
  bool soundness_check = true;

  void validate() const {
    require(environment == "pendulum" || environment == "toy_1d",
            "config: environment must be pendulum or toy_1d");
    require(iterations >= 0, "config: iterations must be nonnegative");
    require(beta_mode == "fixed" || beta_mode == "theoretical",
            "config: beta_mode must be fixed or theoretical");
    require(!grid_points.empty(), "config: grid_points must be nonempty");
    require(action_points >= 2, "config: need at least two actions");
    require(action_window > 0.0, "config: action_window must be positive");
    require(noise_sigma > 0.0, "config: noise_sigma must be positive");
  }
};

namespace detail {

struct ConfigField {
  enum class Type { kString, kLong, kInt, kDouble, kBool, kIntList, kDoubleList };
  Type type;
  void* ptr;
};

inline std::map<std::string, ConfigField> config_schema(ExperimentConfig& c) {
  using T = ConfigField::Type;
  return {
      {"environment", {T::kString, &c.environment}},
      {"seed", {T::kLong, &c.seed}},
      {"iterations", {T::kInt, &c.iterations}},
      {"output_dir", {T::kString, &c.output_dir}},
      {"pendulum.mass", {T::kDouble, &c.pend_mass}},
      {"pendulum.mass_prior", {T::kDouble, &c.pend_mass_prior}},
      {"pendulum.length", {T::kDouble, &c.pend_length}},
      {"pendulum.gravity", {T::kDouble, &c.pend_gravity}},
      {"pendulum.friction", {T::kDouble, &c.pend_friction}},
      {"pendulum.torque_max", {T::kDouble, &c.pend_torque_max}},
      {"pendulum.dt", {T::kDouble, &c.pend_dt}},
      {"pendulum.control_substeps", {T::kInt, &c.pend_control_substeps}},
      {"pendulum.angle_max", {T::kDouble, &c.pend_angle_max}},
      {"pendulum.velocity_max", {T::kDouble, &c.pend_velocity_max}},
      {"toy.a", {T::kDouble, &c.toy_a}},
      {"toy.cubic", {T::kDouble, &c.toy_cubic}},
      {"toy.a_prior", {T::kDouble, &c.toy_a_prior}},
      {"toy.u_max", {T::kDouble, &c.toy_u_max}},
      {"toy.x_max", {T::kDouble, &c.toy_x_max}},
      {"toy.dt", {T::kDouble, &c.toy_dt}},
      {"toy.control_substeps", {T::kInt, &c.toy_control_substeps}},
      {"grid.points", {T::kIntList, &c.grid_points}},
      {"actions.points", {T::kInt, &c.action_points}},
      {"actions.window", {T::kDouble, &c.action_window}},
      {"kernel.linear_weights", {T::kDoubleList, &c.kernel_linear_weights}},
      {"kernel.lengthscales", {T::kDoubleList, &c.kernel_lengthscales}},
      {"kernel.signal_variance", {T::kDouble, &c.kernel_signal_variance}},
      {"kernel.noise_sigma", {T::kDouble, &c.noise_sigma}},
      {"beta.mode", {T::kString, &c.beta_mode}},
      {"beta.fixed", {T::kDouble, &c.beta_fixed}},
      {"beta.rkhs_bound", {T::kDouble, &c.beta_rkhs_bound}},
      {"beta.delta", {T::kDouble, &c.beta_delta}},
      {"beta.capacity_candidates", {T::kInt, &c.capacity_candidates}},
      {"lipschitz.model_error", {T::kDouble, &c.lipschitz_model_error}},
      {"lipschitz.policy_max", {T::kDouble, &c.lipschitz_policy_max}},
      {"lipschitz.use_local", {T::kBool, &c.lipschitz_use_local}},
      {"cost.q", {T::kDoubleList, &c.cost_q}},
      {"cost.r", {T::kDoubleList, &c.cost_r}},
      {"cost.gamma", {T::kDouble, &c.cost_gamma}},
      {"cost.lambda", {T::kDouble, &c.cost_lambda}},
      {"adp.init_sweeps", {T::kInt, &c.adp_init_sweeps}},
      {"adp.tolerance", {T::kDouble, &c.adp_tolerance}},
      {"adp.iter_sweeps", {T::kInt, &c.adp_iter_sweeps}},
      {"adp.vi_action_points", {T::kInt, &c.vi_action_points}},
      {"sgd.learning_rate", {T::kDouble, &c.sgd_learning_rate}},
      {"sgd.batch", {T::kInt, &c.sgd_batch}},
      {"sgd.steps", {T::kInt, &c.sgd_steps}},
      {"sgd.distill_steps", {T::kInt, &c.distill_steps}},
      {"sgd.distill_learning_rate", {T::kDouble, &c.distill_learning_rate}},
      {"policy.hidden", {T::kIntList, &c.policy_hidden}},
      {"init.level", {T::kDouble, &c.initial_level}},
      {"init.safe_radius", {T::kDouble, &c.initial_safe_radius}},
      {"run.confidence_band", {T::kDouble, &c.confidence_band}},
      {"run.export_every", {T::kInt, &c.export_every}},
      {"oracle.horizon_seconds", {T::kDouble, &c.oracle_horizon_seconds}},
      {"oracle.ball_radius", {T::kDouble, &c.oracle_ball_radius}},
      {"oracle.soundness_check", {T::kBool, &c.soundness_check}},
  };
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  T value;
  in >> value;
  std::string rest;
  if (in.fail() || (in >> rest && !rest.empty()))
    throw std::invalid_argument("config: bad numeric value for key '" + key + "': " + text);
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<T>(item, key));
  }
  if (out.empty()) throw std::invalid_argument("config: empty list for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("config: bad boolean for key '" + key + "': " + text);
}

}  // namespace detail

/// Applies one `key = value` override; unknown keys are rejected.
inline void apply_config_override(ExperimentConfig& config, const std::string& key,
                                  const std::string& value) {
  auto schema = detail::config_schema(config);
  const auto it = schema.find(key);
  if (it == schema.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  using T = detail::ConfigField::Type;
  const std::string v = detail::trim(value);
  switch (it->second.type) {
    case T::kString: *static_cast<std::string*>(it->second.ptr) = v; break;
    case T::kLong: *static_cast<long*>(it->second.ptr) = detail::parse_number<long>(v, key); break;
    case T::kInt: *static_cast<int*>(it->second.ptr) = detail::parse_number<int>(v, key); break;
    case T::kDouble:
      *static_cast<double*>(it->second.ptr) = detail::parse_number<double>(v, key);
      break;
    case T::kBool: *static_cast<bool*>(it->second.ptr) = detail::parse_bool(v, key); break;
    case T::kIntList:
      *static_cast<std::vector<int>*>(it->second.ptr) = detail::parse_list<int>(v, key);
      break;
    case T::kDoubleList:
      *static_cast<std::vector<double>*>(it->second.ptr) = detail::parse_list<double>(v, key);
      break;
  }
}

/// Loads `key = value` lines over the defaults. '#' starts a comment.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  ExperimentConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
    apply_config_override(config, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  config.validate();
  return config;
}

/// Writes the full schema with current values, loadable as a config file.
inline void write_config(const ExperimentConfig& config, std::ostream& out) {
  ExperimentConfig copy = config;
  auto schema = detail::config_schema(copy);
  using T = detail::ConfigField::Type;
  for (const auto& [key, field] : schema) {
    out << key << " = ";
    switch (field.type) {
      case T::kString: out << *static_cast<std::string*>(field.ptr); break;
      case T::kLong: out << *static_cast<long*>(field.ptr); break;
      case T::kInt: out << *static_cast<int*>(field.ptr); break;
      case T::kDouble: out << *static_cast<double*>(field.ptr); break;
      case T::kBool: out << (*static_cast<bool*>(field.ptr) ? "true" : "false"); break;
      case T::kIntList: {
        const auto& v = *static_cast<std::vector<int>*>(field.ptr);
        for (size_t i = 0; i < v.size(); ++i) out << (i ? ", " : "") << v[i];
        break;
      }
      case T::kDoubleList: {
        const auto& v = *static_cast<std::vector<double>*>(field.ptr);
        for (size_t i = 0; i < v.size(); ++i) out << (i ? ", " : "") << v[i];
        break;
      }
    }
    out << "\n";
  }
}

}  // namespace lyasafe
