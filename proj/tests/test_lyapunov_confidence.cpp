#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lyasafe/confidence.hpp"
#include "lyasafe/gp.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/lyapunov.hpp"

using namespace lyasafe;

namespace {

Discretization unit_grid(int points_per_axis, int dims = 2) {
  return build_grid(Vec::Constant(dims, -1.0), Vec::Constant(dims, 1.0),
                    VecI::Constant(dims, points_per_axis));
}

LyapunovFunction quad_lyapunov(const Discretization& grid, double p0 = 1.0, double p1 = 1.0) {
  Mat P = Mat::Zero(grid.dims(), grid.dims());
  for (int i = 0; i < grid.dims(); ++i) P(i, i) = i == 0 ? p0 : p1;
  return LyapunovFunction::quadratic(P, grid);
}

/// A model stub with direct control over predicted means and deviations.
struct StubModel {
  Vec mean;         // constant predicted next state
  double sigma = 0.0;
  int q = 2;

  void predict_batch(const Mat& queries, Mat* means, Mat* sigmas) const {
    if (means) *means = mean.transpose().replicate(queries.rows(), 1);
    if (sigmas) *sigmas = Mat::Constant(queries.rows(), q, sigma);
  }
};

LipschitzConstants plain_constants(const LyapunovFunction& v) {
  LipschitzConstants lips;
  lips.L_h = 1.0;
  lips.L_g = 0.0;
  lips.L_pi = 1.0;
  lips.L_v_global = v.global_lipschitz();
  lips.L_v_local = v.local_lipschitz();
  lips.use_local = false;
  return lips;
}

}  // namespace

TEST_CASE("lyapunov composite constant follows the formula") {
  LipschitzConstants lips;
  lips.L_v_global = 1.0;
  lips.L_h = 1.0;
  lips.L_g = 0.0;
  lips.L_pi = 1.0;
  REQUIRE(l_delta_v(lips, false, 0) == Catch::Approx(3.0));
  lips.L_v_global = 2.0;
  lips.L_h = 0.5;
  lips.L_pi = 0.0;
  REQUIRE(l_delta_v(lips, false, 0) == Catch::Approx(3.0));
}

TEST_CASE("local constants tighten the composite constant") {
  LipschitzConstants lips;
  lips.L_v_global = 2.0;
  lips.L_v_local = Vec::Constant(3, 1.0);
  lips.L_h = 1.0;
  lips.L_g = 0.0;
  lips.L_pi = 1.0;
  REQUIRE(l_delta_v(lips, true, 1) < l_delta_v(lips, false, 1));
}

TEST_CASE("quadratic candidates validate cleanly") {
  const auto grid = unit_grid(11);
  const auto v = quad_lyapunov(grid);
  REQUIRE(lyapunov_validate(v, grid).ok());
}

TEST_CASE("an indefinite quadratic is reported") {
  const auto grid = unit_grid(11);
  Mat P(2, 2);
  P << 1.0, 0.0, 0.0, -0.5;
  const auto v = LyapunovFunction::quadratic(P, grid);
  const auto report = lyapunov_validate(v, grid);
  REQUIRE_FALSE(report.ok());
  REQUIRE(report.items.front().what.find("positive") != std::string::npos);
}

TEST_CASE("contracting mean dynamics validate, expanding ones do not") {
  const auto grid = unit_grid(9);
  const auto v = quad_lyapunov(grid);
  const auto contract = [](const Vec& x) { return Vec(0.5 * x); };
  const auto expand = [](const Vec& x) { return Vec(1.5 * x); };
  REQUIRE(lyapunov_validate(v, grid, contract).ok());
  REQUIRE_FALSE(lyapunov_validate(v, grid, expand).ok());
}

// ---------------------------------------------------------------------------
// Confidence table
// ---------------------------------------------------------------------------

TEST_CASE("zero deviation collapses the interval to a point") {
  const auto grid = unit_grid(5);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 3));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));

  StubModel model{Vec::Constant(2, 0.25), 0.0};
  const auto warnings = table.update(RowFamily::kPolicy, model, v, lips, 2.0);
  REQUIRE(warnings.empty());
  const double expected = v(Vec::Constant(2, 0.25));
  const Interval& row = table.policy_row(0);
  REQUIRE(row.lo == Catch::Approx(expected));
  REQUIRE(row.hi == Catch::Approx(expected));
}

TEST_CASE("a wider fresh interval leaves the row unchanged") {
  const auto grid = unit_grid(5);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 3));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));

  StubModel tight{Vec::Constant(2, 0.1), 0.01};
  table.update(RowFamily::kPolicy, tight, v, lips, 2.0);
  const Interval before = table.policy_row(3);
  StubModel wide{Vec::Constant(2, 0.1), 10.0};
  table.update(RowFamily::kPolicy, wide, v, lips, 2.0);
  const Interval after = table.policy_row(3);
  REQUIRE(after.lo == before.lo);
  REQUIRE(after.hi == before.hi);
}

TEST_CASE("interval updates match a running-intersection replay") {
  const auto grid = unit_grid(5);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 2));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Interval replay;  // independent replay for one row
  const long probe = 7;
  for (int n = 0; n < 10; ++n) {
    StubModel model{Vec::Constant(2, unif(rng) * 0.5), 0.05 + 0.5 * unif(rng)};
    table.update(RowFamily::kPolicy, model, v, lips, 2.0);

    const Vec mu = model.mean;
    const double lv = lips.L_v_at(grid.nearest(mu).index);
    const double half = lv * 2.0 * (2.0 * model.sigma);  // beta * sigma_sum
    const Interval fresh{v(mu) - half, v(mu) + half};
    replay.lo = std::max(replay.lo, fresh.lo);
    replay.hi = std::min(replay.hi, fresh.hi);

    const Interval& row = table.policy_row(probe);
    REQUIRE(row.lo == Catch::Approx(replay.lo).margin(1e-12));
    REQUIRE(row.hi == Catch::Approx(replay.hi).margin(1e-12));
    REQUIRE(row.lo <= row.hi);
  }
}

TEST_CASE("an empty intersection keeps the row and warns") {
  const auto grid = unit_grid(5);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 2));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));

  StubModel near_origin{Vec::Constant(2, 0.05), 1e-4};
  REQUIRE(table.update(RowFamily::kPolicy, near_origin, v, lips, 2.0).empty());
  const Interval before = table.policy_row(0);
  StubModel far{Vec::Constant(2, 0.9), 1e-4};
  const auto warnings = table.update(RowFamily::kPolicy, far, v, lips, 2.0);
  REQUIRE_FALSE(warnings.empty());
  const Interval after = table.policy_row(0);
  REQUIRE(after.lo == before.lo);
  REQUIRE(after.hi == before.hi);
}

TEST_CASE("decrease test is strict at the boundary") {
  REQUIRE(decrease_ok(Interval{-1.0, -0.5}, 0.0, 1.0, 0.3));
  REQUIRE_FALSE(decrease_ok(Interval{-1.0, -0.3}, 0.0, 1.0, 0.3));
  REQUIRE_FALSE(decrease_ok(Interval{-1.0, -0.3 + 1e-15}, 0.0, 1.0, 0.3));
}

TEST_CASE("initial rows certify by construction") {
  const auto grid = unit_grid(7);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 3));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  const double tau = grid.tau();

  std::vector<long> cells = {grid.nearest(Vec::Zero(2)).index};
  Mat acts(1, 1);
  acts << 0.0;
  Vec bounds(1);
  const double l_dv = l_delta_v(lips, false, cells[0]);
  bounds << v.grid_values()(cells[0]) - l_dv * tau - kInitialRowMargin;
  table.init_initial_rows(cells, acts, bounds);
  REQUIRE(decrease_ok(table, v, PairKey{cells[0], kInitialAction}, lips, tau));
}

// ---------------------------------------------------------------------------
// Largest certified level
// ---------------------------------------------------------------------------

namespace {

/// Forces every policy row to a chosen upper bound via a zero-deviation stub.
void force_policy_rows(ConfidenceTable& table, const Vec& uppers) {
  auto rows = table.policy_snapshot();
  for (long i = 0; i < uppers.size(); ++i) rows.intervals[i] = {uppers(i) - 1.0, uppers(i)};
  table.restore_policy_rows(std::move(rows));
}

}  // namespace

TEST_CASE("largest level spans the grid when everything decreases") {
  const auto grid = unit_grid(9);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 2));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));
  // Uniform strong decrease everywhere.
  Vec uppers = v.grid_values().array() - 2.0 * l_delta_v(lips, false, 0) * grid.tau() - 1.0;
  force_policy_rows(table, uppers);
  const auto level = largest_level(v, grid, table, lips, grid.tau());
  REQUIRE_FALSE(level.empty_certificate);
  REQUIRE(level.c == Catch::Approx(v.grid_values().maxCoeff()));
  REQUIRE(level.cells.size() == static_cast<size_t>(grid.num_points()));
}

TEST_CASE("largest level is empty when nothing decreases") {
  const auto grid = unit_grid(9);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 2));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  ConfidenceTable table(grid, actions);
  table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));
  force_policy_rows(table, Vec(v.grid_values().array() + 1.0));
  const auto level = largest_level(v, grid, table, lips, grid.tau());
  REQUIRE(level.empty_certificate);
  REQUIRE(level.c == 0.0);
  REQUIRE(level.cells.empty());
}

TEST_CASE("largest level matches a brute-force level scan") {
  const auto grid = unit_grid(11, 1);
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 2));
  const auto v = quad_lyapunov(grid);
  auto lips = plain_constants(v);
  const double tau = grid.tau();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int rep = 0; rep < 50; ++rep) {
    ConfidenceTable table(grid, actions);
    table.reset_policy_rows(Mat::Zero(grid.num_points(), 1));
    Vec uppers(grid.num_points());
    for (long i = 0; i < grid.num_points(); ++i) {
      // Random mix of passing and failing rows.
      uppers(i) = v.grid_values()(i) - l_delta_v(lips, false, i) * tau +
                  (unif(rng) < 0.5 ? -0.2 : 0.2);
    }
    force_policy_rows(table, uppers);
    const auto level = largest_level(v, grid, table, lips, tau);

    // Brute force over every candidate level value.
    double best = 0.0;
    for (long i = 0; i < grid.num_points(); ++i) {
      const double c = v.grid_values()(i);
      if (c <= 0.0) continue;
      bool all_pass = true;
      for (long j = 0; j < grid.num_points(); ++j) {
        if (v.grid_values()(j) > c || v.grid_values()(j) <= 0.0) continue;
        all_pass = all_pass && decrease_ok(table.policy_row(j), v.grid_values()(j),
                                           l_delta_v(lips, false, j), tau);
      }
      if (all_pass) best = std::max(best, c);
    }
    REQUIRE(level.c == Catch::Approx(best).margin(1e-12));
  }
}
