#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>

#include "lyasafe/grid.hpp"
#include "lyasafe/lyapunov.hpp"
#include "lyasafe/safe_sets.hpp"

using namespace lyasafe;

namespace {

struct Setup {
  Discretization grid;
  ActionGrid actions;
  LyapunovFunction v;
  LipschitzConstants lips;
};

Setup make_setup(int n_states, int n_actions) {
  Setup s{build_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                     VecI::Constant(1, n_states)),
          build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                            VecI::Constant(1, n_actions)),
          LyapunovFunction::quadratic(Mat::Identity(1, 1),
                                      build_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                                 VecI::Constant(1, n_states))),
          LipschitzConstants{}};
  s.lips.L_h = 1.0;
  s.lips.L_g = 0.0;
  s.lips.L_pi = 1.0;
  s.lips.L_v_global = s.v.global_lipschitz();
  s.lips.L_v_local = s.v.local_lipschitz();
  s.lips.use_local = false;
  return s;
}

}  // namespace

TEST_CASE("direct decrease set matches an exhaustive inequality scan") {
  auto s = make_setup(11, 3);
  const double tau = s.grid.tau();

  ConfidenceTable table(s.grid, s.actions);
  table.reset_policy_rows(Mat::Zero(s.grid.num_points(), 1));

  // Check dec_set against the inequality scan after a stub update.
  struct PairStub {
    Vec mean;
    double sigma;
    void predict_batch(const Mat& q, Mat* means, Mat* sigmas) const {
      if (means) *means = mean.transpose().replicate(q.rows(), 1);
      if (sigmas) *sigmas = Mat::Constant(q.rows(), 1, sigma);
    }
  };
  PairStub stub{Vec::Constant(1, 0.05), 0.03};
  table.update(RowFamily::kDiscrete, stub, s.v, s.lips, 2.0);

  const PairSet dec = dec_set_direct(table, s.v, s.grid, s.lips, tau);
  long count = 0;
  for (long cell = 0; cell < s.grid.num_points(); ++cell) {
    for (int a = 0; a < s.actions.count(); ++a) {
      const bool expected = decrease_ok(table.discrete(cell, a), s.v.grid_values()(cell),
                                        l_delta_v(s.lips, false, cell), tau);
      REQUIRE(dec.contains({cell, a}) == expected);
      count += expected;
    }
  }
  REQUIRE(static_cast<long>(dec.size()) == count);
}

TEST_CASE("safe set keeps pairs whose bound stays inside the level") {
  auto s = make_setup(11, 3);
  ConfidenceTable table(s.grid, s.actions);
  table.reset_policy_rows(Mat::Zero(s.grid.num_points(), 1));
  struct PairStub {
    Vec mean;
    double sigma;
    void predict_batch(const Mat& q, Mat* means, Mat* sigmas) const {
      if (means) *means = mean.transpose().replicate(q.rows(), 1);
      if (sigmas) *sigmas = Mat::Constant(q.rows(), 1, sigma);
    }
  };
  PairStub stub{Vec::Constant(1, 0.2), 0.01};
  table.update(RowFamily::kDiscrete, stub, s.v, s.lips, 2.0);

  const double c_n = 0.5;
  const PairSet s0;
  const PairSet safe = safe_set_direct(c_n, s.grid, s.actions, table, s.v, s0);
  for (long cell = 0; cell < s.grid.num_points(); ++cell) {
    for (int a = 0; a < s.actions.count(); ++a) {
      const bool expected =
          s.v.grid_values()(cell) <= c_n && table.discrete(cell, a).hi <= c_n;
      REQUIRE(safe.contains({cell, a}) == expected);
    }
  }
}

TEST_CASE("safe set collapses to the seed when the level is empty") {
  auto s = make_setup(7, 2);
  ConfidenceTable table(s.grid, s.actions);
  table.reset_policy_rows(Mat::Zero(s.grid.num_points(), 1));
  const PairSet s0({{3, kInitialAction}});
  const PairSet safe = safe_set_direct(0.0, s.grid, s.actions, table, s.v, s0);
  REQUIRE(safe.size() == 1);
  REQUIRE(safe.contains({3, kInitialAction}));
}

// ---------------------------------------------------------------------------
// Lipschitz-propagated sets
// ---------------------------------------------------------------------------

namespace {

struct LipschitzFixture {
  Setup s = make_setup(11, 3);
  std::map<std::pair<long, int>, double> u;

  double upper(const PairKey& key) const { return u.at({key.cell, key.action}); }
  Vec coords(const PairKey& key) const {
    Vec a(2);
    a << s.grid.point(key.cell)(0), s.actions.action(key.action)(0);
    return a;
  }
};

}  // namespace

TEST_CASE("a huge constant blocks generalization beyond the seeds") {
  LipschitzFixture fx;
  for (long c = 0; c < fx.s.grid.num_points(); ++c)
    for (int a = 0; a < fx.s.actions.count(); ++a)
      fx.u[{c, a}] = fx.s.v.grid_values()(c) - 10.0;  // deep margins everywhere
  const PairSet seeds({{5, 1}});
  const double l_dv = 1e9;
  const PairSet out = dec_set_lipschitz(
      seeds, [&](const PairKey& k) { return fx.upper(k); },
      [&](const PairKey& k) { return fx.coords(k); }, fx.s.v.grid_values(), l_dv,
      fx.s.grid.tau(), fx.s.grid, fx.s.actions, PairSet());
  REQUIRE(out.empty());  // radius (margin / l_dv - tau) is negative for all pairs
}

TEST_CASE("a deep margin admits the hand-computed one-norm ball") {
  LipschitzFixture fx;
  const double l_dv = 1.0;
  const double tau = fx.s.grid.tau();  // 0.1
  for (long c = 0; c < fx.s.grid.num_points(); ++c)
    for (int a = 0; a < fx.s.actions.count(); ++a) fx.u[{c, a}] = kInf;
  // One seed with margin m = v - u = 0.55: ball radius m / l_dv - tau = 0.45.
  const PairKey seed{5, 1};
  fx.u[{5, 1}] = fx.s.v.grid_values()(5) - 0.55;
  const PairSet out = dec_set_lipschitz(
      PairSet({seed}), [&](const PairKey& k) { return fx.upper(k); },
      [&](const PairKey& k) { return fx.coords(k); }, fx.s.v.grid_values(), l_dv, tau,
      fx.s.grid, fx.s.actions, PairSet());
  for (long c = 0; c < fx.s.grid.num_points(); ++c) {
    for (int a = 0; a < fx.s.actions.count(); ++a) {
      const double dist = (fx.coords({c, a}) - fx.coords(seed)).lpNorm<1>();
      REQUIRE(out.contains({c, a}) == (dist < 0.45 - 1e-9));
    }
  }
}

TEST_CASE("initial pairs always survive lipschitz propagation") {
  LipschitzFixture fx;
  for (long c = 0; c < fx.s.grid.num_points(); ++c)
    for (int a = 0; a < fx.s.actions.count(); ++a) fx.u[{c, a}] = kInf;
  const PairSet s0({{4, 0}, {5, 0}});
  const PairSet out = dec_set_lipschitz(
      s0, [&](const PairKey& k) { return fx.upper(k); },
      [&](const PairKey& k) { return fx.coords(k); }, fx.s.v.grid_values(), 1.0,
      fx.s.grid.tau(), fx.s.grid, fx.s.actions, s0);
  REQUIRE(s0.is_subset_of(out));
}

TEST_CASE("safe-set propagation admits the slack neighborhood") {
  LipschitzFixture fx;
  const double c_n = 0.8;
  const double L_v = 1.0, L_f = 2.0;
  for (long c = 0; c < fx.s.grid.num_points(); ++c)
    for (int a = 0; a < fx.s.actions.count(); ++a) fx.u[{c, a}] = kInf;
  const PairKey tight{5, 1};  // u == c_n: only itself
  const PairKey loose{4, 1};  // slack 0.4: ball of radius 0.2
  fx.u[{5, 1}] = c_n;
  fx.u[{4, 1}] = c_n - 0.4;
  std::vector<long> level_cells;
  for (long c = 0; c < fx.s.grid.num_points(); ++c)
    if (fx.s.v.grid_values()(c) <= c_n) level_cells.push_back(c);

  const PairSet only_tight = safe_set_lipschitz(
      PairSet({tight}), [&](const PairKey& k) { return fx.upper(k); },
      [&](const PairKey& k) { return fx.coords(k); }, c_n, L_v, L_f, level_cells, fx.s.actions);
  REQUIRE(only_tight.size() == 1);
  REQUIRE(only_tight.contains(tight));

  const PairSet around_loose = safe_set_lipschitz(
      PairSet({loose}), [&](const PairKey& k) { return fx.upper(k); },
      [&](const PairKey& k) { return fx.coords(k); }, c_n, L_v, L_f, level_cells, fx.s.actions);
  for (long c : level_cells) {
    for (int a = 0; a < fx.s.actions.count(); ++a) {
      const double dist = (fx.coords({c, a}) - fx.coords(loose)).lpNorm<1>();
      REQUIRE(around_loose.contains({c, a}) == (L_v * L_f * dist <= 0.4));
    }
  }
}

TEST_CASE("propagated sets equal direct sets at zero distance") {
  // Restricted to the seeds themselves, the lipschitz form reduces to the
  // plain inequality.
  LipschitzFixture fx;
  const double tau = fx.s.grid.tau();
  const double l_dv = 2.0;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-0.6, 0.6);
  std::vector<PairKey> seeds;
  for (long c = 0; c < fx.s.grid.num_points(); ++c)
    for (int a = 0; a < fx.s.actions.count(); ++a) {
      fx.u[{c, a}] = fx.s.v.grid_values()(c) + unif(rng);
      seeds.push_back({c, a});
    }
  const PairSet all(std::move(seeds));
  const PairSet propagated = dec_set_lipschitz(
      all, [&](const PairKey& k) { return fx.upper(k); },
      [&](const PairKey& k) { return fx.coords(k); }, fx.s.v.grid_values(), l_dv, tau,
      fx.s.grid, fx.s.actions, PairSet());
  for (const PairKey& key : all.items()) {
    const bool direct =
        fx.upper(key) - fx.s.v.grid_values()(key.cell) < -l_dv * tau - kDecreaseStrictness;
    if (direct) REQUIRE(propagated.contains(key));
  }
}

// ---------------------------------------------------------------------------
// Sampling and action windows
// ---------------------------------------------------------------------------

TEST_CASE("sampling picks the widest interval") {
  const PairSet set({{0, 0}, {0, 1}});
  std::map<std::pair<long, int>, double> widths = {{{0, 0}, 0.5}, {{0, 1}, 0.7}};
  const auto choice =
      select_sample(set, [&](const PairKey& k) { return widths.at({k.cell, k.action}); });
  REQUIRE(choice);
  REQUIRE(choice->pair.action == 1);
  REQUIRE(choice->width == 0.7);
}

TEST_CASE("ties go to the lexicographically smallest pair") {
  const PairSet set({{2, 1}, {1, 0}, {1, 1}});
  const auto choice = select_sample(set, [](const PairKey&) { return 1.0; });
  REQUIRE(choice);
  REQUIRE(choice->pair.cell == 1);
  REQUIRE(choice->pair.action == 0);
}

TEST_CASE("sampling matches an exhaustive scan") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<PairKey> keys;
  std::map<std::pair<long, int>, double> widths;
  for (long c = 0; c < 30; ++c)
    for (int a = 0; a < 4; ++a) {
      keys.push_back({c, a});
      widths[{c, a}] = unif(rng);
    }
  const PairSet set(std::move(keys));
  const auto choice =
      select_sample(set, [&](const PairKey& k) { return widths.at({k.cell, k.action}); });
  double best = -1.0;
  PairKey best_key{};
  for (const PairKey& k : set.items()) {
    if (widths.at({k.cell, k.action}) > best) {
      best = widths.at({k.cell, k.action});
      best_key = k;
    }
  }
  REQUIRE(choice->pair == best_key);
  REQUIRE(choice->width == Catch::Approx(best));
}

TEST_CASE("empty candidate sets yield no sample") {
  REQUIRE_FALSE(select_sample(PairSet(), [](const PairKey&) { return 1.0; }).has_value());
}

TEST_CASE("action windows around the policy") {
  const auto actions = build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                                         VecI::Constant(1, 5));  // -1,-0.5,0,0.5,1
  SECTION("a wide window admits everything") {
    const auto window = restrict_actions(actions, Vec::Zero(1), 2.5);
    REQUIRE(window.indices.size() == 5);
    REQUIRE_FALSE(window.fallback_used);
  }
  SECTION("an edge policy keeps a one-sided window") {
    const auto window = restrict_actions(actions, Vec::Constant(1, 1.0), 0.6);
    REQUIRE(window.indices == std::vector<int>{3, 4});
  }
  SECTION("the documented tight window") {
    const auto window = restrict_actions(actions, Vec::Zero(1), 0.1);
    REQUIRE(window.indices == std::vector<int>{2});
  }
  SECTION("an empty window falls back to the nearest action") {
    // 0.26 is 0.26 away from 0 and 0.24 away from 0.5, both beyond 0.2.
    const auto window = restrict_actions(actions, Vec::Constant(1, 0.26), 0.2);
    REQUIRE(window.fallback_used);
    REQUIRE(window.indices == std::vector<int>{3});
  }
}

TEST_CASE("empty window flags its fallback") {
  Mat acts(2, 1);
  acts << -1.0, 1.0;
  const ActionGrid actions{acts, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
  const auto window = restrict_actions(actions, Vec::Constant(1, 0.1), 0.3);
  REQUIRE(window.fallback_used);
  REQUIRE(window.indices == std::vector<int>{1});  // 1.0 is nearer to 0.1 than -1.0
}
