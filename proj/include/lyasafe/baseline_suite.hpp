#pragma once

#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lyasafe/baseline.hpp"
#include "lyasafe/common.hpp"

namespace lyasafe {

/// Hand-designed 5-state, 3-action chain used by the exploration sandwich
/// tests. Action 2 pulls one "notch" of 0.4 toward the goal, action 1 holds,
/// action 0 pushes away; the coarse action spacing makes the eps = 0 closure
/// strictly larger than the eps = 0.05 one.
inline ToyInstance make_sandwich_fixture() {
  ToyInstance inst{
      build_grid(Vec::Zero(1), Vec::Ones(1), VecI::Constant(1, 5)),
      build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), VecI::Constant(1, 3)),
      Vec(5), Mat(5, 3), 0.2, 1.0, 1.0, 0.05, PairSet()};
  inst.v << 0.0, 0.25, 0.5, 0.75, 1.0;
  for (long i = 0; i < 5; ++i) {
    inst.vf(i, 0) = inst.v(i) + 0.3;             // pushes away from the goal
    inst.vf(i, 1) = inst.v(i);                   // holds
    inst.vf(i, 2) = std::max(0.0, inst.v(i) - 0.4);  // pulls toward the goal
  }
  inst.s0 = PairSet({{0, 2}, {1, 2}});
  inst.validate();
  return inst;
}

/// Random small instance for the set-operator property checks. The initial
/// pairs sit on the lowest level of v with genuinely decreasing transitions,
/// so the instance is honest about its safety assumption.
inline ToyInstance make_random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_states_d(4, 8), n_actions_d(2, 4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n_states = n_states_d(rng);
  const int n_actions = n_actions_d(rng);
  ToyInstance inst{
      build_grid(Vec::Zero(1), Vec::Ones(1), VecI::Constant(1, n_states)),
      build_action_grid(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                        VecI::Constant(1, n_actions)),
      Vec(n_states), Mat(n_states, n_actions), 0.1 + 0.4 * unif(rng), 1.0, 1.0,
      0.02 + 0.2 * unif(rng), PairSet()};
  inst.v(0) = 0.0;
  for (int i = 1; i < n_states; ++i) inst.v(i) = inst.v(i - 1) + 0.05 + unif(rng) * 0.4;
  for (int i = 0; i < n_states; ++i)
    for (int a = 0; a < n_actions; ++a)
      inst.vf(i, a) = unif(rng) * inst.v(n_states - 1) * 1.2;
  // Initial pairs: the lowest two levels, with a forced strong decrease so
  // the level-set assumption and the safety assumption both hold.
  std::vector<PairKey> s0;
  for (long i = 0; i < 2; ++i) {
    const int a = static_cast<int>(unif(rng) * n_actions) % n_actions;
    inst.vf(i, a) = std::max(0.0, inst.v(i) - 0.5 - unif(rng));
    s0.push_back({i, a});
  }
  inst.s0 = PairSet(std::move(s0));
  inst.validate();
  return inst;
}

struct BaselineSuiteReport {
  std::vector<std::pair<std::string, bool>> checks;
  bool all_pass = true;

  void add(const std::string& name, bool ok) {
    checks.push_back({name, ok});
    all_pass = all_pass && ok;
  }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& [name, ok] : checks) os << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
    os << (all_pass ? "all baseline checks passed" : "baseline checks FAILED") << "\n";
    return os.str();
  }
};

namespace detail {

inline PairSet random_subset(const PairSet& S, std::mt19937_64& rng) {
  std::vector<PairKey> keep;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const PairKey& key : S.items())
    if (unif(rng) < 0.6) keep.push_back(key);
  if (keep.empty() && !S.empty()) keep.push_back(S.items().front());
  return PairSet(std::move(keep));
}

inline PairSet all_pairs(const ToyInstance& inst) {
  std::vector<PairKey> keys;
  for (long c = 0; c < inst.grid.num_points(); ++c)
    for (int a = 0; a < inst.actions.count(); ++a) keys.push_back({c, a});
  return PairSet(std::move(keys));
}

}  // namespace detail

/// Randomized property checks of the oracle set operators plus the sandwich
/// fixture, as one pass/fail report.
inline BaselineSuiteReport run_baseline_suite(uint64_t seed, int instances) {
  BaselineSuiteReport report;
  std::mt19937_64 rng(seed);

  bool mono_dec = true, mono_eps = true, mono_level = true, mono_rbar = true;
  bool rbar_terminates = true, growth = true, d1_s0 = true;
  for (int k = 0; k < instances; ++k) {
    const ToyInstance inst = make_random_instance(rng);
    const PairSet universe = detail::all_pairs(inst);
    const PairSet small = detail::random_subset(universe, rng).unite(inst.s0);
    const PairSet large = small.unite(detail::random_subset(universe, rng));

    mono_dec = mono_dec && r_dec(small, inst).is_subset_of(r_dec(large, inst));
    mono_eps = mono_eps && r_eps(small, inst).is_subset_of(r_eps(large, inst));
    {
      const LevelSet ls = r_level(r_dec(small, inst), inst);
      const LevelSet ll = r_level(r_dec(large, inst), inst);
      mono_level = mono_level && ls.c <= ll.c + kDecreaseStrictness;
    }
    {
      ToyInstance tight = inst;
      tight.eps = inst.eps;
      mono_rbar = mono_rbar && rbar(inst, inst.eps).is_subset_of(rbar(inst, 0.0));
    }
    const PairSet closure = rbar(inst, inst.eps);
    rbar_terminates =
        rbar_terminates &&
        static_cast<long>(closure.size()) <= inst.grid.num_points() * inst.actions.count();

    const auto trace = run_toy_exploration(inst, 64);
    d1_s0 = d1_s0 && inst.s0.is_subset_of(
                         dec_set_lipschitz(inst.s0,
                                           [&](const PairKey& key) {
                                             double u = inst.vf_at(key) + inst.eps;
                                             if (inst.s0.contains(key))
                                               u = std::min(u, inst.v(key.cell) -
                                                                   inst.l_dv * inst.tau() -
                                                                   kInitialRowMargin);
                                             return u;
                                           },
                                           [&](const PairKey& key) { return inst.pair_coords(key); },
                                           inst.v, inst.l_dv, inst.tau(), inst.grid, inst.actions,
                                           inst.s0));
    for (size_t i = 1; i < trace.size(); ++i)
      growth = growth && trace[i - 1].is_subset_of(trace[i]);
  }
  report.add("r_dec monotone in its argument", mono_dec);
  report.add("r_eps monotone in its argument", mono_eps);
  report.add("r_level monotone in its argument", mono_level);
  report.add("rbar shrinks as eps grows", mono_rbar);
  report.add("rbar terminates within the pair budget", rbar_terminates);
  report.add("decrease set contains the initial pairs", d1_s0);
  report.add("safe sets grow monotonically along traces", growth);

  // Exploration sandwich on the shipped fixture.
  const ToyInstance fixture = make_sandwich_fixture();
  const auto trace = run_toy_exploration(fixture, 64);
  const SandwichReport sandwich = sandwich_check(trace, fixture);
  report.add("sandwich: every S_n inside the eps=0 closure", sandwich.upper_ok);
  report.add("sandwich: eps-closure inside the final S_n", sandwich.lower_ok && sandwich.converged);

  // Negative control: a pair injected outside the closure must be caught.
  {
    auto corrupted = trace;
    PairSet bad = corrupted.back().unite(PairSet({{fixture.grid.num_points() - 1, 0}}));
    corrupted.push_back(bad);
    const SandwichReport r = sandwich_check(corrupted, fixture);
    report.add("sandwich: corrupted trace is rejected", !r.upper_ok);
  }
  return report;
}

}  // namespace lyasafe
