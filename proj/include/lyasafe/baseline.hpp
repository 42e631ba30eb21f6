#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/confidence.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/safe_sets.hpp"

namespace lyasafe {

/// Finite instance with exact one-step knowledge: the oracle baseline knows
/// v(f(x, u)) for every pair up to accuracy eps and all Lipschitz constants.
struct ToyInstance {
  Discretization grid;
  ActionGrid actions;
  Vec v;        // Lyapunov values per grid state
  Mat vf;       // exact v(f(x, u)), cells x actions
  double l_dv = 1.0;
  double L_v = 1.0;
  double L_f = 1.0;
  double eps = 0.0;
  PairSet s0;

  double tau() const { return grid.tau(); }

  Vec pair_coords(const PairKey& key) const {
    require(key.action >= 0, "toy instances use discrete actions only");
    Vec a(grid.dims() + actions.dims());
    a << grid.point(key.cell), actions.action(key.action);
    return a;
  }

  double vf_at(const PairKey& key) const { return vf(key.cell, key.action); }

  void validate() const {
    require(!s0.empty(), "toy instance: initial safe set must be nonempty");
    require(v.size() == grid.num_points(), "toy instance: v size mismatch");
    require(vf.rows() == grid.num_points() && vf.cols() == actions.count(),
            "toy instance: vf table size mismatch");
    // S_0 states must form a sublevel set of v.
    double c0 = 0.0;
    std::vector<char> in_s0(grid.num_points(), 0);
    for (const PairKey& key : s0.items()) {
      c0 = std::max(c0, v(key.cell));
      in_s0[key.cell] = 1;
    }
    for (long i = 0; i < grid.num_points(); ++i)
      require(in_s0[i] || v(i) > c0, "toy instance: S_0 states must form a level set of v");
  }
};

/// Knowledge generalization: pairs whose decrease follows from some known
/// pair via the Lipschitz constant, with the eps knowledge gap charged.
/// Always contains S_0.
inline PairSet r_dec(const PairSet& S, const ToyInstance& inst) {
  std::vector<PairKey> out = inst.s0.items();
  for (long cell = 0; cell < inst.grid.num_points(); ++cell) {
    for (int a = 0; a < inst.actions.count(); ++a) {
      const PairKey cand{cell, a};
      const Vec cand_coords = inst.pair_coords(cand);
      for (const PairKey& seed : S.items()) {
        const double dist = (cand_coords - inst.pair_coords(seed)).lpNorm<1>();
        const double lhs = inst.vf_at(seed) - inst.v(seed.cell) + inst.eps + inst.l_dv * dist;
        if (lhs < -inst.l_dv * inst.tau() - kDecreaseStrictness) {
          out.push_back(cand);
          break;
        }
      }
    }
  }
  return PairSet(std::move(out));
}

struct LevelSet {
  double c = 0.0;
  std::vector<long> cells;  // grid states with v <= c (empty when c == 0)
};

/// Largest level of v whose states can all be covered by some action in D.
/// On a finite instance the policy existence per state reduces to having any
/// admissible action; states with v == 0 need none.
inline LevelSet r_level(const PairSet& D, const ToyInstance& inst) {
  const long n = inst.grid.num_points();
  std::vector<char> has_action(n, 0);
  for (const PairKey& key : D.items()) has_action[key.cell] = 1;

  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](long a, long b) { return inst.v(a) != inst.v(b) ? inst.v(a) < inst.v(b) : a < b; });
  LevelSet out;
  long accepted = 0;
  long i = 0;
  while (i < n) {
    const double level = inst.v(order[i]);
    long j = i;
    bool all_ok = true;
    while (j < n && inst.v(order[j]) == level) {
      if (level > 0.0 && !has_action[order[j]]) all_ok = false;
      ++j;
    }
    if (!all_ok) break;
    if (level > 0.0) out.c = level;
    accepted = j;
    i = j;
  }
  if (out.c <= 0.0) return LevelSet{};
  out.cells.assign(order.begin(), order.begin() + accepted);
  std::sort(out.cells.begin(), out.cells.end());
  return out;
}

/// One expansion of the safely-visitable set: pairs inside the enlarged level
/// set whose successor provably maps back into it.
inline PairSet r_eps(const PairSet& S, const ToyInstance& inst) {
  const LevelSet level = r_level(r_dec(S, inst), inst);
  std::vector<PairKey> out = S.items();
  if (level.c > 0.0) {
    for (long cell : level.cells) {
      for (int a = 0; a < inst.actions.count(); ++a) {
        const PairKey cand{cell, a};
        const Vec cand_coords = inst.pair_coords(cand);
        for (const PairKey& seed : S.items()) {
          const double dist = (cand_coords - inst.pair_coords(seed)).lpNorm<1>();
          if (inst.vf_at(seed) + inst.eps + inst.L_v * inst.L_f * dist <= level.c) {
            out.push_back(cand);
            break;
          }
        }
      }
    }
  }
  return PairSet(std::move(out));
}

/// Least fixpoint of r_eps from S_0: the largest pair set any eps-accurate
/// safe algorithm could hope to classify. Terminates on finite instances.
inline PairSet rbar(const ToyInstance& inst, double eps) {
  ToyInstance scratch = inst;
  scratch.eps = eps;
  PairSet current = inst.s0;
  const long max_iters = inst.grid.num_points() * inst.actions.count() + 1;
  for (long i = 0; i < max_iters; ++i) {
    PairSet next = r_eps(current, scratch);
    if (next.size() == current.size()) return next;
    current = std::move(next);
  }
  return current;
}

/// Smallest n with n / (beta_n^2 gamma_n) >= C q (rbar_size + 1) / (L_v^2 eps^2),
/// C = 8 / log(1 + sigma^-2), scanned forward; empty when the cap is hit.
inline std::optional<long> n_star(double rkhs_bound, double sigma, double delta, double L_v,
                                  double eps, int q, long rbar_size,
                                  const std::function<double(long)>& gamma_schedule,
                                  long scan_cap = 1000000) {
  require(sigma > 0.0 && eps > 0.0 && L_v > 0.0, "n_star: sigma, eps, L_v must be positive");
  const double C = 8.0 / std::log1p(1.0 / (sigma * sigma));
  const double rhs = C * q * (static_cast<double>(rbar_size) + 1.0) / (L_v * L_v * eps * eps);
  const ConfidenceScale scale = ConfidenceScale::theoretical(rkhs_bound, delta);
  double prev_gamma = 0.0;
  for (long n = 1; n <= scan_cap; ++n) {
    const double gamma_n = gamma_schedule(n);
    require(gamma_n >= prev_gamma, "n_star: gamma schedule must be nondecreasing");
    prev_gamma = gamma_n;
    const double beta_n = beta_value(scale, gamma_n, sigma);
    if (static_cast<double>(n) >= rhs * beta_n * beta_n * gamma_n) return n;
  }
  return std::nullopt;
}

struct SandwichReport {
  bool upper_ok = true;        // S_n inside the eps = 0 closure at every n
  bool lower_ok = true;        // eps-closure inside the final S_n
  bool converged = false;      // trace reached a fixpoint
  std::optional<PairKey> violating_pair;
  std::string summary;
};

/// Checks the exploration sandwich on a recorded trace of safe sets:
/// rbar_eps(S_0) subset of S_final and S_n subset of rbar_0(S_0) for all n.
inline SandwichReport sandwich_check(const std::vector<PairSet>& trace, const ToyInstance& inst) {
  SandwichReport report;
  require(!trace.empty(), "sandwich_check: empty trace");
  const PairSet upper = rbar(inst, 0.0);
  const PairSet lower = rbar(inst, inst.eps);
  for (const PairSet& S : trace) {
    if (!S.is_subset_of(upper)) {
      report.upper_ok = false;
      for (const PairKey& key : S.items())
        if (!upper.contains(key)) {
          report.violating_pair = key;
          break;
        }
      break;
    }
  }
  report.converged =
      trace.size() >= 2 && trace.back().size() == trace[trace.size() - 2].size();
  const PairSet& final_set = trace.back();
  if (report.converged && !lower.is_subset_of(final_set)) {
    report.lower_ok = false;
    for (const PairKey& key : lower.items())
      if (!final_set.contains(key)) {
        report.violating_pair = key;
        break;
      }
  }
  std::ostringstream os;
  os << "upper=" << (report.upper_ok ? "ok" : "violated")
     << " lower=" << (report.lower_ok ? "ok" : "violated")
     << " converged=" << (report.converged ? "yes" : "no") << " |rbar_0|=" << upper.size()
     << " |rbar_eps|=" << lower.size() << " |final|=" << final_set.size();
  report.summary = os.str();
  return report;
}

/// Drives the Lipschitz-variant exploration loop on a toy instance with
/// synthetic intervals of exact half-width eps centered on the truth. The
/// initial rows carry their construction bound so S_0 certifies by fiat.
inline std::vector<PairSet> run_toy_exploration(const ToyInstance& inst, int max_iters) {
  auto u_n = [&](const PairKey& key) {
    double u = inst.vf_at(key) + inst.eps;
    if (inst.s0.contains(key)) {
      u = std::min(u, inst.v(key.cell) - inst.l_dv * inst.tau() - kInitialRowMargin);
    }
    return u;
  };
  auto coords = [&](const PairKey& key) { return inst.pair_coords(key); };

  std::vector<PairSet> trace;
  PairSet S = inst.s0;
  trace.push_back(S);
  for (int n = 0; n < max_iters; ++n) {
    const PairSet D = dec_set_lipschitz(S, u_n, coords, inst.v, inst.l_dv, inst.tau(), inst.grid,
                                        inst.actions, inst.s0);
    const LevelSet level = r_level(D, inst);
    PairSet S_next = level.c > 0.0
                         ? safe_set_lipschitz(S, u_n, coords, level.c, inst.L_v, inst.L_f,
                                              level.cells, inst.actions)
                         : S;
    S_next = S_next.unite(inst.s0);
    S_next.set_generation(n + 1);
    trace.push_back(S_next);
    if (S_next.size() == S.size()) break;
    S = std::move(S_next);
  }
  return trace;
}

}  // namespace lyasafe
