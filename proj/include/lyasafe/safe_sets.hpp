#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/confidence.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/lyapunov.hpp"

namespace lyasafe {

/// Immutable snapshot of an indexed state-action pair set (S_n or D_n).
class PairSet {
 public:
  PairSet() = default;
  explicit PairSet(std::vector<PairKey> items, int generation = 0)
      : items_(std::move(items)), generation_(generation) {
    std::sort(items_.begin(), items_.end());
    items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
  }

  const std::vector<PairKey>& items() const { return items_; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  int generation() const { return generation_; }
  void set_generation(int g) { generation_ = g; }

  bool contains(const PairKey& key) const {
    return std::binary_search(items_.begin(), items_.end(), key);
  }

  bool is_subset_of(const PairSet& other) const {
    return std::includes(other.items_.begin(), other.items_.end(), items_.begin(), items_.end());
  }

  PairSet unite(const PairSet& other) const {
    std::vector<PairKey> merged;
    merged.reserve(items_.size() + other.items_.size());
    std::set_union(items_.begin(), items_.end(), other.items_.begin(), other.items_.end(),
                   std::back_inserter(merged));
    return PairSet(std::move(merged), std::max(generation_, other.generation_));
  }

 private:
  std::vector<PairKey> items_;
  int generation_ = 0;
};

/// Pairs whose current confidence row certifies the one-step decrease.
/// Covers the discrete product rows plus the initial safe rows (which pass by
/// construction of their starting interval).
inline PairSet dec_set_direct(const ConfidenceTable& table, const LyapunovFunction& v,
                              const Discretization& grid, const LipschitzConstants& lips,
                              double tau) {
  std::vector<PairKey> out;
  const long n_cells = grid.num_points();
  for (long cell = 0; cell < n_cells; ++cell) {
    const double vx = v.grid_values()(cell);
    const double l_dv = l_delta_v(lips, lips.use_local, cell);
    for (int a = 0; a < table.num_actions(); ++a) {
      if (decrease_ok(table.discrete(cell, a), vx, l_dv, tau)) out.push_back({cell, a});
    }
    if (table.is_initial_cell(cell) &&
        decrease_ok(table.initial_row(cell), vx, l_dv, tau)) {
      out.push_back({cell, kInitialAction});
    }
  }
  return PairSet(std::move(out));
}

/// S_n in the direct form: pairs inside the certified level set whose upper
/// confidence bound keeps the successor inside it, always joined with S_0.
inline PairSet safe_set_direct(double c_n, const Discretization& grid, const ActionGrid& actions,
                               const ConfidenceTable& table, const LyapunovFunction& v,
                               const PairSet& s0) {
  std::vector<PairKey> out;
  if (c_n > 0.0) {
    for (long cell = 0; cell < grid.num_points(); ++cell) {
      if (v.grid_values()(cell) > c_n) continue;
      for (int a = 0; a < actions.count(); ++a) {
        if (table.discrete(cell, a).hi <= c_n) out.push_back({cell, a});
      }
      if (table.is_initial_cell(cell) && table.initial_row(cell).hi <= c_n)
        out.push_back({cell, kInitialAction});
    }
  }
  return PairSet(std::move(out)).unite(s0);
}

namespace detail {

/// 1-norm distance between two pairs given by (cell, action) coordinates.
template <typename CoordsFn>
double pair_distance_1(const CoordsFn& coords, const PairKey& a, const PairKey& b) {
  return (coords(a) - coords(b)).template lpNorm<1>();
}

}  // namespace detail

/// Lipschitz-propagated decrease set: every pair within the 1-norm
/// generalization radius of some seed whose margin allows it. `u_n` maps a
/// PairKey to the current upper bound, `coords` to its concatenated (x, u).
template <typename UFn, typename CoordsFn>
PairSet dec_set_lipschitz(const PairSet& seeds, const UFn& u_n, const CoordsFn& coords,
                          const Vec& v_cells, double l_dv, double tau,
                          const Discretization& grid, const ActionGrid& actions,
                          const PairSet& s0) {
  require(!seeds.empty(), "dec_set_lipschitz: seed set must be nonempty");
  std::vector<PairKey> out = s0.items();
  // Radius each seed can certify around itself.
  std::vector<double> radius(seeds.size());
  for (size_t s = 0; s < seeds.size(); ++s) {
    const PairKey& seed = seeds.items()[s];
    radius[s] = (v_cells(seed.cell) - u_n(seed)) / l_dv - tau;
  }
  for (long cell = 0; cell < grid.num_points(); ++cell) {
    for (int a = 0; a < actions.count(); ++a) {
      const PairKey cand{cell, a};
      for (size_t s = 0; s < seeds.size(); ++s) {
        if (radius[s] <= 0.0) continue;
        const double dist = detail::pair_distance_1(coords, cand, seeds.items()[s]);
        if (dist < radius[s] - kDecreaseStrictness / l_dv) {
          out.push_back(cand);
          break;
        }
      }
    }
  }
  return PairSet(std::move(out));
}

/// Lipschitz-propagated safe set: pairs in the level set reachable from some
/// seed without the successor bound leaving the level.
template <typename UFn, typename CoordsFn>
PairSet safe_set_lipschitz(const PairSet& seeds, const UFn& u_n, const CoordsFn& coords,
                           double c_n, double L_v, double L_f,
                           const std::vector<long>& level_cells, const ActionGrid& actions) {
  std::vector<PairKey> out;
  std::vector<double> slack(seeds.size());
  for (size_t s = 0; s < seeds.size(); ++s) slack[s] = c_n - u_n(seeds.items()[s]);
  const double lvlf = L_v * L_f;
  for (long cell : level_cells) {
    for (int a = 0; a < actions.count(); ++a) {
      const PairKey cand{cell, a};
      for (size_t s = 0; s < seeds.size(); ++s) {
        if (slack[s] < 0.0) continue;
        const double dist = detail::pair_distance_1(coords, cand, seeds.items()[s]);
        if (lvlf * dist <= slack[s]) {
          out.push_back(cand);
          break;
        }
      }
    }
  }
  return PairSet(std::move(out));
}

struct SampleChoice {
  PairKey pair;
  double width;
};

/// Most uncertain safe pair; ties resolve to the smallest (cell, action).
/// Returns nothing when the candidate set is empty (exploration must stop).
template <typename WidthFn>
std::optional<SampleChoice> select_sample(const PairSet& candidates, const WidthFn& width) {
  if (candidates.empty()) return std::nullopt;
  SampleChoice best{candidates.items().front(), width(candidates.items().front())};
  for (size_t i = 1; i < candidates.size(); ++i) {
    const PairKey& key = candidates.items()[i];
    const double w = width(key);
    if (w > best.width) best = {key, w};  // strict: earlier (smaller) key wins ties
  }
  return best;
}

inline std::optional<SampleChoice> select_sample(const PairSet& candidates,
                                                 const ConfidenceTable& table) {
  return select_sample(candidates, [&](const PairKey& k) { return table.row(k).width(); });
}

struct ActionWindow {
  std::vector<int> indices;  // admissible discrete actions, ascending
  bool fallback_used = false;
};

/// Restricts exploration to discrete actions within the box
/// [pi(x) - u_bar, pi(x) + u_bar] componentwise. An empty window falls back
/// to the nearest admissible action and flags it.
inline ActionWindow restrict_actions(const ActionGrid& actions, const Vec& policy_action,
                                     double u_bar) {
  require(u_bar > 0.0, "restrict_actions: window half-width must be positive");
  ActionWindow out;
  for (int a = 0; a < actions.count(); ++a) {
    const Vec diff = actions.action(a) - policy_action;
    if ((diff.cwiseAbs().array() <= u_bar).all()) out.indices.push_back(a);
  }
  if (out.indices.empty()) {
    out.fallback_used = true;
    int best = 0;
    double best_dist = kInf;
    for (int a = 0; a < actions.count(); ++a) {
      const double d = (actions.action(a) - policy_action).lpNorm<1>();
      if (d < best_dist) {
        best_dist = d;
        best = a;
      }
    }
    out.indices.push_back(best);
  }
  return out;
}

}  // namespace lyasafe
