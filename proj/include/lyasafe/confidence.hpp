#pragma once

#include <algorithm>
#include <initializer_list>
#include <numeric>
#include <utility>
#include <vector>

#include "lyasafe/common.hpp"
#include "lyasafe/gp.hpp"
#include "lyasafe/grid.hpp"
#include "lyasafe/lyapunov.hpp"

namespace lyasafe {

struct Interval {
  double lo = -kInf;
  double hi = kInf;
  double width() const { return hi - lo; }
};

/// Action slot of the fixed initial-policy rows.
inline constexpr int kInitialAction = -1;

struct PairKey {
  long cell = 0;
  int action = 0;  // >= 0 discrete action index, kInitialAction for initial rows

  friend bool operator==(const PairKey&, const PairKey&) = default;
  friend bool operator<(const PairKey& a, const PairKey& b) {
    if (a.cell != b.cell) return a.cell < b.cell;
    // Initial-policy rows sort after the discrete actions of the same cell.
    const int ra = a.action >= 0 ? a.action : 1 << 30;
    const int rb = b.action >= 0 ? b.action : 1 << 30;
    return ra < rb;
  }
};

enum class RowFamily { kDiscrete, kInitial, kPolicy };

/// Running confidence intervals C_n on v(f(x, u)) for every tracked
/// state-action row. Three row families share the table:
///   - discrete rows: the full grid x action-grid product,
///   - initial rows: the fixed initial-policy pairs backing the safe seed,
///   - policy rows: the current policy's action per grid state, re-seeded
///     whenever the policy changes.
/// Intervals only shrink under updates; a fresh bound that does not intersect
/// the stored interval is dropped with a calibration warning.
class ConfidenceTable {
 public:
  ConfidenceTable(const Discretization& grid, const ActionGrid& actions)
      : n_cells_(grid.num_points()),
        n_actions_(actions.count()),
        grid_points_(grid.all_points()),
        action_values_(actions.actions) {
    discrete_.assign(static_cast<size_t>(n_cells_) * n_actions_, Interval{});
    policy_.assign(n_cells_, Interval{});
    policy_actions_ = Mat::Zero(n_cells_, actions.dims());
    s0_slot_.assign(n_cells_, -1);
    discrete_queries_.resize(static_cast<long>(n_cells_) * n_actions_,
                             grid_points_.cols() + action_values_.cols());
    for (long c = 0; c < n_cells_; ++c) {
      for (int a = 0; a < n_actions_; ++a) {
        discrete_queries_.row(c * n_actions_ + a)
            << grid_points_.row(c), action_values_.row(a);
      }
    }
  }

  long num_cells() const { return n_cells_; }
  int num_actions() const { return n_actions_; }
  const Mat& grid_points() const { return grid_points_; }

  /// Seeds the initial safe rows with their open-ended starting interval
  /// (-inf, bound). `cells` must be unique; `actions` has one row per cell.
  void init_initial_rows(const std::vector<long>& cells, const Mat& actions,
                         const Vec& upper_bounds) {
    require(static_cast<long>(cells.size()) == actions.rows() &&
                actions.rows() == upper_bounds.size(),
            "initial rows: cells, actions and bounds must align");
    s0_cells_ = cells;
    std::sort(s0_cells_.begin(), s0_cells_.end());
    s0_actions_.resize(cells.size(), actions.cols());
    s0_rows_.assign(cells.size(), Interval{});
    s0_bounds_.resize(cells.size());
    s0_queries_.resize(cells.size(), grid_points_.cols() + actions.cols());
    std::fill(s0_slot_.begin(), s0_slot_.end(), -1);
    for (size_t i = 0; i < cells.size(); ++i) {
      const long cell = s0_cells_[i];
      // Recover the action row matching the sorted order.
      const auto it = std::find(cells.begin(), cells.end(), cell);
      const long src = it - cells.begin();
      s0_actions_.row(i) = actions.row(src);
      // v(f) is nonnegative, so the lower edge may start at zero; a bound
      // below zero (deep discretization penalty) collapses to a point claim.
      s0_rows_[i] = Interval{std::min(0.0, upper_bounds(src)), upper_bounds(src)};
      s0_bounds_(i) = upper_bounds(src);
      s0_slot_[cell] = static_cast<int>(i);
      s0_queries_.row(i) << grid_points_.row(cell), actions.row(src);
    }
  }

  bool is_initial_cell(long cell) const { return s0_slot_[cell] >= 0; }
  const std::vector<long>& initial_cells() const { return s0_cells_; }
  Vec initial_action(long cell) const {
    require(is_initial_cell(cell), "cell has no initial safe row");
    return s0_actions_.row(s0_slot_[cell]).transpose();
  }

  /// Re-seeds the policy rows for a new policy: initial-safe cells restart
  /// from their construction bound, everything else from the whole real line.
  void reset_policy_rows(const Mat& actions) {
    require(actions.rows() == n_cells_, "policy rows: one action per grid cell");
    policy_actions_ = actions;
    policy_queries_.resize(n_cells_, grid_points_.cols() + actions.cols());
    for (long c = 0; c < n_cells_; ++c) {
      const int slot = s0_slot_[c];
      policy_[c] = (slot >= 0) ? Interval{std::min(0.0, s0_bounds_(slot)), s0_bounds_(slot)}
                               : Interval{};
      policy_queries_.row(c) << grid_points_.row(c), actions.row(c);
    }
  }

  struct PolicyRows {
    std::vector<Interval> intervals;
    Mat actions;
    Mat queries;
  };

  PolicyRows policy_snapshot() const { return {policy_, policy_actions_, policy_queries_}; }
  void restore_policy_rows(PolicyRows rows) {
    policy_ = std::move(rows.intervals);
    policy_actions_ = std::move(rows.actions);
    policy_queries_ = std::move(rows.queries);
  }

  const Mat& policy_actions() const { return policy_actions_; }
  Vec policy_action(long cell) const { return policy_actions_.row(cell).transpose(); }

  const Interval& discrete(long cell, int action) const {
    return discrete_[cell * n_actions_ + action];
  }
  const Interval& policy_row(long cell) const { return policy_[cell]; }
  const Interval& initial_row(long cell) const {
    require(is_initial_cell(cell), "cell has no initial safe row");
    return s0_rows_[s0_slot_[cell]];
  }

  const Interval& row(const PairKey& key) const {
    if (key.action == kInitialAction) return initial_row(key.cell);
    require(key.action >= 0 && key.action < n_actions_, "pair lookup: unknown action slot");
    return discrete(key.cell, key.action);
  }

  Vec row_input(const PairKey& key) const {
    if (key.action == kInitialAction) {
      Vec a(grid_points_.cols() + s0_actions_.cols());
      a << grid_points_.row(key.cell).transpose(), initial_action(key.cell);
      return a;
    }
    return discrete_queries_.row(key.cell * n_actions_ + key.action).transpose();
  }

  struct CalibrationWarning {
    PairKey pair;
    Interval stored;
    Interval fresh;
  };

  /// Intersects one family's rows with fresh one-step bounds on v(f).
  template <typename Model>
  std::vector<CalibrationWarning> update(RowFamily family, const Model& model,
                                         const LyapunovFunction& v,
                                         const LipschitzConstants& lips, double beta) {
    const Mat* queries = nullptr;
    std::vector<Interval>* rows = nullptr;
    switch (family) {
      case RowFamily::kDiscrete: queries = &discrete_queries_; rows = &discrete_; break;
      case RowFamily::kInitial:  queries = &s0_queries_;       rows = &s0_rows_;  break;
      case RowFamily::kPolicy:   queries = &policy_queries_;   rows = &policy_;   break;
    }
    std::vector<CalibrationWarning> warnings;
    const long total = queries->rows();
    Mat means, sigmas;
    constexpr long kBlock = 32768;
    for (long start = 0; start < total; start += kBlock) {
      const long count = std::min(kBlock, total - start);
      model.predict_batch(queries->middleRows(start, count), &means, &sigmas);
      for (long i = 0; i < count; ++i) {
        intersect_row(family, start + i, means.row(i).transpose(), sigmas.row(i).sum(), v, lips,
                      beta, (*rows)[start + i], warnings);
      }
    }
    return warnings;
  }

  /// Band-limited variant: refreshes only the listed discrete rows
  /// (cell * num_actions + action).
  template <typename Model>
  std::vector<CalibrationWarning> update_discrete_rows(const std::vector<long>& row_ids,
                                                       const Model& model,
                                                       const LyapunovFunction& v,
                                                       const LipschitzConstants& lips,
                                                       double beta) {
    std::vector<CalibrationWarning> warnings;
    const long total = static_cast<long>(row_ids.size());
    Mat block_q, means, sigmas;
    constexpr long kBlock = 32768;
    for (long start = 0; start < total; start += kBlock) {
      const long count = std::min(kBlock, total - start);
      block_q.resize(count, discrete_queries_.cols());
      for (long i = 0; i < count; ++i) block_q.row(i) = discrete_queries_.row(row_ids[start + i]);
      model.predict_batch(block_q, &means, &sigmas);
      for (long i = 0; i < count; ++i) {
        intersect_row(RowFamily::kDiscrete, row_ids[start + i], means.row(i).transpose(),
                      sigmas.row(i).sum(), v, lips, beta, discrete_[row_ids[start + i]], warnings);
      }
    }
    return warnings;
  }

 private:
  void intersect_row(RowFamily family, long row_index, const Vec& mu, double sigma_sum,
                     const LyapunovFunction& v, const LipschitzConstants& lips, double beta,
                     Interval& stored, std::vector<CalibrationWarning>& warnings) {
    const auto near = v.grid().nearest(mu);
    const double lv = lips.L_v_at(near.index);
    const double center = v.value_capped(mu);
    const Interval fresh{center - lv * beta * sigma_sum, center + lv * beta * sigma_sum};
    const Interval merged{std::max(stored.lo, fresh.lo), std::min(stored.hi, fresh.hi)};
    if (merged.lo > merged.hi) {
      warnings.push_back({key_for(family, row_index), stored, fresh});
      return;  // calibration failure: keep the old interval
    }
    stored = merged;
  }

  PairKey key_for(RowFamily family, long row_index) const {
    switch (family) {
      case RowFamily::kDiscrete:
        return {row_index / n_actions_, static_cast<int>(row_index % n_actions_)};
      case RowFamily::kInitial:
        return {s0_cells_[row_index], kInitialAction};
      case RowFamily::kPolicy:
      default:
        return {row_index, kInitialAction};  // policy rows are keyed by cell only
    }
  }

  long n_cells_;
  int n_actions_;
  Mat grid_points_;
  Mat action_values_;
  std::vector<Interval> discrete_;
  Mat discrete_queries_;
  std::vector<Interval> policy_;
  Mat policy_actions_;
  Mat policy_queries_;
  std::vector<long> s0_cells_;
  std::vector<int> s0_slot_;
  Mat s0_actions_;
  std::vector<Interval> s0_rows_;
  Vec s0_bounds_;
  Mat s0_queries_;
};

/// Free-function form of the table update.
template <typename Model>
std::vector<ConfidenceTable::CalibrationWarning> update_confidence(
    ConfidenceTable& table, std::initializer_list<RowFamily> families, const Model& model,
    const LyapunovFunction& v, const LipschitzConstants& lips, double beta) {
  std::vector<ConfidenceTable::CalibrationWarning> warnings;
  for (RowFamily family : families) {
    auto w = table.update(family, model, v, lips, beta);
    warnings.insert(warnings.end(), w.begin(), w.end());
  }
  return warnings;
}

/// Theorem-style one-step decrease test: strict inequality with a fixed
/// float-safety slack; equality never certifies.
inline bool decrease_ok(const Interval& row, double v_x, double l_dv, double tau) {
  return row.hi - v_x < -l_dv * tau - kDecreaseStrictness;
}

inline bool decrease_ok(const ConfidenceTable& table, const LyapunovFunction& v,
                        const PairKey& key, const LipschitzConstants& lips, double tau) {
  const double l_dv = l_delta_v(lips, lips.use_local, key.cell);
  return decrease_ok(table.row(key), v.grid_values()(key.cell), l_dv, tau);
}

struct LevelResult {
  double c = 0.0;
  bool empty_certificate = false;
  std::vector<long> cells;  // grid states with v(x) <= c (empty when c == 0)
};

/// Largest certified level: walks the sorted grid Lyapunov values and keeps
/// the highest level below which every state passes the decrease test on its
/// current-policy row. States with v(x) == 0 (the goal) are exempt.
inline LevelResult largest_level(const LyapunovFunction& v, const Discretization& grid,
                                 const ConfidenceTable& table, const LipschitzConstants& lips,
                                 double tau) {
  const long n = grid.num_points();
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    return v.grid_values()(a) != v.grid_values()(b) ? v.grid_values()(a) < v.grid_values()(b)
                                                    : a < b;
  });

  LevelResult out;
  long accepted_until = 0;  // index into `order`, exclusive
  long i = 0;
  while (i < n) {
    // A level is certified only if every state sharing it passes.
    const double level = v.grid_values()(order[i]);
    long j = i;
    bool all_pass = true;
    while (j < n && v.grid_values()(order[j]) == level) {
      const long cell = order[j];
      if (level > 0.0) {
        const double l_dv = l_delta_v(lips, lips.use_local, cell);
        if (!decrease_ok(table.policy_row(cell), level, l_dv, tau)) {
          all_pass = false;
        }
      }
      ++j;
    }
    if (!all_pass) break;
    if (level > 0.0) out.c = level;
    accepted_until = j;
    i = j;
  }
  if (out.c <= 0.0) {
    out.c = 0.0;
    out.empty_certificate = true;
    return out;
  }
  out.cells.assign(order.begin(), order.begin() + accepted_until);
  std::sort(out.cells.begin(), out.cells.end());
  return out;
}

}  // namespace lyasafe
