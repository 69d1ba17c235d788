#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rsf/dataset.hpp"
#include "rsf/forest.hpp"
#include "rsf/parallel.hpp"
#include "rsf/rng.hpp"
#include "rsf/tree.hpp"

namespace rsf {

struct CellRef {
  std::size_t row;
  std::size_t column;
  bool operator==(const CellRef&) const = default;
};

/// Bookkeeping for one pass of adaptive tree imputation.
struct ImputationState {
  std::vector<CellRef> cells;                   // originally missing cells, column-major order
  std::vector<std::vector<double>> inbag_draws;  // per cell: terminal-node draws while in bag
  std::vector<std::vector<double>> oob_draws;    // per cell: terminal-node draws while out of bag
  SurvivalDataset inbag_summary;                 // mean / mode of the in-bag draws
  SurvivalDataset oob_summary;                   // mean / mode of the OOB draws
  std::size_t undetermined = 0;                  // cells with no in-bag draw (column-level fallback used)
  std::size_t oob_fallback = 0;                  // cells with no OOB draw (in-bag summary used)
  std::size_t iteration = 1;
};

struct ImputationFit {
  Forest forest;
  ImputationState state;
  SurvivalDataset completed;
  FitReport report;
};

struct IterationReport {
  std::size_t iteration = 0;
  std::optional<double> oob_error;
  std::size_t oob_excluded = 0;
  std::size_t undetermined = 0;
};

struct IteratedImputation {
  SurvivalDataset completed;
  Forest forest;
  std::vector<IterationReport> iterations;
};

inline std::vector<CellRef> missing_cells(const SurvivalDataset& ds) {
  std::vector<CellRef> cells;
  for (std::size_t c = 0; c < ds.column_count(); ++c)
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (!ds.cell(i, c)) cells.push_back({i, c});
  return cells;
}

/// Mean for continuous columns; most frequent value for integer columns,
/// ties broken uniformly at random.
inline double summarize_draws(std::span<const double> draws, VarKind kind, Rng& rng) {
  if (draws.empty()) throw std::invalid_argument("summarize_draws: no draws");
  if (kind == VarKind::continuous) {
    double sum = 0;
    for (double v : draws) sum += v;
    return sum / static_cast<double>(draws.size());
  }
  std::map<double, std::size_t> counts;
  for (double v : draws) ++counts[v];
  std::size_t best = 0;
  std::vector<double> modes;
  for (const auto& [value, count] : counts) {
    if (count > best) {
      best = count;
      modes.assign(1, value);
    } else if (count == best) {
      modes.push_back(value);
    }
  }
  return modes.size() == 1 ? modes.front() : modes[rng.below(modes.size())];
}

inline void require_observed_columns(const SurvivalDataset& ds) {
  for (std::size_t c = 0; c < ds.column_count(); ++c) {
    bool any = false;
    for (std::size_t i = 0; i < ds.n() && !any; ++i) any = ds.cell(i, c).has_value();
    if (!any) throw DataError("column '" + ds.column_name(c) + "' is entirely missing");
  }
}

namespace detail {

inline std::uint64_t cell_key(const CellRef& cell) { return (static_cast<std::uint64_t>(cell.column) << 40) ^ cell.row; }

inline ValuePool observed_pool(const SurvivalDataset& ds, std::size_t column) {
  std::vector<std::pair<double, int>> items;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (const auto v = ds.cell(i, column)) items.emplace_back(*v, 1);
  return ValuePool::build(std::move(items));
}

/// Drops a case down a tree, drawing routing values for missing covariates
/// at splits, then draws each of `columns` from the terminal's observed
/// in-bag values.
inline std::size_t drop_and_draw(const SurvivalTree& tree, const SurvivalDataset& training,
                                 std::span<const std::optional<double>> x, std::span<const std::size_t> columns,
                                 Rng& rng, std::vector<std::pair<std::size_t, double>>& out) {
  const std::size_t term = find_terminal(tree, x, &rng);
  for (std::size_t c : columns) {
    const ValuePool pool = terminal_pool(tree, term, c, training);
    if (!pool.empty()) out.emplace_back(c, pool.draw(rng));
  }
  return term;
}

inline SurvivalDataset fill(SurvivalDataset ds, const std::vector<CellRef>& cells, const std::vector<double>& values) {
  for (std::size_t j = 0; j < cells.size(); ++j) ds.set_cell(cells[j].row, cells[j].column, values[j]);
  return ds;
}

}  // namespace detail

/// One pass of adaptive tree imputation: grows the forest in missing-data
/// mode, records each missing cell's terminal draws (in bag during growth,
/// out of bag by dropping the case afterwards), and summarizes them.
/// `completed` holds the in-bag summaries; the forest's OOB error uses the
/// OOB summary outcomes.
inline ImputationFit fit_with_imputation(const SurvivalDataset& ds, FitParams params) {
  const auto start = std::chrono::steady_clock::now();
  ds.validate();
  require_observed_columns(ds);
  params.grow.missing_data = true;

  ImputationState state;
  state.cells = missing_cells(ds);
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t j = 0; j < state.cells.size(); ++j) index.emplace(detail::cell_key(state.cells[j]), j);
  state.inbag_draws.assign(state.cells.size(), {});
  state.oob_draws.assign(state.cells.size(), {});

  std::vector<std::vector<CellDraw>> grow_draws;
  Forest forest = grow_forest(ds, {}, {}, params, &grow_draws);
  for (const auto& per_tree : grow_draws)
    for (const auto& draw : per_tree) state.inbag_draws[index.at(detail::cell_key({draw.row, draw.column}))].push_back(draw.value);

  // Passive OOB cases: routed with the same per-(tree, case) stream that
  // later OOB queries use, then drawn at their terminal node.
  std::vector<std::vector<std::size_t>> row_columns(ds.n());
  for (const auto& cell : state.cells) row_columns[cell.row].push_back(cell.column);
  std::vector<std::vector<std::pair<std::size_t, std::pair<std::size_t, double>>>> oob(forest.ntree());
  parallel_for(forest.ntree(), params.threads, [&](std::size_t b) {
    std::vector<std::pair<std::size_t, double>> drawn;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (!forest.is_oob(i, b) || row_columns[i].empty()) continue;
      Rng rng(params.seed, {static_cast<std::uint64_t>(Stream::oob_route), b, i});
      drawn.clear();
      detail::drop_and_draw(forest.trees[b], ds, case_covariates(ds, i), row_columns[i], rng, drawn);
      for (const auto& [c, v] : drawn) oob[b].push_back({i, {c, v}});
    }
  });
  for (const auto& per_tree : oob)
    for (const auto& [row, cv] : per_tree) state.oob_draws[index.at(detail::cell_key({row, cv.first}))].push_back(cv.second);

  std::vector<double> inbag_values(state.cells.size()), oob_values(state.cells.size());
  for (std::size_t j = 0; j < state.cells.size(); ++j) {
    const auto& cell = state.cells[j];
    const VarKind kind = ds.column_kind(cell.column);
    Rng rng(params.seed, {static_cast<std::uint64_t>(Stream::summary), cell.row, cell.column});
    if (!state.inbag_draws[j].empty()) {
      inbag_values[j] = summarize_draws(state.inbag_draws[j], kind, rng);
    } else {
      ++state.undetermined;
      inbag_values[j] = detail::observed_pool(ds, cell.column).draw(rng);
    }
    if (!state.oob_draws[j].empty()) {
      oob_values[j] = summarize_draws(state.oob_draws[j], kind, rng);
    } else {
      ++state.oob_fallback;
      oob_values[j] = inbag_values[j];
    }
  }
  state.inbag_summary = detail::fill(ds, state.cells, inbag_values);
  state.oob_summary = detail::fill(ds, state.cells, oob_values);

  forest.outcome_time = state.oob_summary.times();
  forest.outcome_status = state.oob_summary.statuses();
  refresh_caches(forest);
  FitReport report = summarize_fit(forest);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  SurvivalDataset completed = state.inbag_summary;
  return {std::move(forest), std::move(state), std::move(completed), std::move(report)};
}

/// Iterated adaptive imputation. The first pass is fit_with_imputation; each
/// later pass grows a forest on the OOB/full summary-imputed data, draws every
/// originally missing cell once per tree from the originally observed in-bag
/// members of the case's terminal node, and re-imputes with the full summary.
inline IteratedImputation iterate_impute(const SurvivalDataset& ds, const FitParams& params, std::size_t iterations) {
  if (iterations < 1) throw ValidationError("iterations must be at least 1");
  ImputationFit first = fit_with_imputation(ds, params);
  IteratedImputation out;
  out.iterations.push_back({1, first.report.oob_error, first.report.oob_excluded, first.state.undetermined});
  if (iterations == 1) {
    out.completed = std::move(first.completed);
    out.forest = std::move(first.forest);
    return out;
  }

  const auto& cells = first.state.cells;
  SurvivalDataset current = std::move(first.state.oob_summary);
  for (std::size_t it = 2; it <= iterations; ++it) {
    FitParams p = params;
    p.seed = derive_seed(params.seed, {static_cast<std::uint64_t>(Stream::iteration), it});
    p.grow.missing_data = false;
    p.grow.keep_node_distributions = true;
    Forest forest = grow_forest(current, current.times(), current.statuses(), p);
    const FitReport report = summarize_fit(forest);

    std::vector<std::vector<std::size_t>> row_cells(ds.n());
    for (std::size_t j = 0; j < cells.size(); ++j) row_cells[cells[j].row].push_back(j);
    std::vector<std::vector<std::pair<std::size_t, double>>> per_tree(forest.ntree());
    parallel_for(forest.ntree(), p.threads, [&](std::size_t b) {
      Rng rng(p.seed, {static_cast<std::uint64_t>(Stream::summary), b});
      const auto& tree = forest.trees[b];
      for (std::size_t i = 0; i < ds.n(); ++i) {
        if (row_cells[i].empty()) continue;
        const std::size_t term = training_terminal(forest, b, i);
        for (std::size_t j : row_cells[i]) {
          // Pool of originally observed values among the terminal's in-bag members.
          const ValuePool pool = detail::column_pool(ds, cells[j].column, tree.terminals[term].members,
                                                     tree.terminals[term].multiplicity);
          if (!pool.empty()) per_tree[b].emplace_back(j, pool.draw(rng));
        }
      }
    });
    std::vector<std::vector<double>> draws(cells.size());
    for (const auto& tree_draws : per_tree)
      for (const auto& [j, v] : tree_draws) draws[j].push_back(v);

    std::size_t undetermined = 0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (draws[j].empty()) {
        ++undetermined;
        continue;
      }
      Rng rng(p.seed, {static_cast<std::uint64_t>(Stream::summary), cells[j].row, cells[j].column});
      current.set_cell(cells[j].row, cells[j].column, summarize_draws(draws[j], current.column_kind(cells[j].column), rng));
    }
    out.iterations.push_back({it, report.oob_error, report.oob_excluded, undetermined});
    out.forest = std::move(forest);
  }
  out.completed = std::move(current);
  return out;
}

struct TestImputation {
  SurvivalDataset completed;
  std::vector<double> mortality;
  std::vector<CellRef> imputed;
};

/// Test-set imputation: each case is dropped down every tree with missing
/// covariates drawn at the nodes it meets; missing cells (covariates and
/// outcomes) are drawn at each terminal and summarized over trees.
/// Predictions are the bootstrap ensemble mortality along the same routes.
inline TestImputation impute_test(const Forest& forest, const SurvivalDataset& test) {
  if (test.d() != forest.d()) throw ValidationError("test data has " + std::to_string(test.d()) + " variables, model has " +
                                                    std::to_string(forest.d()));
  for (std::size_t k = 0; k < test.d(); ++k)
    if (test.names[k] != forest.training.names[k])
      throw ValidationError("test column '" + test.names[k] + "' does not match model variable '" +
                            forest.training.names[k] + "'");

  TestImputation out;
  out.completed = test;
  out.mortality.assign(test.n(), 0.0);
  std::vector<std::vector<std::pair<std::size_t, double>>> filled(test.n());
  parallel_for(test.n(), forest.params.threads, [&](std::size_t i) {
    const auto x = case_covariates(test, i);
    std::vector<std::size_t> columns;
    for (std::size_t c = 0; c < test.column_count(); ++c)
      if (!test.cell(i, c)) columns.push_back(c);
    std::vector<std::vector<double>> draws(test.column_count());
    double total = 0;
    std::vector<std::pair<std::size_t, double>> drawn;
    for (std::size_t b = 0; b < forest.ntree(); ++b) {
      const auto& tree = forest.trees[b];
      std::size_t term;
      if (columns.empty()) {
        term = find_terminal(tree, x, nullptr);
      } else {
        Rng rng(forest.params.seed, {static_cast<std::uint64_t>(Stream::test_route), b, i});
        drawn.clear();
        term = detail::drop_and_draw(tree, forest.training, x, columns, rng, drawn);
        for (const auto& [c, v] : drawn) draws[c].push_back(v);
      }
      total += tree.terminals[term].mortality_sum;
    }
    out.mortality[i] = total / static_cast<double>(forest.ntree());
    for (std::size_t c : columns) {
      if (draws[c].empty()) continue;
      Rng rng(forest.params.seed, {static_cast<std::uint64_t>(Stream::summary), i, c, 1});
      filled[i].emplace_back(c, summarize_draws(draws[c], test.column_kind(c), rng));
    }
  });
  for (std::size_t i = 0; i < test.n(); ++i) {
    for (const auto& [c, v] : filled[i]) {
      out.completed.set_cell(i, c, v);
      out.imputed.push_back({i, c});
    }
  }
  return out;
}

/// Median fill for continuous columns, most frequent value (smallest on
/// ties) for integer columns; outcomes included.
inline SurvivalDataset rough_impute(const SurvivalDataset& ds) {
  SurvivalDataset out = ds;
  for (std::size_t c = 0; c < ds.column_count(); ++c) {
    std::vector<double> observed;
    bool any_missing = false;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (const auto v = ds.cell(i, c))
        observed.push_back(*v);
      else
        any_missing = true;
    }
    if (!any_missing) continue;
    if (observed.empty()) throw DataError("column '" + ds.column_name(c) + "' is entirely missing");
    std::sort(observed.begin(), observed.end());
    double fill;
    if (ds.column_kind(c) == VarKind::continuous) {
      const std::size_t m = observed.size();
      fill = m % 2 == 1 ? observed[m / 2] : 0.5 * (observed[m / 2 - 1] + observed[m / 2]);
    } else {
      std::size_t best = 0;
      fill = observed.front();
      for (std::size_t p = 0; p < observed.size();) {
        std::size_t q = p;
        while (q < observed.size() && observed[q] == observed[p]) ++q;
        if (q - p > best) {
          best = q - p;
          fill = observed[p];
        }
        p = q;
      }
    }
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (!ds.cell(i, c)) out.set_cell(i, c, fill);
  }
  return out;
}

/// Re-imputes the originally missing cells of `current` from a proximity
/// matrix: proximity-weighted mean of observed values (continuous), or the
/// observed value with the largest average proximity (integer).
inline SurvivalDataset proximity_reimpute(const SurvivalDataset& original, SurvivalDataset current,
                                          const std::vector<std::vector<double>>& prox) {
  const auto cells = missing_cells(original);
  std::vector<std::optional<double>> values(cells.size());
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const auto [i, c] = cells[j];
    if (original.column_kind(c) == VarKind::continuous) {
      double num = 0, den = 0;
      for (std::size_t r = 0; r < original.n(); ++r) {
        const auto v = original.cell(r, c);
        if (!v || r == i) continue;
        num += prox[i][r] * *v;
        den += prox[i][r];
      }
      if (den > 0) values[j] = num / den;
    } else {
      std::map<double, std::pair<double, std::size_t>> by_value;
      for (std::size_t r = 0; r < original.n(); ++r) {
        const auto v = original.cell(r, c);
        if (!v || r == i) continue;
        auto& acc = by_value[*v];
        acc.first += prox[i][r];
        acc.second += 1;
      }
      double best = -1;
      for (const auto& [v, acc] : by_value) {
        const double average = acc.first / static_cast<double>(acc.second);
        if (average > best) {
          best = average;
          values[j] = v;
        }
      }
    }
  }
  for (std::size_t j = 0; j < cells.size(); ++j)
    if (values[j]) current.set_cell(cells[j].row, cells[j].column, *values[j]);
  return current;
}

/// Proximity imputation: rough fill, then `iterations` rounds of
/// fit -> proximity matrix -> re-impute.
inline SurvivalDataset proximity_impute(const SurvivalDataset& ds, const FitParams& params, std::size_t iterations) {
  ds.validate();
  require_observed_columns(ds);
  SurvivalDataset current = rough_impute(ds);
  for (std::size_t it = 1; it <= iterations; ++it) {
    FitParams p = params;
    p.grow.missing_data = false;
    p.compute_vimp = false;
    if (it > 1) p.seed = derive_seed(params.seed, {static_cast<std::uint64_t>(Stream::iteration), it});
    const Forest forest = grow_forest(current, current.times(), current.statuses(), p);
    current = proximity_reimpute(ds, std::move(current), proximity_matrix(forest));
  }
  return current;
}

/// Root-mean-square error of the imputed values in `column` against the
/// ground truth recorded by inject_missing.
inline double imputation_rmse(const SurvivalDataset& completed, const MissingnessReport& truth, std::size_t column) {
  double ss = 0;
  std::size_t count = 0;
  for (const auto& cell : truth.cells) {
    if (cell.column != column) continue;
    const auto v = completed.cell(cell.row, cell.column);
    if (!v) continue;
    ss += (*v - cell.value) * (*v - cell.value);
    ++count;
  }
  if (count == 0) return 0.0;
  return std::sqrt(ss / static_cast<double>(count));
}

}  // namespace rsf
