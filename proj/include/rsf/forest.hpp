#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rsf/dataset.hpp"
#include "rsf/parallel.hpp"
#include "rsf/rng.hpp"
#include "rsf/survstat.hpp"
#include "rsf/tree.hpp"

namespace rsf {

enum class Bootstrap { by_case, none };

inline const char* to_string(Bootstrap b) { return b == Bootstrap::none ? "none" : "by-case"; }

struct FitParams {
  GrowParams grow;
  std::size_t ntree = 1000;
  std::uint64_t seed = 0;
  Bootstrap bootstrap = Bootstrap::by_case;
  bool compute_vimp = false;
  unsigned threads = 0;  // 0 = all cores; never affects results
};

/// A fitted random survival forest together with the training data it was
/// grown on. `training` keeps missing cells when the forest was grown in
/// missing-data mode; outcome_time/outcome_status are the (completed)
/// training outcomes used for mortality and prediction error.
struct Forest {
  FitParams params;
  SurvivalDataset training;
  std::vector<double> outcome_time;
  std::vector<int> outcome_status;
  std::vector<double> event_grid;  // unique training death times
  std::vector<SurvivalTree> trees;

  std::size_t ntree() const { return trees.size(); }
  std::size_t n() const { return outcome_time.size(); }
  std::size_t d() const { return training.d(); }

  bool is_oob(std::size_t i, std::size_t b) const { return trees[b].inbag[i] == 0; }

  std::size_t oob_count(std::size_t i) const {
    std::size_t count = 0;
    for (std::size_t b = 0; b < trees.size(); ++b) count += is_oob(i, b) ? 1 : 0;
    return count;
  }
};

struct FitReport {
  std::optional<double> oob_error;                   // PE**, undefined without bootstrap
  std::vector<std::optional<double>> oob_mortality;  // per case; empty when never out-of-bag
  std::size_t oob_excluded = 0;                      // cases never out-of-bag
  std::optional<std::vector<double>> vimp;
  std::size_t ntree = 0;
  double seconds = 0;
};

inline std::vector<std::optional<double>> case_covariates(const SurvivalDataset& ds, std::size_t i) {
  std::vector<std::optional<double>> x(ds.d());
  for (std::size_t k = 0; k < ds.d(); ++k) x[k] = ds.x[k][i];
  return x;
}

inline std::vector<double> unique_death_times(std::span<const double> times, std::span<const int> status) {
  std::vector<double> grid;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (status[i] == 1) grid.push_back(times[i]);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

inline std::vector<int> draw_inbag(std::size_t n, Bootstrap bootstrap, Rng& rng) {
  std::vector<int> inbag(n, bootstrap == Bootstrap::none ? 1 : 0);
  if (bootstrap == Bootstrap::by_case)
    for (std::size_t j = 0; j < n; ++j) ++inbag[rng.below(n)];
  return inbag;
}

/// Recomputes the per-terminal sums over the event grid and the training times.
inline void refresh_caches(Forest& forest) {
  forest.event_grid = unique_death_times(forest.outcome_time, forest.outcome_status);
  std::vector<double> sorted_times = forest.outcome_time;
  std::sort(sorted_times.begin(), sorted_times.end());
  for (auto& tree : forest.trees) {
    for (auto& term : tree.terminals) {
      term.grid_sum = term.chf.sum_over(forest.event_grid);
      term.mortality_sum = term.chf.sum_over(sorted_times);
    }
  }
}

/// Terminal reached by training case i in tree b. Missing covariates are
/// routed with a stream keyed on (seed, b, i), so repeated calls agree.
inline std::size_t training_terminal(const Forest& forest, std::size_t b, std::size_t i) {
  const auto x = case_covariates(forest.training, i);
  if (std::all_of(x.begin(), x.end(), [](const auto& v) { return v.has_value(); }))
    return find_terminal(forest.trees[b], x, nullptr);
  Rng rng(forest.params.seed, {static_cast<std::uint64_t>(Stream::oob_route), b, i});
  return find_terminal(forest.trees[b], x, &rng);
}

/// terminals[b][i]: terminal of training case i in tree b.
inline std::vector<std::vector<std::uint32_t>> training_terminals(const Forest& forest) {
  std::vector<std::vector<std::uint32_t>> out(forest.ntree(), std::vector<std::uint32_t>(forest.n()));
  parallel_for(forest.ntree(), forest.params.threads, [&](std::size_t b) {
    for (std::size_t i = 0; i < forest.n(); ++i) out[b][i] = static_cast<std::uint32_t>(training_terminal(forest, b, i));
  });
  return out;
}

namespace detail {

inline void require_same_schema(const Forest& forest, std::span<const std::optional<double>> x) {
  if (x.size() != forest.d())
    throw ValidationError("covariate vector has " + std::to_string(x.size()) + " values, forest expects " +
                          std::to_string(forest.d()));
}

}  // namespace detail

/// Out-of-bag ensemble CHF of training case i on the event grid: the mean
/// of the tree CHFs over trees in which i is out of bag.
inline StepCHF oob_chf(const Forest& forest, std::size_t i) {
  if (i >= forest.n()) throw std::out_of_range("oob_chf: case index out of range");
  StepCHF out;
  out.grid = forest.event_grid;
  out.values.assign(out.grid.size(), 0.0);
  std::size_t count = 0;
  for (std::size_t b = 0; b < forest.ntree(); ++b) {
    if (!forest.is_oob(i, b)) continue;
    forest.trees[b].terminals[training_terminal(forest, b, i)].chf.accumulate(out.grid, out.values);
    ++count;
  }
  if (count == 0) throw DataError("oob_chf: case " + std::to_string(i) + " is never out-of-bag");
  for (auto& v : out.values) v /= static_cast<double>(count);
  return out;
}

/// Bootstrap ensemble CHF: the mean tree CHF over all trees, on the event grid.
inline StepCHF ensemble_chf(const Forest& forest, std::span<const std::optional<double>> x, Rng* rng = nullptr) {
  detail::require_same_schema(forest, x);
  StepCHF out;
  out.grid = forest.event_grid;
  out.values.assign(out.grid.size(), 0.0);
  for (const auto& tree : forest.trees) tree_chf(tree, x, rng).accumulate(out.grid, out.values);
  for (auto& v : out.values) v /= static_cast<double>(forest.ntree());
  return out;
}

/// Ensemble mortality: sum of the bootstrap ensemble CHF over every training time.
inline double mortality(const Forest& forest, std::span<const std::optional<double>> x, Rng* rng = nullptr) {
  detail::require_same_schema(forest, x);
  double total = 0;
  for (const auto& tree : forest.trees) total += tree.terminals[find_terminal(tree, x, rng)].mortality_sum;
  return total / static_cast<double>(forest.ntree());
}

/// OOB ensemble mortality of training case i.
inline double oob_mortality(const Forest& forest, std::size_t i) {
  double total = 0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < forest.ntree(); ++b) {
    if (!forest.is_oob(i, b)) continue;
    total += forest.trees[b].terminals[training_terminal(forest, b, i)].mortality_sum;
    ++count;
  }
  if (count == 0) throw DataError("oob_mortality: case " + std::to_string(i) + " is never out-of-bag");
  return total / static_cast<double>(count);
}

struct OobScores {
  std::vector<std::optional<double>> predicted;  // sum of the OOB ensemble CHF over the event grid
  std::size_t excluded = 0;
};

namespace detail {

inline constexpr std::size_t kNoVariable = static_cast<std::size_t>(-1);

/// OOB ranking scores. When `noised` names a variable, every split on it
/// sends the case to a daughter chosen by a fair coin keyed on
/// (seed, variable, tree, case, depth).
inline OobScores oob_scores(const Forest& forest, std::size_t noised = kNoVariable) {
  const std::size_t n = forest.n();
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (std::size_t b = 0; b < forest.ntree(); ++b) {
    const auto& tree = forest.trees[b];
    for (std::size_t i = 0; i < n; ++i) {
      if (!forest.is_oob(i, b)) continue;
      std::size_t term;
      if (noised == kNoVariable) {
        term = training_terminal(forest, b, i);
      } else {
        std::optional<Rng> rng;
        std::size_t id = 0;
        std::uint64_t depth = 0;
        while (!tree.nodes[id].is_terminal()) {
          const auto& node = tree.nodes[id];
          const auto k = static_cast<std::size_t>(node.variable);
          bool go_left;
          if (k == noised) {
            go_left = hashed_coin(forest.params.seed, {static_cast<std::uint64_t>(Stream::vimp), k, b, i, depth});
          } else {
            const auto& v = forest.training.x[k][i];
            if (!v && !rng) rng.emplace(forest.params.seed, std::initializer_list<std::uint64_t>{static_cast<std::uint64_t>(Stream::oob_route), b, i});
            if (!v && node.route.empty()) throw ValidationError("vimp: missing covariate without node distribution");
            const double value = v ? *v : node.route.draw(*rng);
            go_left = value <= node.threshold;
          }
          id = static_cast<std::size_t>(go_left ? node.left : node.right);
          ++depth;
        }
        term = static_cast<std::size_t>(tree.nodes[id].terminal);
      }
      sum[i] += tree.terminals[term].grid_sum;
      ++count[i];
    }
  }
  OobScores out;
  out.predicted.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] == 0) {
      ++out.excluded;
    } else {
      out.predicted[i] = sum[i] / static_cast<double>(count[i]);
    }
  }
  return out;
}

inline double error_from_scores(const Forest& forest, const OobScores& scores) {
  std::vector<double> predicted, times;
  std::vector<int> status;
  for (std::size_t i = 0; i < forest.n(); ++i) {
    if (!scores.predicted[i]) continue;
    predicted.push_back(*scores.predicted[i]);
    times.push_back(forest.outcome_time[i]);
    status.push_back(forest.outcome_status[i]);
  }
  return prediction_error(predicted, times, status);
}

}  // namespace detail

inline OobScores oob_scores(const Forest& forest) { return detail::oob_scores(forest); }

/// OOB prediction error PE** = 1 - C**. Cases that are never out of bag are
/// left out (see oob_scores().excluded).
inline double oob_error(const Forest& forest) {
  if (forest.params.bootstrap == Bootstrap::none)
    throw ValidationError("oob_error: undefined for a forest grown without bootstrap");
  return detail::error_from_scores(forest, detail::oob_scores(forest));
}

/// Variable importance: increase in OOB prediction error when daughter
/// assignment at the variable's splits is randomized.
inline std::vector<double> vimp(const Forest& forest) {
  if (forest.params.bootstrap == Bootstrap::none)
    throw ValidationError("vimp: requires a forest grown with bootstrap samples");
  const double base = detail::error_from_scores(forest, detail::oob_scores(forest));
  std::vector<char> used(forest.d(), 0);
  for (const auto& tree : forest.trees)
    for (const auto& node : tree.nodes)
      if (!node.is_terminal()) used[static_cast<std::size_t>(node.variable)] = 1;
  std::vector<double> out(forest.d(), 0.0);
  parallel_for(forest.d(), forest.params.threads, [&](std::size_t k) {
    if (!used[k]) return;
    out[k] = detail::error_from_scores(forest, detail::oob_scores(forest, k)) - base;
  });
  return out;
}

/// Fraction of trees in which training cases i and j share a terminal node.
inline std::vector<std::vector<double>> proximity_matrix(const Forest& forest) {
  const std::size_t n = forest.n();
  const auto terminals = training_terminals(forest);
  std::vector<std::vector<std::uint32_t>> counts(n, std::vector<std::uint32_t>(n, 0));
  for (std::size_t b = 0; b < forest.ntree(); ++b) {
    std::vector<std::vector<std::size_t>> groups(forest.trees[b].terminals.size());
    for (std::size_t i = 0; i < n; ++i) groups[terminals[b][i]].push_back(i);
    for (const auto& g : groups)
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t c = a + 1; c < g.size(); ++c) ++counts[g[a]][g[c]];
  }
  std::vector<std::vector<double>> prox(n, std::vector<double>(n, 1.0));
  const double B = static_cast<double>(forest.ntree());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) prox[i][j] = prox[j][i] = counts[i][j] / B;
  return prox;
}

/// Grows all trees of a forest over `training`. Tree b draws its bootstrap
/// sample and grows from the stream (seed, b). Optional per-tree draws are
/// collected for missing-data mode.
inline Forest grow_forest(const SurvivalDataset& training, std::vector<double> outcome_time,
                          std::vector<int> outcome_status, const FitParams& params,
                          std::vector<std::vector<CellDraw>>* draws = nullptr) {
  if (params.ntree < 1) throw ValidationError("ntree must be at least 1");
  params.grow.validate(training.d());
  Forest forest;
  forest.params = params;
  forest.training = training;
  forest.outcome_time = std::move(outcome_time);
  forest.outcome_status = std::move(outcome_status);
  forest.trees.resize(params.ntree);
  if (draws) draws->assign(params.ntree, {});
  parallel_for(params.ntree, params.threads, [&](std::size_t b) {
    Rng rng(params.seed, {static_cast<std::uint64_t>(Stream::tree), b});
    const auto inbag = draw_inbag(training.n(), params.bootstrap, rng);
    forest.trees[b] = grow_tree(training, inbag, params.grow, rng, draws ? &(*draws)[b] : nullptr);
    forest.trees[b].seed = derive_seed(params.seed, {static_cast<std::uint64_t>(Stream::tree), b});
  });
  refresh_caches(forest);
  return forest;
}

/// Fills a FitReport from a grown forest (OOB error, OOB mortality, VIMP).
inline FitReport summarize_fit(const Forest& forest) {
  FitReport report;
  report.ntree = forest.ntree();
  report.oob_mortality.assign(forest.n(), std::nullopt);
  if (forest.params.bootstrap == Bootstrap::none) {
    report.oob_excluded = forest.n();
    return report;
  }
  const auto scores = detail::oob_scores(forest);
  report.oob_excluded = scores.excluded;
  try {
    report.oob_error = detail::error_from_scores(forest, scores);
  } catch (const NoPermissiblePairs&) {
    report.oob_error.reset();
  }
  for (std::size_t i = 0; i < forest.n(); ++i)
    if (scores.predicted[i]) report.oob_mortality[i] = oob_mortality(forest, i);
  if (forest.params.compute_vimp) report.vimp = vimp(forest);
  return report;
}

/// Fits a forest on complete data.
inline std::pair<Forest, FitReport> fit(const SurvivalDataset& ds, const FitParams& params) {
  const auto start = std::chrono::steady_clock::now();
  ds.validate();
  if (!ds.complete()) throw DataError("fit: dataset has missing values; use the imputation routines");
  if (ds.deaths() == 0) throw DataError("fit: dataset has no deaths");
  if (params.grow.missing_data) throw ValidationError("fit: missing-data mode is driven by the imputation routines");
  Forest forest = grow_forest(ds, ds.times(), ds.statuses(), params);
  FitReport report = summarize_fit(forest);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(forest), std::move(report)};
}

}  // namespace rsf
