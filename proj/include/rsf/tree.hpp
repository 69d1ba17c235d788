#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rsf/dataset.hpp"
#include "rsf/rng.hpp"
#include "rsf/splitting.hpp"
#include "rsf/survstat.hpp"

namespace rsf {

struct GrowParams {
  std::size_t d0 = 3;    // minimum unique death times per terminal node
  std::size_t mtry = 0;  // candidate variables per node; 0 means ceil(sqrt(d))
  SplitRule rule = SplitRule::logrank;
  bool missing_data = false;  // impute missing cells inside each node while growing
  bool keep_node_distributions = false;  // retain routing distributions even for complete data

  std::size_t resolved_mtry(std::size_t d) const {
    const std::size_t p = mtry > 0 ? mtry : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
    return std::clamp<std::size_t>(p, 1, std::max<std::size_t>(d, 1));
  }

  void validate(std::size_t d) const {
    if (d0 < 1) throw ValidationError("nodesize (d0) must be at least 1");
    if (mtry > d) throw ValidationError("mtry must not exceed the number of variables");
  }
};

/// Weighted empirical distribution of observed values (ascending, distinct).
struct ValuePool {
  std::vector<double> values;
  std::vector<int> weights;

  bool empty() const { return values.empty(); }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (int w : weights) t += w;
    return t;
  }

  double draw(Rng& rng) const {
    auto r = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total())));
    for (std::size_t j = 0; j < values.size(); ++j) {
      r -= weights[j];
      if (r < 0) return values[j];
    }
    return values.back();
  }

  /// Probability mass at or below c.
  double mass_at_or_below(double c) const {
    double below = 0;
    for (std::size_t j = 0; j < values.size() && values[j] <= c; ++j) below += weights[j];
    return below / static_cast<double>(total());
  }

  static ValuePool build(std::vector<std::pair<double, int>> items) {
    std::sort(items.begin(), items.end());
    ValuePool pool;
    for (const auto& [v, w] : items) {
      if (!pool.values.empty() && pool.values.back() == v) {
        pool.weights.back() += w;
      } else {
        pool.values.push_back(v);
        pool.weights.push_back(w);
      }
    }
    return pool;
  }

  bool operator==(const ValuePool&) const = default;
};

struct TreeNode {
  int variable = -1;  // -1 for terminal nodes
  double threshold = 0;
  int left = -1;
  int right = -1;
  int terminal = -1;  // index into SurvivalTree::terminals for terminal nodes
  ValuePool route;    // split-variable distribution, kept when the tree keeps node distributions

  bool is_terminal() const { return terminal >= 0; }
  bool operator==(const TreeNode&) const = default;
};

struct TerminalNode {
  StepCHF chf;
  std::vector<std::size_t> members;  // in-bag training cases
  std::vector<int> multiplicity;
  // Columns whose members had no observed value; the pool inherited from the
  // nearest ancestor that did.
  std::vector<std::pair<std::size_t, ValuePool>> fallback;

  // Derived on fit/load: sum of the CHF over the event grid, and over all
  // training times.
  double grid_sum = 0;
  double mortality_sum = 0;
};

struct SurvivalTree {
  std::vector<TreeNode> nodes;
  std::vector<TerminalNode> terminals;
  std::vector<int> inbag;  // multiplicity per training case; 0 = out of bag
  std::uint64_t seed = 0;
  bool node_distributions = false;
};

/// A value imputed for a missing cell of an in-bag case at its terminal node.
struct CellDraw {
  std::size_t row;
  std::size_t column;
  double value;
};

namespace detail {

struct WorkItem {
  int node;
  std::vector<std::size_t> cases;
  std::vector<int> weight;
  std::vector<ValuePool> inherited;  // per column, missing-data mode only
};

inline ValuePool column_pool(const SurvivalDataset& ds, std::size_t column, std::span<const std::size_t> cases,
                             std::span<const int> weight) {
  std::vector<std::pair<double, int>> items;
  for (std::size_t e = 0; e < cases.size(); ++e)
    if (const auto v = ds.cell(cases[e], column)) items.emplace_back(*v, weight[e]);
  return ValuePool::build(std::move(items));
}

inline std::vector<std::size_t> draw_candidates(std::size_t d, std::size_t p, Rng& rng) {
  std::vector<std::size_t> vars(d);
  for (std::size_t k = 0; k < d; ++k) vars[k] = k;
  for (std::size_t j = 0; j < p; ++j) std::swap(vars[j], vars[j + rng.below(d - j)]);
  vars.resize(p);
  return vars;
}

}  // namespace detail

/// Grows one survival tree from the in-bag multiset `inbag` (multiplicity per
/// training case). Nodes split until no admissible split remains; each
/// terminal keeps its in-bag members and their Nelson-Aalen CHF. Growth only
/// reads in-bag cases.
///
/// With params.missing_data, every missing in-bag cell in a node (covariates
/// and outcomes) is drawn from the node's observed in-bag values before the
/// split is chosen, then forgotten in the daughters. The draws made at each
/// case's terminal node are appended to `draws`.
inline SurvivalTree grow_tree(const SurvivalDataset& ds, std::span<const int> inbag, const GrowParams& params, Rng& rng,
                              std::vector<CellDraw>* draws = nullptr) {
  const std::size_t n = ds.n(), d = ds.d();
  if (inbag.size() != n) throw std::invalid_argument("grow_tree: inbag length differs from case count");
  params.validate(d);
  const bool missing = params.missing_data;
  const std::size_t p = params.resolved_mtry(d);

  SurvivalTree tree;
  tree.inbag.assign(inbag.begin(), inbag.end());
  tree.node_distributions = missing || params.keep_node_distributions;

  detail::WorkItem root{0, {}, {}, {}};
  std::size_t observed_deaths = 0, missing_status = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (inbag[i] <= 0) continue;
    root.cases.push_back(i);
    root.weight.push_back(inbag[i]);
    if (!ds.status[i])
      ++missing_status;
    else if (*ds.status[i] == 1)
      ++observed_deaths;
  }
  if (root.cases.empty()) throw DataError("grow_tree: empty in-bag sample");
  if (observed_deaths == 0 && (!missing || missing_status == 0)) throw DataError("grow_tree: in-bag sample has no deaths");
  if (!missing && !ds.complete()) {
    for (std::size_t i : root.cases)
      for (std::size_t c = 0; c < ds.column_count(); ++c)
        if (!ds.cell(i, c)) throw DataError("grow_tree: missing value in complete-data mode");
  }
  if (missing) {
    // Columns with no observed in-bag value fall back to every observed value in the column.
    const std::vector<int> ones(n, 1);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (std::size_t c = 0; c < ds.column_count(); ++c) root.inherited.push_back(detail::column_pool(ds, c, all, ones));
  }

  tree.nodes.emplace_back();
  std::vector<detail::WorkItem> stack;
  stack.push_back(std::move(root));

  while (!stack.empty()) {
    detail::WorkItem item = std::move(stack.back());
    stack.pop_back();
    const std::size_t m = item.cases.size();

    NodeSample node;
    node.cases = item.cases;
    node.weight = item.weight;
    node.time.resize(m);
    node.status.resize(m);
    node.columns.assign(d, {});
    std::vector<ValuePool> effective;
    std::vector<CellDraw> node_draws;

    if (missing) {
      effective.resize(ds.column_count());
      for (std::size_t c = 0; c < ds.column_count(); ++c) {
        ValuePool own = detail::column_pool(ds, c, item.cases, item.weight);
        effective[c] = own.empty() ? item.inherited[c] : std::move(own);
      }
      const auto working = [&](std::size_t e, std::size_t c) -> double {
        if (const auto v = ds.cell(item.cases[e], c)) return *v;
        if (effective[c].empty()) throw DataError("grow_tree: column '" + ds.column_name(c) + "' has no observed values");
        const double v = effective[c].draw(rng);
        node_draws.push_back({item.cases[e], c, v});
        return v;
      };
      for (std::size_t c = 0; c < ds.column_count(); ++c) {
        for (std::size_t e = 0; e < m; ++e) {
          const double v = working(e, c);
          if (c < d) {
            if (node.columns[c].empty()) node.columns[c].resize(m);
            node.columns[c][e] = v;
          } else if (c == ds.time_column()) {
            node.time[e] = v;
          } else {
            node.status[e] = static_cast<int>(v);
          }
        }
      }
    } else {
      for (std::size_t e = 0; e < m; ++e) {
        node.time[e] = *ds.time[item.cases[e]];
        node.status[e] = *ds.status[item.cases[e]];
      }
    }

    std::optional<SplitCandidate> split;
    if (node.unique_death_times() >= 2 * params.d0) {
      const auto candidates = detail::draw_candidates(d, p, rng);
      if (!missing) {
        for (std::size_t k : candidates) {
          node.columns[k].resize(m);
          for (std::size_t e = 0; e < m; ++e) node.columns[k][e] = *ds.x[k][item.cases[e]];
        }
      }
      split = best_split(node, candidates, params.rule, params.d0, rng);
    }

    if (!split) {
      TerminalNode term;
      term.members = item.cases;
      term.multiplicity = item.weight;
      term.chf = nelson_aalen(node.time, node.status, node.weight);
      if (missing) {
        for (std::size_t c = 0; c < ds.column_count(); ++c) {
          bool observed = false;
          for (std::size_t i : item.cases) observed = observed || ds.cell(i, c).has_value();
          if (!observed) term.fallback.emplace_back(c, effective[c]);
        }
        if (draws) draws->insert(draws->end(), node_draws.begin(), node_draws.end());
      }
      tree.nodes[static_cast<std::size_t>(item.node)].terminal = static_cast<int>(tree.terminals.size());
      tree.terminals.push_back(std::move(term));
      continue;
    }

    const std::size_t k = split->variable;
    detail::WorkItem left{static_cast<int>(tree.nodes.size()), {}, {}, {}};
    detail::WorkItem right{static_cast<int>(tree.nodes.size() + 1), {}, {}, {}};
    const auto values = node.column(k);
    for (std::size_t e = 0; e < m; ++e) {
      auto& side = values[e] <= split->threshold ? left : right;
      side.cases.push_back(item.cases[e]);
      side.weight.push_back(item.weight[e]);
    }
    {
      TreeNode& parent = tree.nodes[static_cast<std::size_t>(item.node)];
      parent.variable = static_cast<int>(k);
      parent.threshold = split->threshold;
      parent.left = left.node;
      parent.right = right.node;
      if (tree.node_distributions) {
        if (missing) {
          parent.route = effective[k];
        } else {
          std::vector<std::pair<double, int>> items;
          for (std::size_t e = 0; e < m; ++e) items.emplace_back(values[e], item.weight[e]);
          parent.route = ValuePool::build(std::move(items));
        }
      }
    }
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    if (missing) {
      left.inherited = effective;
      right.inherited = std::move(effective);
    }
    stack.push_back(std::move(right));
    stack.push_back(std::move(left));
  }
  return tree;
}

/// Terminal node reached by a complete covariate vector.
inline std::size_t find_terminal(const SurvivalTree& tree, std::span<const double> x) {
  std::size_t id = 0;
  while (!tree.nodes[id].is_terminal()) {
    const auto& node = tree.nodes[id];
    id = static_cast<std::size_t>(x[static_cast<std::size_t>(node.variable)] <= node.threshold ? node.left : node.right);
  }
  return static_cast<std::size_t>(tree.nodes[id].terminal);
}

/// Terminal node reached by a covariate vector that may have missing cells.
/// At a split on a missing coordinate a routing value is drawn from the
/// node's stored distribution, which requires `rng` and a tree grown with
/// node distributions.
inline std::size_t find_terminal(const SurvivalTree& tree, std::span<const std::optional<double>> x, Rng* rng) {
  std::size_t id = 0;
  while (!tree.nodes[id].is_terminal()) {
    const auto& node = tree.nodes[id];
    const auto& v = x[static_cast<std::size_t>(node.variable)];
    double value;
    if (v) {
      value = *v;
    } else {
      if (!rng) throw ValidationError("missing covariate value requires a random stream for routing");
      if (!tree.node_distributions || node.route.empty())
        throw ValidationError("missing covariate value: tree was not grown with node distributions");
      value = node.route.draw(*rng);
    }
    id = static_cast<std::size_t>(value <= node.threshold ? node.left : node.right);
  }
  return static_cast<std::size_t>(tree.nodes[id].terminal);
}

inline const StepCHF& tree_chf(const SurvivalTree& tree, std::span<const std::optional<double>> x, Rng* rng = nullptr) {
  return tree.terminals[find_terminal(tree, x, rng)].chf;
}

/// Observed in-bag values of `column` among a terminal's members, or the
/// inherited pool when none were observed.
inline ValuePool terminal_pool(const SurvivalTree& tree, std::size_t terminal, std::size_t column,
                               const SurvivalDataset& training) {
  const auto& term = tree.terminals[terminal];
  ValuePool pool = detail::column_pool(training, column, term.members, term.multiplicity);
  if (!pool.empty()) return pool;
  for (const auto& [c, fallback] : term.fallback)
    if (c == column) return fallback;
  return pool;
}

}  // namespace rsf
