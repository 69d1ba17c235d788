#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rsf/rng.hpp"
#include "rsf/survstat.hpp"

namespace rsf {

enum class SplitRule { logrank, conserve, logrankscore, logrankrandom };

inline const char* to_string(SplitRule rule) {
  switch (rule) {
    case SplitRule::logrank: return "logrank";
    case SplitRule::conserve: return "conserve";
    case SplitRule::logrankscore: return "logrankscore";
    case SplitRule::logrankrandom: return "logrankrandom";
  }
  return "?";
}

inline std::optional<SplitRule> parse_split_rule(std::string_view s) {
  if (s == "logrank") return SplitRule::logrank;
  if (s == "conserve") return SplitRule::conserve;
  if (s == "logrankscore") return SplitRule::logrankscore;
  if (s == "logrankrandom") return SplitRule::logrankrandom;
  return std::nullopt;
}

inline constexpr std::string_view kSplitRuleNames = "logrank, conserve, logrankscore, logrankrandom";

/// Rule value marking a split whose statistic is undefined.
inline constexpr double kInadmissible = -std::numeric_limits<double>::infinity();

/// The in-bag cases of one node. Entry e is dataset case cases[e] carried
/// with bootstrap multiplicity weight[e]. columns[k] holds the node's values
/// of variable k, one per entry; only columns that will be split on need to
/// be loaded.
struct NodeSample {
  std::vector<std::size_t> cases;
  std::vector<int> weight;
  std::vector<double> time;
  std::vector<int> status;
  std::vector<std::vector<double>> columns;

  std::size_t size() const { return time.size(); }

  double total_weight() const { return std::accumulate(weight.begin(), weight.end(), 0.0); }

  std::span<const double> column(std::size_t k) const {
    if (k >= columns.size() || columns[k].size() != size())
      throw std::invalid_argument("NodeSample: column " + std::to_string(k) + " not loaded");
    return columns[k];
  }

  /// Distinct death times among the entries, multiplicity ignored.
  std::size_t unique_death_times() const {
    std::vector<double> deaths;
    for (std::size_t e = 0; e < size(); ++e)
      if (status[e] == 1) deaths.push_back(time[e]);
    std::sort(deaths.begin(), deaths.end());
    return static_cast<std::size_t>(std::unique(deaths.begin(), deaths.end()) - deaths.begin());
  }

  /// Convenience constructor for whole datasets and tests.
  static NodeSample from(std::vector<double> times, std::vector<int> status, std::vector<std::vector<double>> columns,
                         std::vector<int> weights = {}) {
    NodeSample node;
    node.time = std::move(times);
    node.status = std::move(status);
    node.columns = std::move(columns);
    node.cases.resize(node.time.size());
    std::iota(node.cases.begin(), node.cases.end(), 0);
    node.weight = weights.empty() ? std::vector<int>(node.time.size(), 1) : std::move(weights);
    return node;
  }
};

struct SplitCandidate {
  std::size_t variable = 0;
  double threshold = 0;  // x <= threshold goes left
  double value = 0;
  SplitRule rule = SplitRule::logrank;
};

namespace detail {

/// Distinct death times of a node with weighted risk and death counts.
struct RiskTable {
  std::vector<double> death_times;
  std::vector<double> at_risk;
  std::vector<double> deaths;
  std::vector<std::size_t> risk_end;  // per entry: number of death times <= its time
  std::vector<std::size_t> death_index;  // per entry: index of its death time, or npos

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit RiskTable(const NodeSample& node) {
    for (std::size_t e = 0; e < node.size(); ++e)
      if (node.status[e] == 1) death_times.push_back(node.time[e]);
    std::sort(death_times.begin(), death_times.end());
    death_times.erase(std::unique(death_times.begin(), death_times.end()), death_times.end());
    const std::size_t m = death_times.size();
    at_risk.assign(m, 0.0);
    deaths.assign(m, 0.0);
    risk_end.resize(node.size());
    death_index.assign(node.size(), npos);
    std::vector<double> diff(m + 1, 0.0);
    for (std::size_t e = 0; e < node.size(); ++e) {
      const auto r = static_cast<std::size_t>(
          std::upper_bound(death_times.begin(), death_times.end(), node.time[e]) - death_times.begin());
      risk_end[e] = r;
      diff[0] += node.weight[e];
      diff[r] -= node.weight[e];
      if (node.status[e] == 1) {
        death_index[e] = r - 1;
        deaths[r - 1] += node.weight[e];
      }
    }
    double running = 0;
    for (std::size_t l = 0; l < m; ++l) {
      running += diff[l];
      at_risk[l] = running;
    }
  }

  /// Nelson-Aalen value at each entry's own time.
  std::vector<double> entry_hazard() const {
    std::vector<double> cumulative(death_times.size() + 1, 0.0);
    for (std::size_t l = 0; l < death_times.size(); ++l) cumulative[l + 1] = cumulative[l] + deaths[l] / at_risk[l];
    std::vector<double> out(risk_end.size());
    for (std::size_t e = 0; e < risk_end.size(); ++e) out[e] = cumulative[risk_end[e]];
    return out;
  }
};

inline double logrank_from_left(const RiskTable& table, std::span<const double> left_at_risk,
                                std::span<const double> left_deaths) {
  double numerator = 0, variance = 0;
  for (std::size_t l = 0; l < table.death_times.size(); ++l) {
    const double y = table.at_risk[l], d = table.deaths[l];
    const double share = left_at_risk[l] / y;
    numerator += left_deaths[l] - share * d;
    if (y > 1) variance += share * (1.0 - share) * ((y - d) / (y - 1.0)) * d;
  }
  if (!(variance > 0)) return kInadmissible;
  return std::abs(numerator) / std::sqrt(variance);
}

inline std::vector<double> logrank_scores(const NodeSample& node, const RiskTable& table) {
  auto scores = table.entry_hazard();
  for (std::size_t e = 0; e < node.size(); ++e) scores[e] = node.status[e] - scores[e];
  return scores;
}

struct ScoreMoments {
  double n = 0, mean = 0, variance = 0;
};

inline ScoreMoments score_moments(const NodeSample& node, std::span<const double> scores) {
  ScoreMoments m;
  double sum = 0;
  for (std::size_t e = 0; e < node.size(); ++e) {
    m.n += node.weight[e];
    sum += node.weight[e] * scores[e];
  }
  m.mean = sum / m.n;
  double ss = 0;
  for (std::size_t e = 0; e < node.size(); ++e) ss += node.weight[e] * (scores[e] - m.mean) * (scores[e] - m.mean);
  m.variance = m.n > 1 ? ss / (m.n - 1) : 0.0;
  return m;
}

inline double score_statistic(const ScoreMoments& m, double n_left, double left_sum) {
  const double denom = n_left * (1.0 - n_left / m.n) * m.variance;
  if (!(denom > 0)) return kInadmissible;
  return std::abs(left_sum - n_left * m.mean) / std::sqrt(denom);
}

/// Entry order used by the conservation measure: time, deaths before
/// censored cases at a tied time, then entry index.
inline std::vector<std::size_t> conservation_order(const NodeSample& node) {
  std::vector<std::size_t> order(node.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (node.time[a] != node.time[b]) return node.time[a] < node.time[b];
    if (node.status[a] != node.status[b]) return node.status[a] > node.status[b];
    return a < b;
  });
  return order;
}

struct DaughterExcursion {
  double total = 0;      // sum of |S_l| over l = 1 .. n_j - 1
  double final_sum = 0;  // S_{n_j}, zero by conservation of events
};

/// Prefix-sum excursions of one daughter, given the node entries in
/// conservation order and a membership predicate. Copies of a case are
/// consecutive elements.
template <typename InDaughter>
DaughterExcursion daughter_excursion(const NodeSample& node, std::span<const std::size_t> order, InDaughter in) {
  // Nelson-Aalen over the daughter.
  double at_risk = 0;
  for (std::size_t e : order)
    if (in(e)) at_risk += node.weight[e];
  DaughterExcursion out;
  if (at_risk == 0) return out;
  const double total_elements = at_risk;
  double hazard = 0, partial = 0, counted = 0;
  std::size_t p = 0;
  while (p < order.size()) {
    const double t = node.time[order[p]];
    std::size_t q = p;
    double deaths = 0, leaving = 0;
    for (; q < order.size() && node.time[order[q]] == t; ++q) {
      const std::size_t e = order[q];
      if (!in(e)) continue;
      leaving += node.weight[e];
      if (node.status[e] == 1) deaths += node.weight[e];
    }
    if (deaths > 0) hazard += deaths / at_risk;
    for (std::size_t r = p; r < q; ++r) {
      const std::size_t e = order[r];
      if (!in(e)) continue;
      const double step = hazard - node.status[e];
      for (int c = 0; c < node.weight[e]; ++c) {
        partial += step;
        counted += 1;
        if (counted < total_elements) out.total += std::abs(partial);
      }
    }
    at_risk -= leaving;
    p = q;
  }
  out.final_sum = partial;
  return out;
}

inline void check_conserved(const DaughterExcursion& ex, double deaths) {
  // Conservation of events: the daughter's last partial sum vanishes.
  if (std::abs(ex.final_sum) > 1e-9 * std::max(1.0, deaths))
    throw std::logic_error("conserve_measure: conservation of events violated");
}

inline void require_two_daughters(const NodeSample& node, std::span<const double> x, double threshold) {
  bool left = false, right = false;
  for (std::size_t e = 0; e < node.size(); ++e) (x[e] <= threshold ? left : right) = true;
  if (!left || !right) throw std::invalid_argument("split must produce two nonempty daughters");
}

}  // namespace detail

/// Two-sample log-rank statistic |L| / sqrt(V) for the split x_k <= c,
/// multiplicity weighted. Returns kInadmissible when V = 0.
inline double logrank_stat(const NodeSample& node, std::size_t k, double c) {
  const auto x = node.column(k);
  detail::require_two_daughters(node, x, c);
  const detail::RiskTable table(node);
  std::vector<double> y1(table.death_times.size(), 0.0), d1(table.death_times.size(), 0.0);
  for (std::size_t e = 0; e < node.size(); ++e) {
    if (x[e] > c) continue;
    for (std::size_t l = 0; l < table.risk_end[e]; ++l) y1[l] += node.weight[e];
    if (table.death_index[e] != detail::RiskTable::npos) d1[table.death_index[e]] += node.weight[e];
  }
  return detail::logrank_from_left(table, y1, d1);
}

/// Standardized sum of log-rank scores over the left daughter. The score of
/// an entry is delta_i minus the node's Nelson-Aalen hazard at T_i.
inline double logrank_score_stat(const NodeSample& node, std::size_t k, double c) {
  const auto x = node.column(k);
  detail::require_two_daughters(node, x, c);
  const detail::RiskTable table(node);
  const auto scores = detail::logrank_scores(node, table);
  const auto moments = detail::score_moments(node, scores);
  double n_left = 0, left_sum = 0;
  for (std::size_t e = 0; e < node.size(); ++e) {
    if (x[e] > c) continue;
    n_left += node.weight[e];
    left_sum += node.weight[e] * scores[e];
  }
  return detail::score_statistic(moments, n_left, left_sum);
}

struct ConserveDetail {
  double measure = 0;
  double left_final = 0;
  double right_final = 0;
};

inline ConserveDetail conserve_detail(const NodeSample& node, std::size_t k, double c) {
  const auto x = node.column(k);
  detail::require_two_daughters(node, x, c);
  const auto order = detail::conservation_order(node);
  const auto left = detail::daughter_excursion(node, order, [&](std::size_t e) { return x[e] <= c; });
  const auto right = detail::daughter_excursion(node, order, [&](std::size_t e) { return x[e] > c; });
  double left_deaths = 0, right_deaths = 0;
  for (std::size_t e = 0; e < node.size(); ++e)
    if (node.status[e] == 1) (x[e] <= c ? left_deaths : right_deaths) += node.weight[e];
  detail::check_conserved(left, left_deaths);
  detail::check_conserved(right, right_deaths);
  return {(left.total + right.total) / node.total_weight(), left.final_sum, right.final_sum};
}

/// Mean absolute prefix deviation of the daughters from conservation of
/// events; smaller is better.
inline double conserve_measure(const NodeSample& node, std::size_t k, double c) {
  return conserve_detail(node, k, c).measure;
}

namespace detail {

inline bool rule_maximizes(SplitRule rule) { return rule != SplitRule::conserve; }

inline bool better_split(const SplitCandidate& a, const std::optional<SplitCandidate>& best) {
  if (!best) return true;
  if (a.value != best->value) return rule_maximizes(a.rule) ? a.value > best->value : a.value < best->value;
  if (a.variable != best->variable) return a.variable < best->variable;
  return a.threshold < best->threshold;
}

inline double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2;
  return mid < hi ? mid : lo;
}

/// Walks the thresholds of one variable in increasing order, tracking the
/// unique-death-time counts of both daughters. visit(threshold, boundary)
/// is called for each admissible threshold after the entries up to
/// `boundary` (in x order) have been moved left; move(e) is called as
/// each entry crosses.
template <typename Move, typename Visit>
void scan_thresholds(const NodeSample& node, const RiskTable& table, std::span<const double> x, std::size_t d0,
                     Move&& move, Visit&& visit) {
  std::vector<std::size_t> order(node.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  const std::size_t m = table.death_times.size();
  std::vector<int> total_cases(m, 0), left_cases(m, 0);
  for (std::size_t e = 0; e < node.size(); ++e)
    if (table.death_index[e] != RiskTable::npos) ++total_cases[table.death_index[e]];
  std::size_t left_unique = 0;
  std::size_t right_unique = m;

  for (std::size_t p = 0; p + 1 < order.size();) {
    const double v = x[order[p]];
    for (; p < order.size() && x[order[p]] == v; ++p) {
      const std::size_t e = order[p];
      move(e);
      const std::size_t l = table.death_index[e];
      if (l == RiskTable::npos) continue;
      if (left_cases[l]++ == 0) ++left_unique;
      if (left_cases[l] == total_cases[l]) --right_unique;
    }
    if (p >= order.size()) break;
    if (left_unique >= d0 && right_unique >= d0) visit(midpoint(v, x[order[p]]), p);
  }
}

}  // namespace detail

/// Best admissible split of `node` over `candidate_vars`, or nullopt when no
/// split leaves at least d0 unique death times in each daughter. Rule values
/// are maximized (log-rank, log-rank score, random log-rank) or minimized
/// (conservation); ties go to the lowest variable index, then the lowest
/// threshold. Only logrankrandom consumes `rng`.
inline std::optional<SplitCandidate> best_split(const NodeSample& node, std::span<const std::size_t> candidate_vars,
                                                SplitRule rule, std::size_t d0, Rng& rng) {
  if (candidate_vars.empty()) throw std::invalid_argument("best_split: no candidate variables");
  if (d0 < 1) throw std::invalid_argument("best_split: d0 must be at least 1");
  if (node.unique_death_times() < 2 * d0) return std::nullopt;

  const detail::RiskTable table(node);
  const std::size_t m = table.death_times.size();
  std::optional<SplitCandidate> best;

  std::vector<double> scores;
  detail::ScoreMoments moments;
  std::vector<std::size_t> time_order;
  if (rule == SplitRule::logrankscore) {
    scores = detail::logrank_scores(node, table);
    moments = detail::score_moments(node, scores);
  } else if (rule == SplitRule::conserve) {
    time_order = detail::conservation_order(node);
  }

  for (std::size_t k : candidate_vars) {
    const auto x = node.column(k);
    const auto offer = [&](double threshold, double value) {
      if (value == kInadmissible || std::isnan(value)) return;
      SplitCandidate cand{k, threshold, value, rule};
      if (detail::better_split(cand, best)) best = cand;
    };

    switch (rule) {
      case SplitRule::logrank: {
        std::vector<double> y1(m, 0.0), d1(m, 0.0);
        detail::scan_thresholds(
            node, table, x, d0,
            [&](std::size_t e) {
              const double w = node.weight[e];
              for (std::size_t l = 0; l < table.risk_end[e]; ++l) y1[l] += w;
              if (table.death_index[e] != detail::RiskTable::npos) d1[table.death_index[e]] += w;
            },
            [&](double c, std::size_t) { offer(c, detail::logrank_from_left(table, y1, d1)); });
        break;
      }
      case SplitRule::logrankscore: {
        double n_left = 0, left_sum = 0;
        detail::scan_thresholds(
            node, table, x, d0,
            [&](std::size_t e) {
              n_left += node.weight[e];
              left_sum += node.weight[e] * scores[e];
            },
            [&](double c, std::size_t) { offer(c, detail::score_statistic(moments, n_left, left_sum)); });
        break;
      }
      case SplitRule::conserve: {
        const double n = node.total_weight();
        detail::scan_thresholds(
            node, table, x, d0, [](std::size_t) {},
            [&](double c, std::size_t) {
              const auto left = detail::daughter_excursion(node, time_order, [&](std::size_t e) { return x[e] <= c; });
              const auto right = detail::daughter_excursion(node, time_order, [&](std::size_t e) { return x[e] > c; });
              double left_deaths = 0, right_deaths = 0;
              for (std::size_t e = 0; e < node.size(); ++e)
                if (node.status[e] == 1) (x[e] <= c ? left_deaths : right_deaths) += node.weight[e];
              detail::check_conserved(left, left_deaths);
              detail::check_conserved(right, right_deaths);
              offer(c, (left.total + right.total) / n);
            });
        break;
      }
      case SplitRule::logrankrandom: {
        std::vector<double> admissible;
        detail::scan_thresholds(
            node, table, x, d0, [](std::size_t) {}, [&](double c, std::size_t) { admissible.push_back(c); });
        if (admissible.empty()) break;
        const double c = admissible[rng.below(admissible.size())];
        offer(c, logrank_stat(node, k, c));
        break;
      }
    }
  }
  return best;
}

}  // namespace rsf
