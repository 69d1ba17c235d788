#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsf/dataset.hpp"

namespace rsf {

/// Right-continuous nondecreasing step function. H(t) is the value at the
/// largest grid time <= t, and 0 before the first grid time.
struct StepCHF {
  std::vector<double> grid;
  std::vector<double> values;

  bool empty() const { return grid.empty(); }

  double operator()(double t) const {
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    if (it == grid.begin()) return 0.0;
    return values[static_cast<std::size_t>(it - grid.begin()) - 1];
  }

  /// acc[l] += scale * H(points[l]) for ascending `points`.
  void accumulate(std::span<const double> points, std::span<double> acc, double scale = 1.0) const {
    std::size_t g = 0;
    double current = 0.0;
    for (std::size_t l = 0; l < points.size(); ++l) {
      while (g < grid.size() && grid[g] <= points[l]) current = values[g++];
      acc[l] += scale * current;
    }
  }

  /// Sum of H over ascending `points`.
  double sum_over(std::span<const double> points) const {
    std::size_t g = 0;
    double current = 0.0, total = 0.0;
    for (double p : points) {
      while (g < grid.size() && grid[g] <= p) current = values[g++];
      total += current;
    }
    return total;
  }

  bool operator==(const StepCHF&) const = default;
};

/// Nelson-Aalen cumulative hazard. Weights are bootstrap multiplicities
/// (default 1). Cases censored at a death time count in that time's risk set.
inline StepCHF nelson_aalen(std::span<const double> times, std::span<const int> status,
                            std::span<const int> weights = {}) {
  if (times.size() != status.size()) throw std::invalid_argument("nelson_aalen: times and status lengths differ");
  if (!weights.empty() && weights.size() != times.size())
    throw std::invalid_argument("nelson_aalen: weights length differs from times");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0)) throw DataError("nelson_aalen: negative or invalid time");
    const int w = weights.empty() ? 1 : weights[i];
    if (w < 0) throw std::invalid_argument("nelson_aalen: negative weight");
    total += w;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  StepCHF chf;
  double at_risk = total;
  double cumulative = 0;
  for (std::size_t p = 0; p < order.size();) {
    const double t = times[order[p]];
    double deaths = 0, leaving = 0;
    for (; p < order.size() && times[order[p]] == t; ++p) {
      const double w = weights.empty() ? 1.0 : weights[order[p]];
      leaving += w;
      if (status[order[p]] == 1) deaths += w;
    }
    if (deaths > 0) {
      cumulative += deaths / at_risk;
      chf.grid.push_back(t);
      chf.values.push_back(cumulative);
    }
    at_risk -= leaving;
  }
  return chf;
}

/// sum_i w_i H(T_i). Equals the weighted death count when `chf` is the
/// Nelson-Aalen estimate of the same cases.
inline double conservation_sum(const StepCHF& chf, std::span<const double> times, std::span<const int> weights = {}) {
  double total = 0;
  for (std::size_t i = 0; i < times.size(); ++i) total += (weights.empty() ? 1.0 : weights[i]) * chf(times[i]);
  return total;
}

struct ConcordanceResult {
  std::size_t permissible = 0;
  double concordance = 0;
  double c_index = 0;
};

class NoPermissiblePairs : public DataError {
 public:
  NoPermissiblePairs() : DataError("concordance: no permissible pairs") {}
};

/// Harrell's C over all pairs. Larger `predicted` means worse outcome.
/// Pairs whose shorter time is censored are skipped, as are tied-time pairs
/// with no death. Tied-time pairs score 1 or 0.5, never 0.
inline ConcordanceResult concordance(std::span<const double> predicted, std::span<const double> times,
                                     std::span<const int> status) {
  const std::size_t n = times.size();
  if (predicted.size() != n || status.size() != n) throw std::invalid_argument("concordance: length mismatch");
  ConcordanceResult r;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (times[i] != times[j]) {
        const bool i_first = times[i] < times[j];
        const std::size_t a = i_first ? i : j;
        const std::size_t b = i_first ? j : i;
        if (status[a] == 0) continue;
        ++r.permissible;
        if (predicted[a] > predicted[b])
          r.concordance += 1.0;
        else if (predicted[a] == predicted[b])
          r.concordance += 0.5;
      } else {
        if (status[i] == 0 && status[j] == 0) continue;
        ++r.permissible;
        if (status[i] == 1 && status[j] == 1) {
          r.concordance += predicted[i] == predicted[j] ? 1.0 : 0.5;
        } else {
          const std::size_t death = status[i] == 1 ? i : j;
          const std::size_t other = death == i ? j : i;
          r.concordance += predicted[death] > predicted[other] ? 1.0 : 0.5;
        }
      }
    }
  }
  if (r.permissible == 0) throw NoPermissiblePairs();
  r.c_index = r.concordance / static_cast<double>(r.permissible);
  return r;
}

inline double prediction_error(std::span<const double> predicted, std::span<const double> times,
                               std::span<const int> status) {
  return 1.0 - concordance(predicted, times, status).c_index;
}

}  // namespace rsf
