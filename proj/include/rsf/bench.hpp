#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "rsf/dataset.hpp"
#include "rsf/forest.hpp"
#include "rsf/rng.hpp"
#include "rsf/splitting.hpp"
#include "rsf/survstat.hpp"

namespace rsf {

struct BenchRow {
  SplitRule rule = SplitRule::logrank;
  std::size_t replicate = 0;
  std::optional<double> error;  // empty when the OOB cases have no permissible pair
  std::size_t oob_cases = 0;
};

/// Bootstrap-replicate error protocol: every replicate fits each rule on a
/// bootstrap sample of the rows and scores ensemble mortality on the rows
/// left out of that sample. All rules of a replicate share its sample and
/// forest seed.
inline std::vector<BenchRow> bench(const SurvivalDataset& ds, const std::vector<SplitRule>& rules,
                                   std::size_t replicates, const FitParams& base) {
  ds.validate();
  if (!ds.complete()) throw DataError("bench: dataset has missing values");
  if (replicates < 1) throw ValidationError("replicates must be at least 1");
  if (rules.empty()) throw ValidationError("bench: no split rules");
  std::vector<BenchRow> rows;
  for (std::size_t r = 0; r < replicates; ++r) {
    Rng rng(base.seed, {static_cast<std::uint64_t>(Stream::bench), r});
    const auto counts = draw_inbag(ds.n(), Bootstrap::by_case, rng);
    std::vector<std::size_t> sample, held_out;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      for (int c = 0; c < counts[i]; ++c) sample.push_back(i);
      if (counts[i] == 0) held_out.push_back(i);
    }
    const auto train = subset_rows(ds, sample);
    const auto test = subset_rows(ds, held_out);
    for (SplitRule rule : rules) {
      FitParams params = base;
      params.grow.rule = rule;
      params.grow.missing_data = false;
      params.compute_vimp = false;
      params.seed = derive_seed(base.seed, {static_cast<std::uint64_t>(Stream::bench), r, 1});
      BenchRow row{rule, r, std::nullopt, held_out.size()};
      if (train.deaths() > 0 && !held_out.empty()) {
        const Forest forest = grow_forest(train, train.times(), train.statuses(), params);
        std::vector<double> predicted(test.n());
        parallel_for(test.n(), params.threads, [&](std::size_t i) {
          predicted[i] = mortality(forest, case_covariates(test, i));
        });
        try {
          row.error = prediction_error(predicted, test.times(), test.statuses());
        } catch (const NoPermissiblePairs&) {
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace rsf
