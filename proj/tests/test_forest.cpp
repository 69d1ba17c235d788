#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rsf/dataset.hpp"
#include "rsf/forest.hpp"

using namespace rsf;

namespace {

FitParams params(std::size_t ntree, std::uint64_t seed) {
  FitParams p;
  p.ntree = ntree;
  p.seed = seed;
  return p;
}

std::vector<double> complete_row(const SurvivalDataset& ds, std::size_t i) {
  std::vector<double> x(ds.d());
  for (std::size_t k = 0; k < ds.d(); ++k) x[k] = *ds.x[k][i];
  return x;
}

}  // namespace

TEST(Fit, RootOnlyNoBootstrapGivesNelsonAalen) {
  const auto ds = simulate(60, 2, 1, 0.3, 3);
  auto p = params(1, 1);
  p.bootstrap = Bootstrap::none;
  p.grow.d0 = 1000;
  const auto [forest, report] = fit(ds, p);
  EXPECT_FALSE(report.oob_error.has_value());
  EXPECT_THROW(oob_error(forest), ValidationError);
  const auto t = ds.times();
  const auto s = ds.statuses();
  const auto na = nelson_aalen(t, s);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto chf = ensemble_chf(forest, case_covariates(ds, i));
    for (std::size_t l = 0; l < chf.grid.size(); ++l) ASSERT_DOUBLE_EQ(chf.values[l], na(chf.grid[l]));
    // Root-only trees: mortality equals the total death count.
    ASSERT_NEAR(mortality(forest, case_covariates(ds, i)), static_cast<double>(ds.deaths()), 1e-9);
  }
  const auto prox = proximity_matrix(forest);
  for (const auto& r : prox)
    for (double v : r) ASSERT_EQ(v, 1.0);
}

TEST(Fit, NonBootstrapTreesConserveEvents) {
  const auto ds = simulate(150, 3, 2, 0.3, 5);
  auto p = params(10, 2);
  p.bootstrap = Bootstrap::none;
  const auto [forest, report] = fit(ds, p);
  const auto t = ds.times();
  for (const auto& tree : forest.trees) {
    EXPECT_GT(tree.terminals.size(), 1u);
    double total = 0;
    for (std::size_t i = 0; i < ds.n(); ++i) total += tree.terminals[find_terminal(tree, complete_row(ds, i))].chf(t[i]);
    EXPECT_NEAR(total, static_cast<double>(ds.deaths()), 1e-8);
  }
}

TEST(Fit, OobFractionNearThirtySevenPercent) {
  const auto ds = simulate(312, 1, 1, 0.2, 1);
  const auto [forest, report] = fit(ds, params(200, 4));
  double oob = 0;
  for (const auto& tree : forest.trees) {
    int total = 0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      oob += tree.inbag[i] == 0 ? 1 : 0;
      total += tree.inbag[i];
    }
    ASSERT_EQ(total, 312);
  }
  oob /= 200.0 * 312.0;
  EXPECT_GE(oob, 0.35);
  EXPECT_LE(oob, 0.39);
}

TEST(Fit, EventGridIsStrictlyIncreasingDeathTimes) {
  const auto ds = simulate(80, 2, 0, 0.4, 7);
  const auto [forest, report] = fit(ds, params(5, 1));
  for (std::size_t l = 1; l < forest.event_grid.size(); ++l) ASSERT_LT(forest.event_grid[l - 1], forest.event_grid[l]);
  EXPECT_EQ(forest.event_grid.size(), ds.deaths());
}

TEST(Fit, DeterministicAcrossWorkerCounts) {
  const auto ds = simulate(120, 2, 3, 0.25, 8);
  auto p1 = params(30, 5);
  auto p8 = p1;
  p1.threads = 1;
  p8.threads = 8;
  p1.compute_vimp = p8.compute_vimp = true;
  const auto [f1, r1] = fit(ds, p1);
  const auto [f8, r8] = fit(ds, p8);
  ASSERT_EQ(f1.ntree(), f8.ntree());
  for (std::size_t b = 0; b < f1.ntree(); ++b) {
    ASSERT_EQ(f1.trees[b].nodes, f8.trees[b].nodes);
    ASSERT_EQ(f1.trees[b].inbag, f8.trees[b].inbag);
  }
  EXPECT_EQ(r1.oob_error, r8.oob_error);
  EXPECT_EQ(*r1.vimp, *r8.vimp);
}

TEST(Fit, RejectsMissingData) {
  auto ds = simulate(50, 1, 1, 0.1, 1);
  ds.x[0][3].reset();
  EXPECT_THROW(fit(ds, params(5, 1)), DataError);
}

TEST(OobChf, MatchesIndependentTraversal) {
  const auto ds = simulate(100, 2, 2, 0.3, 10);
  const auto [forest, report] = fit(ds, params(10, 6));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto x = complete_row(ds, i);
    std::vector<double> ref(forest.event_grid.size(), 0.0);
    std::size_t count = 0;
    for (const auto& tree : forest.trees) {
      if (tree.inbag[i] != 0) continue;
      // Walk the node table directly.
      std::size_t id = 0;
      while (tree.nodes[id].terminal < 0) {
        const auto& node = tree.nodes[id];
        id = static_cast<std::size_t>(x[static_cast<std::size_t>(node.variable)] <= node.threshold ? node.left : node.right);
      }
      const auto& chf = tree.terminals[static_cast<std::size_t>(tree.nodes[id].terminal)].chf;
      for (std::size_t l = 0; l < ref.size(); ++l) ref[l] += chf(forest.event_grid[l]);
      ++count;
    }
    ASSERT_EQ(count, forest.oob_count(i));
    if (count == 0) {
      EXPECT_THROW(oob_chf(forest, i), DataError);
      continue;
    }
    const auto chf = oob_chf(forest, i);
    for (std::size_t l = 0; l < ref.size(); ++l) ASSERT_NEAR(chf.values[l], ref[l] / count, 1e-12);
  }
}

TEST(OobChf, SingleTreeEqualsThatTree) {
  const auto ds = simulate(60, 2, 0, 0.2, 2);
  const auto [forest, report] = fit(ds, params(1, 3));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (!forest.is_oob(i, 0)) {
      EXPECT_THROW(oob_chf(forest, i), DataError);
      continue;
    }
    const auto chf = oob_chf(forest, i);
    const auto& tree_h = forest.trees[0].terminals[find_terminal(forest.trees[0], complete_row(ds, i))].chf;
    for (std::size_t l = 0; l < chf.grid.size(); ++l) ASSERT_EQ(chf.values[l], tree_h(chf.grid[l]));
  }
}

TEST(EnsembleChf, NondecreasingForRandomProbes) {
  const auto ds = simulate(150, 3, 2, 0.3, 12);
  const auto [forest, report] = fit(ds, params(20, 1));
  Rng rng(5);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<std::optional<double>> x(ds.d());
    for (auto& v : x) v = rng.uniform() * 1.2 - 0.1;
    const auto chf = ensemble_chf(forest, x);
    ASSERT_GE(chf.values.front(), 0.0);
    for (std::size_t l = 1; l < chf.values.size(); ++l) ASSERT_GE(chf.values[l], chf.values[l - 1]);
  }
}

TEST(EnsembleChf, TwoTreeMeanForInBagCase) {
  const auto ds = simulate(50, 2, 0, 0.2, 13);
  auto p = params(2, 9);
  p.bootstrap = Bootstrap::none;
  const auto [forest, report] = fit(ds, p);
  const auto x = complete_row(ds, 4);
  const auto chf = ensemble_chf(forest, case_covariates(ds, 4));
  const auto& h1 = forest.trees[0].terminals[find_terminal(forest.trees[0], x)].chf;
  const auto& h2 = forest.trees[1].terminals[find_terminal(forest.trees[1], x)].chf;
  for (std::size_t l = 0; l < chf.grid.size(); ++l)
    ASSERT_NEAR(chf.values[l], (h1(chf.grid[l]) + h2(chf.grid[l])) / 2, 1e-15);
}

TEST(Mortality, ExchangeOfSums) {
  const auto ds = simulate(90, 2, 1, 0.3, 14);
  const auto [forest, report] = fit(ds, params(5, 2));
  const auto t = ds.times();
  for (std::size_t i = 0; i < ds.n(); i += 7) {
    const auto x = case_covariates(ds, i);
    // Ensemble CHF summed over training times ...
    const auto chf = ensemble_chf(forest, x);
    double a = 0;
    for (double tj : t) a += chf(tj);
    // ... equals per-tree sums averaged.
    double b = 0;
    for (const auto& tree : forest.trees) {
      const auto& h = tree_chf(tree, x);
      for (double tj : t) b += h(tj);
    }
    b /= static_cast<double>(forest.ntree());
    EXPECT_NEAR(mortality(forest, x), a, 1e-9);
    EXPECT_NEAR(mortality(forest, x), b, 1e-9);
  }
}

TEST(OobError, PureNoiseIsRandomGuessing) {
  const auto ds = simulate(300, 0, 10, 0.2, 15);
  const auto [forest, report] = fit(ds, params(200, 3));
  ASSERT_TRUE(report.oob_error);
  EXPECT_GE(*report.oob_error, 0.42);
  EXPECT_LE(*report.oob_error, 0.58);
}

TEST(OobError, SignalIsRecovered) {
  double total = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto ds = simulate(300, 2, 2, 0.2, seed);
    total += *fit(ds, params(150, seed)).second.oob_error;
  }
  EXPECT_LT(total / 3, 0.45);
}

TEST(Vimp, UnusedVariableIsExactlyZero) {
  auto ds = simulate(120, 2, 0, 0.2, 16);
  ds.names.push_back("constant");
  ds.kinds.push_back(VarKind::integer);
  ds.x.push_back(Column(ds.n(), 1.0));
  auto p = params(40, 4);
  p.grow.mtry = 3;
  p.compute_vimp = true;
  const auto [forest, report] = fit(ds, p);
  ASSERT_TRUE(report.vimp);
  EXPECT_EQ((*report.vimp)[2], 0.0);
  EXPECT_GT((*report.vimp)[0], 0.0);
}

TEST(Proximity, SymmetricUnitDiagonalAndClones) {
  auto ds = simulate(80, 2, 1, 0.2, 17);
  // Case 1 becomes a clone of case 0.
  ds.time[1] = ds.time[0];
  ds.status[1] = ds.status[0];
  for (auto& col : ds.x) col[1] = col[0];
  const auto [forest, report] = fit(ds, params(25, 1));
  const auto prox = proximity_matrix(forest);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    ASSERT_EQ(prox[i][i], 1.0);
    for (std::size_t j = 0; j < ds.n(); ++j) {
      ASSERT_EQ(prox[i][j], prox[j][i]);
      ASSERT_GE(prox[i][j], 0.0);
      ASSERT_LE(prox[i][j], 1.0);
    }
  }
  EXPECT_EQ(prox[0][1], 1.0);
}
