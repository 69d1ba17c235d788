#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "rsf/dataset.hpp"

using namespace rsf;

namespace {

SurvivalDataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in, "time", "status");
}

std::string dump(const SurvivalDataset& ds) {
  std::ostringstream out;
  write_csv(out, ds);
  return out.str();
}

bool same(const SurvivalDataset& a, const SurvivalDataset& b) {
  return a.names == b.names && a.kinds == b.kinds && a.time == b.time && a.status == b.status && a.x == b.x;
}

}  // namespace

TEST(Csv, ThreeRowFile) {
  const auto ds = parse("time,status,age\n1,1,50\n2,1,61.5\n3,0,NA\n");
  EXPECT_EQ(ds.n(), 3u);
  EXPECT_EQ(ds.d(), 1u);
  EXPECT_EQ(ds.deaths(), 2u);
  EXPECT_EQ(*ds.status[2], 0);
  EXPECT_FALSE(ds.x[0][2].has_value());
  EXPECT_EQ(ds.kinds[0], VarKind::continuous);
}

TEST(Csv, KindInference) {
  const auto ds = parse("a,time,b,status\n1,4,1.5,0\n2,5,,1\nNA,6,3,1\n");
  EXPECT_EQ(ds.names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.kinds[0], VarKind::integer);
  EXPECT_EQ(ds.kinds[1], VarKind::continuous);
  EXPECT_FALSE(ds.x[1][1].has_value());
  EXPECT_FALSE(ds.x[0][2].has_value());
}

TEST(Csv, StatusTwoNamesRow) {
  try {
    parse("time,status,x\n1,1,0\n2,2,0\n");
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("status"), std::string::npos);
  }
}

TEST(Csv, UnparseableTimeNamesRowAndColumn) {
  try {
    parse("time,status,x\n1,1,0\nabc,1,0\n");
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'time'"), std::string::npos);
  }
}

TEST(Csv, NoDataRows) { EXPECT_THROW(parse("time,status,x\n"), DataError); }

TEST(Csv, MissingOutcomeColumn) { EXPECT_THROW(parse("t,status,x\n1,1,0\n"), DataError); }

TEST(Csv, RoundTripIsIdentity) {
  auto ds = simulate(40, 2, 2, 0.3, 1);
  ds.x[0][3].reset();
  ds.time[5].reset();
  ds.names.push_back("grade");
  ds.kinds.push_back(VarKind::integer);
  Column grade(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) grade[i] = static_cast<double>(i % 4);
  grade[7].reset();
  ds.x.push_back(grade);
  const auto back = parse(dump(ds));
  EXPECT_TRUE(same(ds, back));
  EXPECT_EQ(dump(back), dump(ds));
}

TEST(Simulate, NoCensoringNoSignal) {
  const auto ds = simulate(100, 0, 5, 0.0, 3);
  EXPECT_EQ(ds.n(), 100u);
  EXPECT_EQ(ds.d(), 5u);
  EXPECT_EQ(ds.deaths(), 100u);
  for (const auto& col : ds.x)
    for (const auto& v : col) {
      ASSERT_GE(*v, 0.0);
      ASSERT_LT(*v, 1.0);
    }
}

TEST(Simulate, CensoringCalibration) {
  double total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = simulate(500, 2, 10, 0.3, seed);
    total += 1.0 - static_cast<double>(ds.deaths()) / 500.0;
  }
  EXPECT_NEAR(total / 20, 0.3, 0.1);
}

TEST(Simulate, PureFunctionOfArguments) {
  EXPECT_EQ(dump(simulate(50, 2, 3, 0.2, 9)), dump(simulate(50, 2, 3, 0.2, 9)));
  EXPECT_NE(dump(simulate(50, 2, 3, 0.2, 9)), dump(simulate(50, 2, 3, 0.2, 10)));
}

TEST(Simulate, Validation) {
  EXPECT_THROW(simulate(100, 1, 1, 1.0, 1), ValidationError);
  EXPECT_THROW(simulate(1, 1, 1, 0.1, 1), ValidationError);
  EXPECT_THROW(simulate(10, 0, 0, 0.1, 1), ValidationError);
}

TEST(InjectMissing, FractionAndRoundTrip) {
  const auto ds = simulate(312, 2, 15, 0.3, 4);
  const auto [holed, report] = inject_missing(ds, 0.05, 11, false);
  const double frac = static_cast<double>(report.cells.size()) / (312.0 * 17.0);
  EXPECT_NEAR(frac, 0.05, 0.01);
  EXPECT_TRUE(holed.outcomes_complete());
  EXPECT_EQ(holed.missing_count(), report.cells.size());
  EXPECT_TRUE(same(restore_missing(holed, report), ds));
}

TEST(InjectMissing, ChangesOnlyReportedCells) {
  const auto ds = simulate(100, 1, 3, 0.2, 4);
  const auto [holed, report] = inject_missing(ds, 0.2, 5, true);
  std::size_t changed = 0;
  for (std::size_t c = 0; c < ds.column_count(); ++c)
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (holed.cell(i, c) != ds.cell(i, c)) ++changed;
  EXPECT_EQ(changed, report.cells.size());
  for (const auto& cell : report.cells) {
    EXPECT_FALSE(holed.cell(cell.row, cell.column));
    EXPECT_EQ(*ds.cell(cell.row, cell.column), cell.value);
  }
  bool outcome_hit = false;
  for (const auto& cell : report.cells) outcome_hit |= cell.column >= ds.d();
  EXPECT_TRUE(outcome_hit);
}

TEST(InjectMissing, TinyFractionBlanksNothing) {
  const auto ds = simulate(312, 2, 15, 0.3, 4);
  EXPECT_TRUE(inject_missing(ds, 1e-9, 1, false).second.cells.empty());
}

TEST(InjectMissing, FractionValidation) {
  const auto ds = simulate(10, 1, 1, 0.0, 1);
  EXPECT_THROW(inject_missing(ds, 0.0, 1, false), ValidationError);
  EXPECT_THROW(inject_missing(ds, 1.0, 1, false), ValidationError);
}

TEST(Pbc, BundledFixtureShape) {
  const auto ds = load_csv(std::string(RSF_DATA_DIR) + "/pbc.csv", "days", "status");
  EXPECT_EQ(ds.n(), 312u);
  EXPECT_EQ(ds.d(), 17u);
  EXPECT_GT(ds.deaths(), 100u);
}
