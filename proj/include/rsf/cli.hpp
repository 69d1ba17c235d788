#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "rsf/bench.hpp"
#include "rsf/dataset.hpp"
#include "rsf/forest.hpp"
#include "rsf/impute.hpp"
#include "rsf/model_io.hpp"
#include "rsf/splitting.hpp"

namespace rsf::cli {

/// Files are staged in memory and written only once a command has finished,
/// so a failing command leaves nothing behind.
class Outputs {
 public:
  void add(std::string path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }

  void commit() const {
    for (const auto& [path, content] : files_) {
      const std::string tmp = path + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write '" + path + "'");
        out << content;
        if (!out) throw DataError("cannot write '" + path + "'");
      }
      std::filesystem::rename(tmp, path);
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

struct ForestFlags {
  std::size_t ntree = 1000;
  std::string mtry = "auto";
  std::size_t nodesize = 3;
  std::string split = "logrank";
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

namespace detail {

inline void add_forest_flags(CLI::App& cmd, ForestFlags& f, bool with_split = true) {
  cmd.add_option("--ntree", f.ntree, "number of trees")->default_val(1000);
  cmd.add_option("--mtry", f.mtry, "candidate variables per node, or 'auto' for ceil(sqrt(d))")->default_val("auto");
  cmd.add_option("--nodesize", f.nodesize, "minimum unique death times per terminal node")->default_val(3);
  if (with_split) cmd.add_option("--split", f.split, "logrank | conserve | logrankscore | logrankrandom")->default_val("logrank");
  cmd.add_option("--seed", f.seed, "master seed")->default_val(0);
  cmd.add_option("--threads", f.threads, "worker cap, 0 = all cores; results do not depend on it")->default_val(0);
}

inline SplitRule parse_rule(const std::string& name) {
  const auto rule = parse_split_rule(name);
  if (!rule) throw ValidationError("--split '" + name + "' is not a valid rule; use one of: " + std::string(kSplitRuleNames));
  return *rule;
}

inline std::size_t parse_mtry(const std::string& text) {
  if (text == "auto") return 0;
  std::size_t pos = 0;
  long long value = 0;
  try {
    value = std::stoll(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || value < 1) throw ValidationError("--mtry must be 'auto' or a positive integer, got '" + text + "'");
  return static_cast<std::size_t>(value);
}

inline FitParams fit_params(const ForestFlags& f) {
  if (f.ntree < 1) throw ValidationError("--ntree must be at least 1");
  if (f.nodesize < 1) throw ValidationError("--nodesize must be at least 1");
  FitParams p;
  p.ntree = f.ntree;
  p.seed = f.seed;
  p.threads = f.threads;
  p.grow.d0 = f.nodesize;
  p.grow.mtry = parse_mtry(f.mtry);
  p.grow.rule = parse_rule(f.split);
  return p;
}

inline void check_mtry(const FitParams& p, std::size_t d) {
  if (p.grow.mtry > d)
    throw ValidationError("--mtry " + std::to_string(p.grow.mtry) + " exceeds the " + std::to_string(d) + " covariates");
}

inline std::string params_line(const FitParams& p, std::size_t d) {
  std::ostringstream s;
  s << "# params: ntree=" << p.ntree << " mtry=" << p.grow.resolved_mtry(d) << " nodesize=" << p.grow.d0
    << " split=" << to_string(p.grow.rule) << " bootstrap=" << to_string(p.bootstrap);
  return s.str();
}

inline std::string fmt(const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string dataset_text(const SurvivalDataset& ds) {
  std::ostringstream s;
  write_csv(s, ds);
  return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string data, time_col = "time", status_col = "status", out_model, out_report;
  ForestFlags forest;
  bool vimp = false;
  std::size_t impute_iters = 1;
};

inline void cmd_train(const TrainArgs& a, std::ostream& report_out, std::ostream& log) {
  FitParams params = detail::fit_params(a.forest);
  // Saved models must route test cases with missing cells.
  params.grow.keep_node_distributions = true;
  const SurvivalDataset ds = load_csv(a.data, a.time_col, a.status_col);
  detail::check_mtry(params, ds.d());

  Forest forest;
  FitReport report;
  std::vector<IterationReport> iterations;
  std::size_t imputed_cells = 0;
  if (ds.complete()) {
    params.compute_vimp = false;
    std::tie(forest, report) = fit(ds, params);
  } else {
    if (a.impute_iters < 1)
      throw ValidationError("data has missing cells; --impute-iters must be at least 1");
    params.compute_vimp = false;
    imputed_cells = ds.missing_count();
    auto result = iterate_impute(ds, params, a.impute_iters);
    iterations = std::move(result.iterations);
    forest = std::move(result.forest);
    report = summarize_fit(forest);
  }
  std::optional<std::vector<double>> importance;
  if (a.vimp) importance = vimp(forest);

  std::ostringstream r;
  r << "# rsf train\n# seed=" << params.seed << "\n" << detail::params_line(params, ds.d())
    << " impute_iters=" << a.impute_iters << " vimp=" << (a.vimp ? "yes" : "no") << "\n";
  r << "section,name,value\n";
  r << "summary,n," << ds.n() << "\n";
  r << "summary,d," << ds.d() << "\n";
  r << "summary,deaths," << std::count(forest.outcome_status.begin(), forest.outcome_status.end(), 1) << "\n";
  r << "summary,ntree," << forest.ntree() << "\n";
  r << "summary,oob_error," << detail::fmt(report.oob_error) << "\n";
  r << "summary,oob_excluded," << report.oob_excluded << "\n";
  if (!iterations.empty()) {
    r << "imputation,missing_cells," << imputed_cells << "\n";
    for (const auto& it : iterations) {
      r << "imputation,iteration_" << it.iteration << "_oob_error," << detail::fmt(it.oob_error) << "\n";
      r << "imputation,iteration_" << it.iteration << "_undetermined," << it.undetermined << "\n";
    }
  }
  if (importance)
    for (std::size_t k = 0; k < ds.d(); ++k)
      r << "vimp," << detail::csv_field(ds.names[k]) << "," << format_double((*importance)[k]) << "\n";

  Outputs out;
  out.add(a.out_model, dump_model(forest) + "\n");
  if (!a.out_report.empty()) out.add(a.out_report, r.str());
  out.commit();
  if (a.out_report.empty()) report_out << r.str();
  else log << "oob_error " << detail::fmt(report.oob_error) << "\n";
}

struct PredictArgs {
  std::string model, data, out;
  bool chf = false;
  unsigned threads = 0;
};

inline void cmd_predict(const PredictArgs& a, std::ostream& log) {
  Forest forest = load_model(a.model);
  forest.params.threads = a.threads;
  const auto& names = forest.training.names;
  std::map<std::string, VarKind> kinds;
  for (std::size_t k = 0; k < names.size(); ++k) kinds[names[k]] = forest.training.kinds[k];

  SurvivalDataset test;
  {
    std::ifstream in(a.data);
    if (!in) throw DataError("cannot open '" + a.data + "'");
    std::string header;
    std::getline(in, header);
    const auto fields = rsf::detail::split_csv_line(header);
    std::vector<std::string> columns;
    for (const auto& f : fields) {
      const std::string name(rsf::detail::trim(f));
      if (name != forest.training.time_name && name != forest.training.status_name) columns.push_back(name);
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (k >= columns.size())
        throw ValidationError("data is missing model column '" + names[k] + "'");
      if (columns[k] != names[k])
        throw ValidationError("data column '" + columns[k] + "' does not match model column '" + names[k] + "'");
    }
    if (columns.size() > names.size())
      throw ValidationError("data column '" + columns[names.size()] + "' is not a model column");
  }
  test = load_csv(a.data, forest.training.time_name, forest.training.status_name, kinds, false);

  // Outcome cells of a prediction file are never imputed.
  SurvivalDataset covariates = test;
  for (std::size_t i = 0; i < covariates.n(); ++i) {
    covariates.time[i] = 0.0;
    covariates.status[i] = 0;
  }
  const TestImputation result = impute_test(forest, covariates);
  std::vector<std::size_t> imputed(test.n(), 0);
  for (const auto& cell : result.imputed) ++imputed[cell.row];

  std::ostringstream s;
  s << "case,mortality,imputed_cells";
  if (a.chf)
    for (double t : forest.event_grid) s << ",chf_" << format_double(t);
  s << "\n";
  for (std::size_t i = 0; i < test.n(); ++i) {
    s << i + 1 << "," << format_double(result.mortality[i]) << "," << imputed[i];
    if (a.chf) {
      const auto x = case_covariates(result.completed, i);
      const auto chf = ensemble_chf(forest, x);
      for (double v : chf.values) s << "," << format_double(v);
    }
    s << "\n";
  }
  Outputs out;
  out.add(a.out, s.str());
  out.commit();

  std::size_t total = 0;
  for (auto c : imputed) total += c;
  log << "predicted " << test.n() << " cases, imputed " << total << " cells\n";
  if (test.outcomes_complete()) {
    try {
      log << "test_error " << format_double(prediction_error(result.mortality, test.times(), test.statuses())) << "\n";
    } catch (const NoPermissiblePairs&) {
    }
  }
}

struct VimpArgs {
  std::string model, out;
  unsigned threads = 0;
};

inline void cmd_vimp(const VimpArgs& a, std::ostream& log) {
  Forest forest = load_model(a.model);
  forest.params.threads = a.threads;
  if (forest.params.bootstrap == Bootstrap::none) throw ValidationError("model was grown without bootstrap; VIMP needs OOB cases");
  const auto importance = vimp(forest);
  std::ostringstream s;
  s << "# rsf vimp\n# seed=" << forest.params.seed << "\n" << detail::params_line(forest.params, forest.d()) << "\n";
  s << "variable,vimp\n";
  for (std::size_t k = 0; k < forest.d(); ++k)
    s << detail::csv_field(forest.training.names[k]) << "," << format_double(importance[k]) << "\n";
  Outputs out;
  out.add(a.out, s.str());
  out.commit();
  log << "vimp for " << forest.d() << " variables\n";
}

struct ImputeArgs {
  std::string data, time_col = "time", status_col = "status", out, report;
  ForestFlags forest;
  std::size_t iterations = 5;
};

inline void cmd_impute(const ImputeArgs& a, std::ostream& log) {
  if (a.iterations < 1) throw ValidationError("--iterations must be at least 1");
  FitParams params = detail::fit_params(a.forest);
  const SurvivalDataset ds = load_csv(a.data, a.time_col, a.status_col);
  detail::check_mtry(params, ds.d());

  SurvivalDataset completed = ds;
  std::vector<IterationReport> iterations;
  const auto cells = missing_cells(ds);
  if (!cells.empty()) {
    auto result = iterate_impute(ds, params, a.iterations);
    completed = std::move(result.completed);
    iterations = std::move(result.iterations);
  }

  std::ostringstream r;
  r << "# rsf impute\n# seed=" << params.seed << "\n" << detail::params_line(params, ds.d())
    << " iterations=" << a.iterations << "\n";
  for (const auto& it : iterations)
    r << "# iteration " << it.iteration << ": oob_error=" << detail::fmt(it.oob_error)
      << " undetermined=" << it.undetermined << "\n";
  r << "row,column,value\n";
  for (const auto& cell : cells)
    r << cell.row + 1 << "," << detail::csv_field(ds.column_name(cell.column)) << ","
      << detail::fmt(completed.cell(cell.row, cell.column)) << "\n";

  Outputs out;
  out.add(a.out, detail::dataset_text(completed));
  if (!a.report.empty()) out.add(a.report, r.str());
  out.commit();
  log << "imputed " << cells.size() << " cells\n";
}

struct SimulateArgs {
  std::size_t n = 100, signal = 2, noise = 0;
  double censor_rate = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

inline void cmd_simulate(const SimulateArgs& a, std::ostream& log) {
  if (!(a.censor_rate >= 0.0 && a.censor_rate < 1.0)) throw ValidationError("--censor-rate must lie in [0, 1)");
  const auto ds = simulate(a.n, a.signal, a.noise, a.censor_rate, a.seed);
  Outputs out;
  out.add(a.out, detail::dataset_text(ds));
  out.commit();
  log << "simulated " << ds.n() << " cases, " << ds.deaths() << " deaths\n";
}

struct BenchArgs {
  std::string data, time_col = "time", status_col = "status", out, split = "all";
  std::size_t replicates = 100;
  ForestFlags forest;
};

inline void cmd_bench(const BenchArgs& a, std::ostream& log) {
  if (a.replicates < 1) throw ValidationError("--replicates must be at least 1");
  std::vector<SplitRule> rules;
  if (a.split == "all") {
    rules = {SplitRule::logrank, SplitRule::conserve, SplitRule::logrankscore, SplitRule::logrankrandom};
  } else {
    const auto rule = parse_split_rule(a.split);
    if (!rule)
      throw ValidationError("--split '" + a.split + "' is not valid; use 'all' or one of: " + std::string(kSplitRuleNames));
    rules = {*rule};
  }
  ForestFlags flags = a.forest;
  flags.split = to_string(rules.front());
  const FitParams params = detail::fit_params(flags);
  const SurvivalDataset ds = load_csv(a.data, a.time_col, a.status_col);
  detail::check_mtry(params, ds.d());
  if (!ds.complete()) throw ValidationError("bench needs complete data; impute it first");

  const auto rows = bench(ds, rules, a.replicates, params);
  std::ostringstream s;
  s << "# rsf bench\n# seed=" << params.seed << "\n# params: ntree=" << params.ntree
    << " mtry=" << params.grow.resolved_mtry(ds.d()) << " nodesize=" << params.grow.d0 << " split=" << a.split
    << " replicates=" << a.replicates << "\n";
  s << "rule,replicate,pe\n";
  for (const auto& row : rows) s << to_string(row.rule) << "," << row.replicate + 1 << "," << detail::fmt(row.error) << "\n";
  Outputs out;
  out.add(a.out, s.str());
  out.commit();
  for (SplitRule rule : rules) {
    double sum = 0;
    std::size_t count = 0;
    for (const auto& row : rows)
      if (row.rule == rule && row.error) sum += *row.error, ++count;
    log << to_string(rule) << " mean_pe " << (count ? format_double(sum / count) : std::string("NA")) << "\n";
  }
}

// ---------------------------------------------------------------------------

/// Runs the command line. Exit codes: 0 success, 1 runtime failure,
/// 2 invalid flags or input that fails validation.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Random survival forests for right-censored data", "rsf"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "fit a forest and write a model file");
  c_train->add_option("--data", train.data, "training CSV")->required();
  c_train->add_option("--time-col", train.time_col)->default_val("time");
  c_train->add_option("--status-col", train.status_col)->default_val("status");
  detail::add_forest_flags(*c_train, train.forest);
  c_train->add_flag("--vimp", train.vimp, "compute variable importance");
  c_train->add_option("--impute-iters", train.impute_iters, "imputation iterations when cells are missing")->default_val(1);
  c_train->add_option("--out-model", train.out_model, "model file to write")->required();
  c_train->add_option("--out-report", train.out_report, "report file; stdout when omitted");

  PredictArgs predict;
  auto* c_predict = app.add_subcommand("predict", "ensemble mortality for new cases");
  c_predict->add_option("--model", predict.model)->required();
  c_predict->add_option("--data", predict.data)->required();
  c_predict->add_option("--out", predict.out)->required();
  c_predict->add_flag("--chf", predict.chf, "append the ensemble CHF on the event grid");
  c_predict->add_option("--threads", predict.threads)->default_val(0);

  VimpArgs vimp_args;
  auto* c_vimp = app.add_subcommand("vimp", "variable importance of a trained model");
  c_vimp->add_option("--model", vimp_args.model)->required();
  c_vimp->add_option("--out", vimp_args.out)->required();
  c_vimp->add_option("--threads", vimp_args.threads)->default_val(0);

  ImputeArgs impute;
  auto* c_impute = app.add_subcommand("impute", "iterated adaptive tree imputation");
  c_impute->add_option("--data", impute.data)->required();
  c_impute->add_option("--time-col", impute.time_col)->default_val("time");
  c_impute->add_option("--status-col", impute.status_col)->default_val("status");
  c_impute->add_option("--iterations", impute.iterations)->default_val(5);
  detail::add_forest_flags(*c_impute, impute.forest);
  c_impute->add_option("--out", impute.out, "completed CSV")->required();
  c_impute->add_option("--report", impute.report, "imputed-cell report");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "synthetic exponential survival data");
  c_sim->add_option("--n", sim.n)->default_val(100);
  c_sim->add_option("--signal", sim.signal)->default_val(2);
  c_sim->add_option("--noise", sim.noise)->default_val(0);
  c_sim->add_option("--censor-rate", sim.censor_rate)->default_val(0.0);
  c_sim->add_option("--seed", sim.seed)->default_val(0);
  c_sim->add_option("--out", sim.out)->required();

  BenchArgs bench_args;
  auto* c_bench = app.add_subcommand("bench", "bootstrap-replicate prediction error per split rule");
  c_bench->add_option("--data", bench_args.data)->required();
  c_bench->add_option("--time-col", bench_args.time_col)->default_val("time");
  c_bench->add_option("--status-col", bench_args.status_col)->default_val("status");
  c_bench->add_option("--replicates", bench_args.replicates)->default_val(100);
  c_bench->add_option("--split", bench_args.split, "all or one rule")->default_val("all");
  detail::add_forest_flags(*c_bench, bench_args.forest, false);
  c_bench->add_option("--out", bench_args.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*c_train) cmd_train(train, out, err);
    else if (*c_predict) cmd_predict(predict, err);
    else if (*c_vimp) cmd_vimp(vimp_args, err);
    else if (*c_impute) cmd_impute(impute, err);
    else if (*c_sim) cmd_simulate(sim, err);
    else if (*c_bench) cmd_bench(bench_args, err);
    return 0;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace rsf::cli
