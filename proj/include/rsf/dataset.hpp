#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rsf/rng.hpp"

namespace rsf {

/// Bad input supplied by the caller (flags, schema, parameter ranges).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class VarKind { continuous, integer };

inline const char* to_string(VarKind kind) { return kind == VarKind::integer ? "integer" : "continuous"; }

inline VarKind parse_var_kind(std::string_view s) {
  if (s == "integer") return VarKind::integer;
  if (s == "continuous") return VarKind::continuous;
  throw ValidationError("unknown variable kind '" + std::string(s) + "' (expected continuous or integer)");
}

using Column = std::vector<std::optional<double>>;

/// Right-censored survival data. Covariates are stored column-major; a
/// missing cell is an empty optional. Outcomes may also be missing, which
/// only the imputation routines accept.
struct SurvivalDataset {
  std::string time_name = "time";
  std::string status_name = "status";
  std::vector<std::string> names;
  std::vector<VarKind> kinds;
  std::vector<std::optional<double>> time;
  std::vector<std::optional<int>> status;
  std::vector<Column> x;

  std::size_t n() const { return time.size(); }
  std::size_t d() const { return x.size(); }

  // Column ids used by cell-level bookkeeping: covariates are [0, d),
  // followed by the time and status columns.
  std::size_t time_column() const { return d(); }
  std::size_t status_column() const { return d() + 1; }
  std::size_t column_count() const { return d() + 2; }

  std::optional<double> cell(std::size_t row, std::size_t column) const {
    if (column < d()) return x[column][row];
    if (column == time_column()) return time[row];
    if (status[row]) return static_cast<double>(*status[row]);
    return std::nullopt;
  }

  void set_cell(std::size_t row, std::size_t column, std::optional<double> value) {
    if (column < d()) {
      x[column][row] = value;
    } else if (column == time_column()) {
      time[row] = value;
    } else {
      status[row] = value ? std::optional<int>(static_cast<int>(*value)) : std::nullopt;
    }
  }

  VarKind column_kind(std::size_t column) const {
    if (column < d()) return kinds[column];
    return column == time_column() ? VarKind::continuous : VarKind::integer;
  }

  std::string column_name(std::size_t column) const {
    if (column < d()) return names[column];
    return column == time_column() ? time_name : status_name;
  }

  bool outcomes_complete() const {
    return std::all_of(time.begin(), time.end(), [](auto& v) { return v.has_value(); }) &&
           std::all_of(status.begin(), status.end(), [](auto& v) { return v.has_value(); });
  }

  bool covariates_complete() const {
    for (const auto& col : x)
      for (const auto& v : col)
        if (!v) return false;
    return true;
  }

  bool complete() const { return outcomes_complete() && covariates_complete(); }

  std::size_t missing_count() const {
    std::size_t count = 0;
    for (std::size_t c = 0; c < column_count(); ++c)
      for (std::size_t i = 0; i < n(); ++i)
        if (!cell(i, c)) ++count;
    return count;
  }

  std::optional<std::size_t> find_variable(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return k;
    return std::nullopt;
  }

  std::vector<double> times() const {
    std::vector<double> out(n());
    for (std::size_t i = 0; i < n(); ++i) {
      if (!time[i]) throw DataError("missing survival time in row " + std::to_string(i + 1));
      out[i] = *time[i];
    }
    return out;
  }

  std::vector<int> statuses() const {
    std::vector<int> out(n());
    for (std::size_t i = 0; i < n(); ++i) {
      if (!status[i]) throw DataError("missing status in row " + std::to_string(i + 1));
      out[i] = *status[i];
    }
    return out;
  }

  std::size_t deaths() const {
    std::size_t count = 0;
    for (const auto& s : status)
      if (s && *s == 1) ++count;
    return count;
  }

  /// Throws DataError if any structural invariant is violated.
  void validate() const {
    const std::size_t rows = n();
    if (status.size() != rows) throw DataError("time and status lengths differ");
    if (names.size() != x.size() || kinds.size() != x.size()) throw DataError("variable metadata does not match covariate count");
    std::set<std::string> seen{time_name, status_name};
    if (time_name == status_name) throw DataError("time and status columns must differ");
    for (std::size_t k = 0; k < d(); ++k) {
      if (!seen.insert(names[k]).second) throw DataError("duplicate variable name '" + names[k] + "'");
      if (x[k].size() != rows) throw DataError("column '" + names[k] + "' has wrong length");
      for (std::size_t i = 0; i < rows; ++i) {
        const auto& v = x[k][i];
        if (!v) continue;
        if (!std::isfinite(*v)) throw DataError("non-finite value in column '" + names[k] + "'");
        if (kinds[k] == VarKind::integer && std::floor(*v) != *v)
          throw DataError("non-integral value in integer column '" + names[k] + "' row " + std::to_string(i + 1));
      }
    }
    for (std::size_t i = 0; i < rows; ++i) {
      if (time[i] && (!std::isfinite(*time[i]) || *time[i] < 0))
        throw DataError("invalid survival time in row " + std::to_string(i + 1));
      if (status[i] && *status[i] != 0 && *status[i] != 1)
        throw DataError("status outside {0,1} in row " + std::to_string(i + 1));
    }
  }
};

inline SurvivalDataset subset_rows(const SurvivalDataset& ds, const std::vector<std::size_t>& rows) {
  SurvivalDataset out;
  out.time_name = ds.time_name;
  out.status_name = ds.status_name;
  out.names = ds.names;
  out.kinds = ds.kinds;
  out.x.assign(ds.d(), Column{});
  for (std::size_t i : rows) {
    out.time.push_back(ds.time.at(i));
    out.status.push_back(ds.status.at(i));
    for (std::size_t k = 0; k < ds.d(); ++k) out.x[k].push_back(ds.x[k][i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t p = 0; p < line.size(); ++p) {
    const char ch = line[p];
    if (quoted) {
      if (ch == '"') {
        if (p + 1 < line.size() && line[p + 1] == '"') {
          field += '"';
          ++p;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline bool is_missing_token(std::string_view s) { return s.empty() || s == "NA"; }

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Shortest decimal text that parses back to exactly `value`.
inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

inline SurvivalDataset read_csv(std::istream& in, const std::string& time_col, const std::string& status_col,
                                const std::map<std::string, VarKind>& kind_overrides = {},
                                const std::string& source = "<stream>", bool require_outcomes = true) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": missing header row");
  const auto header = detail::split_csv_line(line);
  std::optional<std::size_t> time_idx, status_idx;
  std::vector<std::size_t> covariate_idx;
  SurvivalDataset ds;
  ds.time_name = time_col;
  ds.status_name = status_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(detail::trim(header[c]));
    if (name == time_col) {
      time_idx = c;
    } else if (name == status_col) {
      status_idx = c;
    } else {
      covariate_idx.push_back(c);
      ds.names.push_back(name);
    }
  }
  if (require_outcomes && !time_idx) throw DataError(source + ": time column '" + time_col + "' not found in header");
  if (require_outcomes && !status_idx)
    throw DataError(source + ": status column '" + status_col + "' not found in header");
  ds.x.assign(covariate_idx.size(), Column{});

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    const auto cell = [&](std::size_t c) -> std::optional<double> {
      const auto text = detail::trim(fields[c]);
      if (detail::is_missing_token(text)) return std::nullopt;
      auto v = detail::parse_double(text);
      if (!v) throw DataError(source + ": row " + std::to_string(row) + " column '" + std::string(detail::trim(header[c])) +
                              "': cannot parse '" + std::string(text) + "'");
      return v;
    };
    const auto t = time_idx ? cell(*time_idx) : std::nullopt;
    if (t && (*t < 0 || !std::isfinite(*t)))
      throw DataError(source + ": row " + std::to_string(row) + " column '" + time_col + "': negative or non-finite time");
    ds.time.push_back(t);
    const auto s = status_idx ? cell(*status_idx) : std::nullopt;
    if (s && *s != 0.0 && *s != 1.0)
      throw DataError(source + ": row " + std::to_string(row) + " column '" + status_col + "': status " +
                      format_double(*s) + " outside {0,1}");
    ds.status.push_back(s ? std::optional<int>(static_cast<int>(*s)) : std::nullopt);
    for (std::size_t k = 0; k < covariate_idx.size(); ++k) ds.x[k].push_back(cell(covariate_idx[k]));
  }
  if (row == 0) throw DataError(source + ": no data rows");

  ds.kinds.assign(ds.d(), VarKind::continuous);
  for (std::size_t k = 0; k < ds.d(); ++k) {
    if (auto it = kind_overrides.find(ds.names[k]); it != kind_overrides.end()) {
      ds.kinds[k] = it->second;
      continue;
    }
    bool any = false, integral = true;
    for (const auto& v : ds.x[k]) {
      if (!v) continue;
      any = true;
      if (std::floor(*v) != *v) integral = false;
    }
    ds.kinds[k] = (any && integral) ? VarKind::integer : VarKind::continuous;
  }
  ds.validate();
  return ds;
}

inline SurvivalDataset load_csv(const std::string& path, const std::string& time_col, const std::string& status_col,
                                const std::map<std::string, VarKind>& kind_overrides = {},
                                bool require_outcomes = true) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in, time_col, status_col, kind_overrides, path, require_outcomes);
}

inline void write_csv(std::ostream& out, const SurvivalDataset& ds) {
  const auto text = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  out << ds.time_name << ',' << ds.status_name;
  for (const auto& name : ds.names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << text(ds.time[i]) << ',' << (ds.status[i] ? std::to_string(*ds.status[i]) : std::string("NA"));
    for (std::size_t k = 0; k < ds.d(); ++k) out << ',' << text(ds.x[k][i]);
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const SurvivalDataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, ds);
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Exponential event times with log-rate sum_j beta_j x_j over the signal
/// variables (beta = 1, -1, 1, ...), Uniform(0,1) covariates, and independent
/// exponential censoring whose rate is solved so the expected censored
/// fraction over the drawn sample equals `censor_rate`.
inline SurvivalDataset simulate(std::size_t n, std::size_t d_signal, std::size_t d_noise, double censor_rate,
                                std::uint64_t seed) {
  if (n < 2) throw ValidationError("simulate: n must be at least 2");
  if (d_signal + d_noise < 1) throw ValidationError("simulate: need at least one variable");
  if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw ValidationError("simulate: censor rate must lie in [0, 1)");

  Rng rng(seed, {static_cast<std::uint64_t>(Stream::simulate)});
  SurvivalDataset ds;
  const std::size_t d = d_signal + d_noise;
  for (std::size_t k = 0; k < d_signal; ++k) ds.names.push_back("s" + std::to_string(k + 1));
  for (std::size_t k = 0; k < d_noise; ++k) ds.names.push_back("n" + std::to_string(k + 1));
  ds.kinds.assign(d, VarKind::continuous);
  ds.x.assign(d, Column(n));

  std::vector<double> rate(n);
  for (std::size_t i = 0; i < n; ++i) {
    double eta = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double v = rng.uniform();
      ds.x[k][i] = v;
      if (k < d_signal) eta += (k % 2 == 0 ? 1.0 : -1.0) * v;
    }
    rate[i] = std::exp(eta);
  }

  // P(censored | x) = c / (c + rate); mean over the sample is increasing in c.
  double censor = 0;
  if (censor_rate > 0) {
    const auto fraction = [&](double c) {
      double s = 0;
      for (double r : rate) s += c / (c + r);
      return s / static_cast<double>(n);
    };
    double lo = 0, hi = 1;
    while (fraction(hi) < censor_rate) hi *= 2;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (fraction(mid) < censor_rate ? lo : hi) = mid;
    }
    censor = 0.5 * (lo + hi);
  }

  ds.time.resize(n);
  ds.status.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double event = rng.exponential(rate[i]);
    const double cens = censor > 0 ? rng.exponential(censor) : HUGE_VAL;
    ds.time[i] = std::min(event, cens);
    ds.status[i] = event <= cens ? 1 : 0;
  }
  return ds;
}

/// Appends `count` Uniform(0,1) noise covariates named noise1, noise2, ...
inline SurvivalDataset add_noise_variables(SurvivalDataset ds, std::size_t count, std::uint64_t seed) {
  Rng rng(seed, {static_cast<std::uint64_t>(Stream::simulate), 1});
  for (std::size_t k = 0; k < count; ++k) {
    Column col(ds.n());
    for (auto& v : col) v = rng.uniform();
    std::string name = "noise" + std::to_string(k + 1);
    while (ds.find_variable(name) || name == ds.time_name || name == ds.status_name) name += "_";
    ds.names.push_back(std::move(name));
    ds.kinds.push_back(VarKind::continuous);
    ds.x.push_back(std::move(col));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Missingness injection

struct MissingCell {
  std::size_t row;
  std::size_t column;  // dataset column id: covariate index, time_column() or status_column()
  double value;        // ground truth
};

struct MissingnessReport {
  std::vector<MissingCell> cells;
};

/// Independently blanks each observed cell with probability `fraction`.
/// Cells that are already missing are left alone and not reported.
inline std::pair<SurvivalDataset, MissingnessReport> inject_missing(const SurvivalDataset& ds, double fraction,
                                                                    std::uint64_t seed, bool include_outcomes) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("inject_missing: fraction must lie in (0, 1)");
  Rng rng(seed, {static_cast<std::uint64_t>(Stream::missing)});
  SurvivalDataset out = ds;
  MissingnessReport report;
  const std::size_t columns = include_outcomes ? ds.column_count() : ds.d();
  for (std::size_t c = 0; c < columns; ++c) {
    for (std::size_t i = 0; i < ds.n(); ++i) {
      const double u = rng.uniform();
      const auto v = ds.cell(i, c);
      if (!v || u >= fraction) continue;
      out.set_cell(i, c, std::nullopt);
      report.cells.push_back({i, c, *v});
    }
  }
  return {std::move(out), std::move(report)};
}

inline SurvivalDataset restore_missing(SurvivalDataset ds, const MissingnessReport& report) {
  for (const auto& cell : report.cells) ds.set_cell(cell.row, cell.column, cell.value);
  return ds;
}

}  // namespace rsf
