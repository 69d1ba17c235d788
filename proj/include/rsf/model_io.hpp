#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rsf/dataset.hpp"
#include "rsf/forest.hpp"
#include "rsf/splitting.hpp"
#include "rsf/tree.hpp"

namespace rsf {

inline constexpr int kModelFormatVersion = 1;

namespace detail {

using json = nlohmann::json;

template <typename T>
json optional_array(const std::vector<std::optional<T>>& values) {
  json out = json::array();
  for (const auto& v : values) out.push_back(v ? json(*v) : json(nullptr));
  return out;
}

template <typename T>
std::vector<std::optional<T>> read_optional_array(const json& j) {
  std::vector<std::optional<T>> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.is_null() ? std::nullopt : std::optional<T>(v.get<T>()));
  return out;
}

inline json pool_json(const ValuePool& pool) { return json{{"values", pool.values}, {"weights", pool.weights}}; }

inline ValuePool read_pool(const json& j) {
  ValuePool pool;
  pool.values = j.at("values").get<std::vector<double>>();
  pool.weights = j.at("weights").get<std::vector<int>>();
  return pool;
}

inline json dataset_json(const SurvivalDataset& ds) {
  json kinds = json::array();
  for (auto k : ds.kinds) kinds.push_back(to_string(k));
  json columns = json::array();
  for (const auto& col : ds.x) columns.push_back(optional_array(col));
  return json{{"time_name", ds.time_name}, {"status_name", ds.status_name}, {"names", ds.names}, {"kinds", kinds},
              {"time", optional_array(ds.time)},   {"status", optional_array(ds.status)},  {"x", columns}};
}

inline SurvivalDataset read_dataset(const json& j) {
  SurvivalDataset ds;
  ds.time_name = j.at("time_name").get<std::string>();
  ds.status_name = j.at("status_name").get<std::string>();
  ds.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& k : j.at("kinds")) ds.kinds.push_back(parse_var_kind(k.get<std::string>()));
  ds.time = read_optional_array<double>(j.at("time"));
  ds.status = read_optional_array<int>(j.at("status"));
  for (const auto& col : j.at("x")) ds.x.push_back(read_optional_array<double>(col));
  ds.validate();
  return ds;
}

inline json tree_json(const SurvivalTree& tree) {
  json nodes = json::array();
  json routes = json::array();
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const auto& node = tree.nodes[id];
    nodes.push_back(json::array({node.variable, node.threshold, node.left, node.right, node.terminal}));
    if (!node.route.empty()) routes.push_back(json{{"node", id}, {"pool", pool_json(node.route)}});
  }
  json terminals = json::array();
  for (const auto& term : tree.terminals) {
    json fallback = json::array();
    for (const auto& [column, pool] : term.fallback) fallback.push_back(json{{"column", column}, {"pool", pool_json(pool)}});
    terminals.push_back(json{{"grid", term.chf.grid},
                             {"values", term.chf.values},
                             {"members", term.members},
                             {"multiplicity", term.multiplicity},
                             {"fallback", fallback}});
  }
  return json{{"seed", tree.seed},   {"node_distributions", tree.node_distributions}, {"inbag", tree.inbag},
              {"nodes", nodes},     {"routes", routes},                             {"terminals", terminals}};
}

inline SurvivalTree read_tree(const json& j) {
  SurvivalTree tree;
  tree.seed = j.at("seed").get<std::uint64_t>();
  tree.node_distributions = j.at("node_distributions").get<bool>();
  tree.inbag = j.at("inbag").get<std::vector<int>>();
  for (const auto& n : j.at("nodes")) {
    TreeNode node;
    node.variable = n.at(0).get<int>();
    node.threshold = n.at(1).get<double>();
    node.left = n.at(2).get<int>();
    node.right = n.at(3).get<int>();
    node.terminal = n.at(4).get<int>();
    tree.nodes.push_back(std::move(node));
  }
  for (const auto& r : j.at("routes")) tree.nodes.at(r.at("node").get<std::size_t>()).route = read_pool(r.at("pool"));
  for (const auto& t : j.at("terminals")) {
    TerminalNode term;
    term.chf.grid = t.at("grid").get<std::vector<double>>();
    term.chf.values = t.at("values").get<std::vector<double>>();
    term.members = t.at("members").get<std::vector<std::size_t>>();
    term.multiplicity = t.at("multiplicity").get<std::vector<int>>();
    for (const auto& f : t.at("fallback")) term.fallback.emplace_back(f.at("column").get<std::size_t>(), read_pool(f.at("pool")));
    tree.terminals.push_back(std::move(term));
  }
  return tree;
}

}  // namespace detail

inline nlohmann::json params_json(const FitParams& p) {
  return nlohmann::json{{"ntree", p.ntree},
                        {"seed", p.seed},
                        {"bootstrap", to_string(p.bootstrap)},
                        {"compute_vimp", p.compute_vimp},
                        {"nodesize", p.grow.d0},
                        {"mtry", p.grow.mtry},
                        {"split", to_string(p.grow.rule)},
                        {"missing_data", p.grow.missing_data},
                        {"keep_node_distributions", p.grow.keep_node_distributions}};
}

inline FitParams read_params(const nlohmann::json& j) {
  FitParams p;
  p.ntree = j.at("ntree").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.bootstrap = j.at("bootstrap").get<std::string>() == "none" ? Bootstrap::none : Bootstrap::by_case;
  p.compute_vimp = j.at("compute_vimp").get<bool>();
  p.grow.d0 = j.at("nodesize").get<std::size_t>();
  p.grow.mtry = j.at("mtry").get<std::size_t>();
  const auto rule = parse_split_rule(j.at("split").get<std::string>());
  if (!rule) throw DataError("model file: unknown split rule");
  p.grow.rule = *rule;
  p.grow.missing_data = j.at("missing_data").get<bool>();
  p.grow.keep_node_distributions = j.at("keep_node_distributions").get<bool>();
  return p;
}

inline nlohmann::json forest_json(const Forest& forest) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : forest.trees) trees.push_back(detail::tree_json(tree));
  return nlohmann::json{{"format_version", kModelFormatVersion},
                        {"params", params_json(forest.params)},
                        {"training", detail::dataset_json(forest.training)},
                        {"outcome_time", forest.outcome_time},
                        {"outcome_status", forest.outcome_status},
                        {"event_grid", forest.event_grid},
                        {"trees", trees}};
}

inline Forest read_forest(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kModelFormatVersion)
    throw DataError("model file format_version " + std::to_string(version) + " is not supported");
  Forest forest;
  forest.params = read_params(j.at("params"));
  forest.training = detail::read_dataset(j.at("training"));
  forest.outcome_time = j.at("outcome_time").get<std::vector<double>>();
  forest.outcome_status = j.at("outcome_status").get<std::vector<int>>();
  for (const auto& t : j.at("trees")) forest.trees.push_back(detail::read_tree(t));
  refresh_caches(forest);
  if (forest.event_grid != j.at("event_grid").get<std::vector<double>>()) throw DataError("model file: event grid mismatch");
  return forest;
}

inline std::string dump_model(const Forest& forest) { return forest_json(forest).dump(); }

inline void save_model(const std::string& path, const Forest& forest) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  out << dump_model(forest) << '\n';
}

inline Forest load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model file '" + path + "': " + e.what());
  }
  try {
    return read_forest(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model file '" + path + "': " + e.what());
  }
}

}  // namespace rsf
