#pragma once

// On-disk graph bundle: a directory holding
//   meta.json      {"num_nodes": N, "feat_dim": D, "num_classes": C, "name": "..."}
//   edges.tsv      one "u<TAB>v" per line, 0-based ids
//   features.csv   one row per node, comma-separated decimals
//   labels.csv     one integer per line
//   splits.json    {"train": [...], "val": [...], "test": [...], "query": [...]}
// All files UTF-8 with LF endings. The loader validates shapes and id ranges
// and reports malformed input with file name and line number; duplicate or
// self-loop edges are dropped with a count in the load report.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphbench/graph.hpp"
#include "graphbench/splits.hpp"

namespace graphbench {

struct BundleLoadReport {
  Graph graph;
  SplitSpec splits;
  int dropped_self_loops = 0;
  int dropped_duplicates = 0;
};

namespace detail {

[[noreturn]] inline void bundle_error(const std::string& file, int line, const std::string& msg) {
  throw std::runtime_error(file + ":" + std::to_string(line) + ": " + msg);
}

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return in;
}

inline std::vector<std::uint32_t> read_id_array(const nlohmann::json& j, const std::string& key,
                                                int num_nodes, const std::string& file) {
  if (!j.contains(key) || !j[key].is_array()) bundle_error(file, 1, "missing array \"" + key + "\"");
  std::vector<std::uint32_t> out;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) bundle_error(file, 1, "non-integer id in \"" + key + "\"");
    long long x = v.get<long long>();
    if (x < 0 || x >= num_nodes) bundle_error(file, 1, "id out of range in \"" + key + "\"");
    out.push_back(static_cast<std::uint32_t>(x));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

inline BundleLoadReport load_graph_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  BundleLoadReport rep;
  Graph& g = rep.graph;

  {
    auto in = detail::open_or_throw(dir / "meta.json");
    nlohmann::json meta = nlohmann::json::parse(in, nullptr, true);
    g.num_nodes = meta.at("num_nodes").get<int>();
    g.feat_dim = meta.at("feat_dim").get<int>();
    g.num_classes = meta.at("num_classes").get<int>();
    g.name = meta.value("name", dir.filename().string());
    if (g.num_nodes <= 0 || g.feat_dim < 0 || g.num_classes <= 0)
      detail::bundle_error("meta.json", 1, "non-positive dimension");
  }

  {
    auto in = detail::open_or_throw(dir / "edges.tsv");
    std::vector<Edge> raw;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      long long u, v;
      char tab;
      if (!(ss >> u) || !ss.get(tab) || tab != '\t' || !(ss >> v))
        detail::bundle_error("edges.tsv", lineno, "expected \"u<TAB>v\"");
      if (u < 0 || v < 0 || u >= g.num_nodes || v >= g.num_nodes)
        detail::bundle_error("edges.tsv", lineno, "node id out of range");
      raw.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v)});
    }
    auto norm = normalize_edges(std::move(raw));
    g.edges = std::move(norm.edges);
    rep.dropped_self_loops = norm.dropped_self_loops;
    rep.dropped_duplicates = norm.dropped_duplicates;
  }

  {
    auto in = detail::open_or_throw(dir / "features.csv");
    g.features = Matrix(g.num_nodes, g.feat_dim);
    std::string line;
    int lineno = 0;
    int row = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (row >= g.num_nodes) detail::bundle_error("features.csv", lineno, "more rows than num_nodes");
      std::istringstream ss(line);
      std::string cell;
      int col = 0;
      while (std::getline(ss, cell, ',')) {
        if (col >= g.feat_dim) detail::bundle_error("features.csv", lineno, "more columns than feat_dim");
        try {
          std::size_t pos = 0;
          g.features.at(row, col) = std::stod(cell, &pos);
          while (pos < cell.size() && (cell[pos] == ' ' || cell[pos] == '\r')) ++pos;
          if (pos != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
          detail::bundle_error("features.csv", lineno, "bad decimal \"" + cell + "\"");
        }
        ++col;
      }
      if (col != g.feat_dim) detail::bundle_error("features.csv", lineno, "expected feat_dim columns");
      ++row;
    }
    if (row != g.num_nodes) detail::bundle_error("features.csv", lineno + 1, "fewer rows than num_nodes");
  }

  {
    auto in = detail::open_or_throw(dir / "labels.csv");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      long long y;
      try {
        y = std::stoll(line);
      } catch (const std::exception&) {
        detail::bundle_error("labels.csv", lineno, "bad label \"" + line + "\"");
      }
      if (y < 0 || y >= g.num_classes) detail::bundle_error("labels.csv", lineno, "label out of range");
      if (static_cast<int>(g.labels.size()) >= g.num_nodes)
        detail::bundle_error("labels.csv", lineno, "more labels than num_nodes");
      g.labels.push_back(static_cast<int>(y));
    }
    if (static_cast<int>(g.labels.size()) != g.num_nodes)
      detail::bundle_error("labels.csv", lineno + 1, "fewer labels than num_nodes");
  }

  {
    auto in = detail::open_or_throw(dir / "splits.json");
    nlohmann::json js = nlohmann::json::parse(in, nullptr, true);
    rep.splits.train = detail::read_id_array(js, "train", g.num_nodes, "splits.json");
    rep.splits.val = detail::read_id_array(js, "val", g.num_nodes, "splits.json");
    rep.splits.test = detail::read_id_array(js, "test", g.num_nodes, "splits.json");
    rep.splits.query = detail::read_id_array(js, "query", g.num_nodes, "splits.json");
    // Disjointness across the four parts.
    std::vector<int> seen(g.num_nodes, 0);
    for (int p = 0; p < 4; ++p)
      for (auto id : rep.splits.part(p))
        if (++seen[id] > 1) detail::bundle_error("splits.json", 1, "splits overlap at node " + std::to_string(id));
    if (rep.splits.test.empty() || rep.splits.query.empty())
      detail::bundle_error("splits.json", 1, "test and query must be non-empty");
  }

  validate_graph(g);
  return rep;
}

// Serialise a double so the value round-trips exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_graph_bundle(const std::filesystem::path& dir, const Graph& g, const SplitSpec& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    nlohmann::ordered_json meta;
    meta["num_nodes"] = g.num_nodes;
    meta["feat_dim"] = g.feat_dim;
    meta["num_classes"] = g.num_classes;
    meta["name"] = g.name;
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "edges.tsv");
    for (const auto& e : g.edges) out << e.first << "\t" << e.second << "\n";
  }
  {
    std::ofstream out(dir / "features.csv");
    for (int i = 0; i < g.num_nodes; ++i) {
      for (int j = 0; j < g.feat_dim; ++j) {
        if (j) out << ",";
        out << format_double(g.features.at(i, j));
      }
      out << "\n";
    }
  }
  {
    std::ofstream out(dir / "labels.csv");
    for (int y : g.labels) out << y << "\n";
  }
  {
    nlohmann::ordered_json js;
    js["train"] = s.train;
    js["val"] = s.val;
    js["test"] = s.test;
    js["query"] = s.query;
    std::ofstream out(dir / "splits.json");
    out << js.dump(2) << "\n";
  }
}

}  // namespace graphbench
