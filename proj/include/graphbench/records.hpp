#pragma once

// Run records: one JSON object per experiment cell, written as JSONL.
// The field list is fixed; readers depend on its order and names. Metrics
// that do not apply to a row are null, never omitted. The two GPU fields
// exist for schema compatibility with tooling that expects them and are
// always null here (CPU-only engine).

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphbench/metrics.hpp"

namespace graphbench {

struct RunRecord {
  // header: always present
  std::string track;
  std::string dataset;
  std::string attack = "none";
  std::string defense = "none";
  int config_index = 0;
  double budget_multiplier = 0.0;
  double realized_node_fraction = 0.0;
  std::string regime = "both";
  double x_ratio = 1.0;
  double a_ratio = 1.0;
  std::uint64_t seed = 0;

  // performance: null where not applicable
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::optional<double> precision_macro;
  std::optional<double> recall_macro;
  std::optional<double> fidelity;
  std::optional<double> verification_rate;
  std::optional<double> survival_rate;

  // cost, seconds on a monotonic clock
  double target_train_time_s = 0.0;
  double query_time_s = 0.0;
  double surrogate_train_time_s = 0.0;
  double total_time_s = 0.0;

  // accounting
  std::size_t queries_used = 0;
  std::size_t realized_nodes = 0;

  std::optional<std::string> error;
};

namespace record_detail {

inline nlohmann::ordered_json opt(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

inline std::optional<double> as_opt(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace record_detail

inline nlohmann::ordered_json record_to_json(const RunRecord& r) {
  using record_detail::opt;
  nlohmann::ordered_json j;
  j["track"] = r.track;
  j["dataset"] = r.dataset;
  j["attack"] = r.attack;
  j["defense"] = r.defense;
  j["config_index"] = r.config_index;
  j["budget_multiplier"] = r.budget_multiplier;
  j["realized_node_fraction"] = r.realized_node_fraction;
  j["regime"] = r.regime;
  j["x_ratio"] = r.x_ratio;
  j["a_ratio"] = r.a_ratio;
  j["seed"] = r.seed;
  j["accuracy"] = opt(r.accuracy);
  j["macro_f1"] = opt(r.macro_f1);
  j["precision_macro"] = opt(r.precision_macro);
  j["recall_macro"] = opt(r.recall_macro);
  j["fidelity"] = opt(r.fidelity);
  j["verification_rate"] = opt(r.verification_rate);
  j["survival_rate"] = opt(r.survival_rate);
  j["target_train_time_s"] = r.target_train_time_s;
  j["query_time_s"] = r.query_time_s;
  j["surrogate_train_time_s"] = r.surrogate_train_time_s;
  j["total_time_s"] = r.total_time_s;
  j["peak_gpu_mem_gb"] = nullptr;
  j["gpu_hours"] = nullptr;
  j["queries_used"] = r.queries_used;
  j["realized_nodes"] = r.realized_nodes;
  if (r.error)
    j["error"] = *r.error;
  else
    j["error"] = nullptr;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  using record_detail::as_opt;
  RunRecord r;
  r.track = j.at("track").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.attack = j.at("attack").get<std::string>();
  r.defense = j.at("defense").get<std::string>();
  r.config_index = j.at("config_index").get<int>();
  r.budget_multiplier = j.at("budget_multiplier").get<double>();
  r.realized_node_fraction = j.at("realized_node_fraction").get<double>();
  r.regime = j.at("regime").get<std::string>();
  r.x_ratio = j.at("x_ratio").get<double>();
  r.a_ratio = j.at("a_ratio").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.accuracy = as_opt(j, "accuracy");
  r.macro_f1 = as_opt(j, "macro_f1");
  r.precision_macro = as_opt(j, "precision_macro");
  r.recall_macro = as_opt(j, "recall_macro");
  r.fidelity = as_opt(j, "fidelity");
  r.verification_rate = as_opt(j, "verification_rate");
  r.survival_rate = as_opt(j, "survival_rate");
  r.target_train_time_s = j.at("target_train_time_s").get<double>();
  r.query_time_s = j.at("query_time_s").get<double>();
  r.surrogate_train_time_s = j.at("surrogate_train_time_s").get<double>();
  r.total_time_s = j.at("total_time_s").get<double>();
  r.queries_used = j.at("queries_used").get<std::size_t>();
  r.realized_nodes = j.at("realized_nodes").get<std::size_t>();
  if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  return r;
}

// Everything except the four wall-clock fields, serialized. Two runs of the
// same config and root seed must agree on this string for every record; the
// clocks are the only sanctioned difference.
inline std::string metric_signature(const RunRecord& r) {
  nlohmann::ordered_json j = record_to_json(r);
  j.erase("target_train_time_s");
  j.erase("query_time_s");
  j.erase("surrogate_train_time_s");
  j.erase("total_time_s");
  return j.dump();
}

inline void append_record(std::ostream& os, const RunRecord& r) {
  os << record_to_json(r).dump() << '\n';
}

inline void write_jsonl(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : records) append_record(os, r);
}

inline std::vector<RunRecord> read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<RunRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---- reports ----
//
// All reports emit CSV with a fixed column order and rows sorted by their
// key columns, so identical record sets give identical files.

namespace record_detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace record_detail

// One row per (dataset, attack, defense, config_index) over all budgets and
// seeds; error rows are counted but contribute no metric samples.
inline std::string report_leaderboard(const std::vector<RunRecord>& records) {
  using record_detail::csv_escape;
  using record_detail::fmt;
  struct Bucket {
    std::vector<double> acc, f1, fid, verif, surv;
    std::size_t rows = 0, errors = 0;
  };
  std::map<std::string, Bucket> groups;
  for (const auto& r : records) {
    std::string key = csv_escape(r.dataset) + "," + csv_escape(r.attack) + "," +
                      csv_escape(r.defense) + "," + std::to_string(r.config_index);
    Bucket& b = groups[key];
    ++b.rows;
    if (r.error) {
      ++b.errors;
      continue;
    }
    if (r.accuracy) b.acc.push_back(*r.accuracy);
    if (r.macro_f1) b.f1.push_back(*r.macro_f1);
    if (r.fidelity) b.fid.push_back(*r.fidelity);
    if (r.verification_rate) b.verif.push_back(*r.verification_rate);
    if (r.survival_rate) b.surv.push_back(*r.survival_rate);
  }
  std::ostringstream os;
  os << "dataset,attack,defense,config_index,rows,errors,"
        "accuracy_mean,accuracy_std,macro_f1_mean,fidelity_mean,fidelity_std,"
        "fidelity_median,verification_mean,survival_mean\n";
  auto cell = [&](const std::vector<double>& xs, bool spread, bool med) {
    if (xs.empty()) return std::string(spread ? (med ? ",,," : ",,") : ",");
    SummaryStats s = summarize(xs);
    std::string out = "," + fmt(s.mean);
    if (spread) out += "," + fmt(s.stddev);
    if (med) out += "," + fmt(s.median);
    return out;
  };
  for (const auto& [key, b] : groups) {
    os << key << ',' << b.rows << ',' << b.errors;
    os << cell(b.acc, true, false);
    os << cell(b.f1, false, false);
    os << cell(b.fid, true, true);
    os << cell(b.verif, false, false);
    os << cell(b.surv, false, false);
    os << '\n';
  }
  return os.str();
}

// Budget curves: fidelity per (dataset, attack, budget) across seeds.
inline std::string report_curves(const std::vector<RunRecord>& records) {
  using record_detail::csv_escape;
  using record_detail::fmt;
  std::map<std::tuple<std::string, std::string, double>, std::vector<double>> groups;
  for (const auto& r : records) {
    if (r.error || !r.fidelity) continue;
    groups[{r.dataset, r.attack, r.budget_multiplier}].push_back(*r.fidelity);
  }
  std::ostringstream os;
  os << "dataset,attack,budget,mean,std\n";
  for (const auto& [key, xs] : groups) {
    SummaryStats s = summarize(xs);
    os << csv_escape(std::get<0>(key)) << ',' << csv_escape(std::get<1>(key)) << ','
       << fmt(std::get<2>(key)) << ',' << fmt(s.mean) << ',' << fmt(s.stddev) << '\n';
  }
  return os.str();
}

// Survival matrix: mean survival rate per (attack, defense) cell, with row,
// column, and grand means as margins.
inline std::string report_survival(const std::vector<RunRecord>& records) {
  using record_detail::csv_escape;
  using record_detail::fmt;
  std::vector<std::string> attacks, defenses;
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  for (const auto& r : records) {
    if (r.error || !r.survival_rate) continue;
    if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end())
      attacks.push_back(r.attack);
    if (std::find(defenses.begin(), defenses.end(), r.defense) == defenses.end())
      defenses.push_back(r.defense);
    cells[{r.attack, r.defense}].push_back(*r.survival_rate);
  }
  std::sort(attacks.begin(), attacks.end());
  std::sort(defenses.begin(), defenses.end());
  std::ostringstream os;
  os << "attack";
  for (const auto& d : defenses) os << ',' << csv_escape(d);
  os << ",row_mean\n";
  auto mean_of = [](const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  };
  std::map<std::string, std::vector<double>> col_samples;
  std::vector<double> all;
  for (const auto& a : attacks) {
    os << csv_escape(a);
    std::vector<double> row_samples;
    for (const auto& d : defenses) {
      auto it = cells.find({a, d});
      if (it == cells.end()) {
        os << ',';
        continue;
      }
      double m = mean_of(it->second);
      os << ',' << fmt(m);
      row_samples.push_back(m);
      col_samples[d].push_back(m);
      all.push_back(m);
    }
    os << ',' << (row_samples.empty() ? "" : fmt(mean_of(row_samples))) << '\n';
  }
  os << "col_mean";
  for (const auto& d : defenses) {
    auto it = col_samples.find(d);
    os << ',' << (it == col_samples.end() ? "" : fmt(mean_of(it->second)));
  }
  os << ',' << (all.empty() ? "" : fmt(mean_of(all))) << '\n';
  return os.str();
}

inline std::string report(const std::vector<RunRecord>& records, const std::string& kind) {
  if (kind == "leaderboard") return report_leaderboard(records);
  if (kind == "curves") return report_curves(records);
  if (kind == "survival") return report_survival(records);
  throw std::invalid_argument("unknown report kind: " + kind);
}

}  // namespace graphbench
