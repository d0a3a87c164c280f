#pragma once

// Black-box query endpoint over a trained (possibly defended) model.
//
// The endpoint is transductive: queries name nodes of the deployed graph,
// and answers come from a full-graph forward pass cached at construction.
// A response chain of inference-time transforms runs per answered row:
// logits-stage transforms first, then softmax, then probability-stage
// transforms in their declared order. Stochastic transforms draw from an
// oracle-owned seeded stream so runs stay reproducible.
//
// Budget accounting is exact and adversary-visible: every id in a batch is
// charged, duplicates included; an empty batch is free and unlogged; a
// batch that would exceed the budget is rejected whole (BudgetExhausted)
// and charges nothing. The query log records each answered batch with a
// steady-clock timestamp and exports to JSONL for offline analysis.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "graphbench/graph.hpp"
#include "graphbench/matrix.hpp"
#include "graphbench/nn.hpp"
#include "graphbench/rng.hpp"
#include "graphbench/splits.hpp"

namespace graphbench {

enum class ResponseMode { SoftProbs, HardLabel, Quantized };

inline const char* response_mode_name(ResponseMode m) {
  switch (m) {
    case ResponseMode::SoftProbs: return "soft_probs";
    case ResponseMode::HardLabel: return "hard_label";
    case ResponseMode::Quantized: return "quantized";
  }
  return "?";
}

inline ResponseMode parse_response_mode(const std::string& s) {
  if (s == "soft_probs") return ResponseMode::SoftProbs;
  if (s == "hard_label") return ResponseMode::HardLabel;
  if (s == "quantized") return ResponseMode::Quantized;
  throw std::invalid_argument("unknown response mode: " + s);
}

// One inference-time transform. logits_stage() picks which side of the
// softmax it runs on. apply() mutates a single response row; transforms
// that inspect the query stream get the queried node id and the deployed
// feature matrix, the rest ignore them.
struct InferenceTransform {
  virtual ~InferenceTransform() = default;
  virtual bool logits_stage() const { return false; }
  virtual void apply(std::vector<double>& row, std::uint32_t node,
                     const Matrix& features, Rng& rng) = 0;
  virtual std::string name() const = 0;
};

struct BudgetExhausted : std::runtime_error {
  std::size_t requested, used, limit;
  BudgetExhausted(std::size_t req, std::size_t u, std::size_t lim)
      : std::runtime_error("query budget exhausted: batch of " + std::to_string(req) +
                           " with " + std::to_string(u) + "/" + std::to_string(lim) + " used"),
        requested(req), used(u), limit(lim) {}
};

struct BudgetSpec {
  double multiplier = 1.0;
  std::size_t realized_nodes = 0;
  double realized_fraction = 0.0;  // realized_nodes / num_nodes
};

// realized_nodes = min(floor(multiplier * |test|), |query pool|). A
// multiplier so small that floor(m * |test|) = 0 cannot define a run.
inline BudgetSpec make_budget(const SplitSpec& splits, double multiplier, int num_nodes) {
  if (multiplier <= 0.0) throw std::invalid_argument("budget multiplier must be > 0");
  auto want = static_cast<std::size_t>(std::floor(multiplier * static_cast<double>(splits.test.size())));
  if (want == 0) throw std::invalid_argument("degenerate budget: floor(multiplier * |test|) = 0");
  BudgetSpec b;
  b.multiplier = multiplier;
  b.realized_nodes = std::min(want, splits.query.size());
  b.realized_fraction = static_cast<double>(b.realized_nodes) / static_cast<double>(num_nodes);
  return b;
}

// Uniform sample without replacement from the query split, ascending ids.
inline std::vector<std::uint32_t> sample_budget_nodes(const SplitSpec& splits,
                                                      const BudgetSpec& budget, Rng& rng) {
  auto picks = rng.sample_without_replacement(splits.query.size(), budget.realized_nodes);
  std::vector<std::uint32_t> ids(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) ids[i] = splits.query[picks[i]];
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct QueryResponse {
  ResponseMode mode = ResponseMode::SoftProbs;
  std::vector<std::uint32_t> ids;
  Matrix probs;             // one row per id; empty in hard-label mode
  std::vector<int> labels;  // argmax of the served row in every mode
};

struct QueryLogEntry {
  std::vector<std::uint32_t> ids;
  std::int64_t t_ns = 0;  // steady-clock nanoseconds since oracle creation
};

class QueryOracle {
 public:
  QueryOracle(const GnnModel& target, const Graph& graph, ResponseMode mode,
              std::vector<std::unique_ptr<InferenceTransform>> chain,
              std::size_t budget_limit, std::uint64_t noise_seed)
      : graph_(&graph),
        mode_(mode),
        chain_(std::move(chain)),
        budget_limit_(budget_limit),
        rng_(noise_seed),
        t0_(std::chrono::steady_clock::now()) {
    if (budget_limit_ < 1) throw std::invalid_argument("oracle budget must be >= 1");
    GraphInputs gi = build_inputs(graph.edges, graph.num_nodes);
    clean_logits_ = forward_logits(target, gi, graph.features);
    clean_ = predict(target, gi, graph.features);
    for (const auto& t : chain_)
      if (t->logits_stage()) has_logits_stage_ = true;
  }

  QueryResponse query(const std::vector<std::uint32_t>& ids) {
    auto q0 = std::chrono::steady_clock::now();
    QueryResponse r;
    r.mode = mode_;
    r.ids = ids;
    if (ids.empty()) return r;
    if (queries_used_ + ids.size() > budget_limit_)
      throw BudgetExhausted(ids.size(), queries_used_, budget_limit_);
    for (auto id : ids)
      if (id >= static_cast<std::uint32_t>(graph_->num_nodes))
        throw std::invalid_argument("query: node id out of range");

    int C = clean_logits_.cols;
    bool soft = mode_ != ResponseMode::HardLabel;
    if (soft) r.probs = Matrix(static_cast<int>(ids.size()), C);
    r.labels.resize(ids.size());

    std::vector<double> row(C);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto id = static_cast<int>(ids[k]);
      if (has_logits_stage_) {
        const double* li = clean_logits_.row(id);
        row.assign(li, li + C);
        for (const auto& t : chain_)
          if (t->logits_stage()) t->apply(row, ids[k], graph_->features, rng_);
        softmax_row(row);
      } else {
        const double* pi = clean_.probs.row(id);
        row.assign(pi, pi + C);
      }
      for (const auto& t : chain_)
        if (!t->logits_stage()) t->apply(row, ids[k], graph_->features, rng_);
      if (mode_ == ResponseMode::Quantized) quantize_row(row, 2);

      int best = 0;
      for (int c = 1; c < C; ++c)
        if (row[c] > row[best]) best = c;
      r.labels[k] = best;
      if (soft)
        for (int c = 0; c < C; ++c) r.probs.at(static_cast<int>(k), c) = row[c];
    }

    queries_used_ += ids.size();
    auto now = std::chrono::steady_clock::now();
    auto dt = now - t0_;
    log_.push_back({ids, std::chrono::duration_cast<std::chrono::nanoseconds>(dt).count()});
    service_ns_ += std::chrono::duration_cast<std::chrono::nanoseconds>(now - q0).count();
    return r;
  }

  // Cumulative wall time spent answering queries, for cost accounting.
  double service_seconds() const { return static_cast<double>(service_ns_) * 1e-9; }

  std::size_t queries_used() const { return queries_used_; }
  std::size_t budget_limit() const { return budget_limit_; }
  std::size_t remaining() const { return budget_limit_ - queries_used_; }
  ResponseMode mode() const { return mode_; }
  int num_classes() const { return clean_logits_.cols; }
  int num_nodes() const { return graph_->num_nodes; }
  int feat_dim() const { return graph_->feat_dim; }
  const std::vector<QueryLogEntry>& log() const { return log_; }
  const Graph& graph() const { return *graph_; }

  // One JSON object per answered batch.
  void export_log_jsonl(std::ostream& os) const {
    for (const auto& e : log_) {
      os << "{\"t_ns\":" << e.t_ns << ",\"n\":" << e.ids.size() << ",\"ids\":[";
      for (std::size_t i = 0; i < e.ids.size(); ++i) {
        if (i) os << ',';
        os << e.ids[i];
      }
      os << "]}\n";
    }
  }

  // Uniform levels k / (2^bits - 1), round to nearest, renormalize. A row
  // that quantizes to all zeros falls back to one-hot at its argmax.
  static void quantize_row(std::vector<double>& row, int bits) {
    double levels = static_cast<double>((1 << bits) - 1);
    int best = 0;
    double sum = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] > row[best]) best = static_cast<int>(c);
      row[c] = std::round(row[c] * levels) / levels;
      sum += row[c];
    }
    if (sum <= 0.0) {
      for (auto& v : row) v = 0.0;
      row[static_cast<std::size_t>(best)] = 1.0;
      return;
    }
    for (auto& v : row) v /= sum;
  }

 private:
  // Same operation order as softmax_rows so chains without logits-stage
  // transforms and chains with identity ones agree bit for bit.
  static void softmax_row(std::vector<double>& row) {
    double mx = row[0];
    for (std::size_t c = 1; c < row.size(); ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (auto& v : row) v /= z;
  }

  const Graph* graph_;
  ResponseMode mode_;
  std::vector<std::unique_ptr<InferenceTransform>> chain_;
  bool has_logits_stage_ = false;
  std::size_t budget_limit_;
  std::size_t queries_used_ = 0;
  std::int64_t service_ns_ = 0;
  Rng rng_;
  Matrix clean_logits_;
  Predictions clean_;
  std::vector<QueryLogEntry> log_;
  std::chrono::steady_clock::time_point t0_;
};

inline QueryOracle make_oracle(const GnnModel& target, const Graph& graph,
                               std::vector<std::unique_ptr<InferenceTransform>> chain,
                               ResponseMode mode, std::size_t budget_limit,
                               std::uint64_t noise_seed = 0x0bac1e) {
  return QueryOracle(target, graph, mode, std::move(chain), budget_limit, noise_seed);
}

}  // namespace graphbench
