#pragma once

// Attacker-knowledge regimes. A regime says how much of the target graph the
// attacker can see: some fraction of real feature rows and some fraction of
// real edges. The four named settings are
//   both:      x_ratio = 1, a_ratio = 1
//   x_only:    features visible, no edges
//   a_only:    edges visible, features hidden
//   data_free: nothing real at all
// apply_regime produces the attacker's view; hidden feature rows are zeroed
// and flagged, hidden edges are dropped. Views never carry labels.

#include <stdexcept>
#include <string>
#include <vector>

#include "graphbench/graph.hpp"
#include "graphbench/rng.hpp"

namespace graphbench {

enum class RegimeKind { Both, XOnly, AOnly, DataFree };

struct Regime {
  RegimeKind kind = RegimeKind::Both;
  double x_ratio = 1.0;  // fraction of feature rows kept
  double a_ratio = 1.0;  // fraction of edges kept

  static Regime both() { return {RegimeKind::Both, 1.0, 1.0}; }
  static Regime x_only(double x = 1.0) { return {RegimeKind::XOnly, x, 0.0}; }
  static Regime a_only(double a = 1.0) { return {RegimeKind::AOnly, 0.0, a}; }
  static Regime data_free() { return {RegimeKind::DataFree, 0.0, 0.0}; }
};

inline const char* regime_name(RegimeKind k) {
  switch (k) {
    case RegimeKind::Both: return "both";
    case RegimeKind::XOnly: return "x_only";
    case RegimeKind::AOnly: return "a_only";
    default: return "data_free";
  }
}

inline Regime parse_regime(const std::string& s) {
  if (s == "both") return Regime::both();
  if (s == "x_only") return Regime::x_only();
  if (s == "a_only") return Regime::a_only();
  if (s == "data_free") return Regime::data_free();
  throw std::invalid_argument("unknown regime: " + s);
}

enum class Provenance : unsigned char { Real, Masked, Synthetic };

// What the attacker sees. Structural metadata (node count, feature width,
// class count) is considered public endpoint knowledge; labels are not here
// at all, the oracle is the only label source.
struct RegimeView {
  int num_nodes = 0;
  int feat_dim = 0;
  int num_classes = 0;
  Regime regime;
  Matrix visible_features;               // hidden rows zeroed
  std::vector<Edge> visible_edges;       // canonical subset of real edges
  std::vector<Provenance> row_flags;     // per node
  std::vector<Provenance> edge_flags;    // per visible edge (all Real here)
};

inline RegimeView apply_regime(const Graph& g, const Regime& r, Rng rng) {
  if (r.x_ratio < 0.0 || r.x_ratio > 1.0 || r.a_ratio < 0.0 || r.a_ratio > 1.0)
    throw std::invalid_argument("regime: ratios must be in [0,1]");

  RegimeView v;
  v.num_nodes = g.num_nodes;
  v.feat_dim = g.feat_dim;
  v.num_classes = g.num_classes;
  v.regime = r;
  v.visible_features = Matrix(g.num_nodes, g.feat_dim);
  v.row_flags.assign(g.num_nodes, Provenance::Masked);

  if (r.kind == RegimeKind::DataFree) {
    // Nothing real survives; rows stay zero and are marked synthetic so the
    // view provably carries no real content.
    v.row_flags.assign(g.num_nodes, Provenance::Synthetic);
    return v;
  }

  int keep_rows = static_cast<int>(r.x_ratio * g.num_nodes);
  auto kept = rng.sample_without_replacement(static_cast<std::uint32_t>(g.num_nodes),
                                             static_cast<std::uint32_t>(keep_rows));
  for (auto i : kept) {
    v.row_flags[i] = Provenance::Real;
    for (int j = 0; j < g.feat_dim; ++j) v.visible_features.at(i, j) = g.features.at(i, j);
  }

  int total_edges = static_cast<int>(g.edges.size());
  int keep_edges = static_cast<int>(r.a_ratio * total_edges);
  auto kept_e = rng.sample_without_replacement(static_cast<std::uint32_t>(total_edges),
                                               static_cast<std::uint32_t>(keep_edges));
  std::sort(kept_e.begin(), kept_e.end());
  for (auto idx : kept_e) v.visible_edges.push_back(g.edges[idx]);
  v.edge_flags.assign(v.visible_edges.size(), Provenance::Real);
  return v;
}

// Re-masking an existing view under kind=both keeps everything: identity on
// flags and content. Used to check idempotence.
inline RegimeView apply_regime(const RegimeView& v, const Regime& r) {
  if (r.kind != RegimeKind::Both)
    throw std::invalid_argument("regime: view re-application only supports kind=both");
  return v;
}

}  // namespace graphbench
