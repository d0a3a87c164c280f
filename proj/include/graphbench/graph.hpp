#pragma once

// Attributed graph container and the adjacency forms used by the models.
// Graphs are undirected, simple (no self-loops, no duplicates) and store
// each edge once as (u < v). Node features are dense rows, labels are class
// ids in [0, num_classes).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "graphbench/matrix.hpp"

namespace graphbench {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

struct Graph {
  int num_nodes = 0;
  int feat_dim = 0;
  int num_classes = 0;
  std::string name;
  std::vector<Edge> edges;  // canonical: u < v, sorted, unique
  Matrix features;          // num_nodes x feat_dim
  std::vector<int> labels;  // num_nodes, values in [0, num_classes)
};

struct EdgeNormalizeReport {
  std::vector<Edge> edges;
  int dropped_self_loops = 0;
  int dropped_duplicates = 0;
};

// Canonicalise an arbitrary edge list: orient u < v, drop self-loops and
// duplicates, sort. Counts are reported so loaders can log what they fixed.
inline EdgeNormalizeReport normalize_edges(std::vector<Edge> raw) {
  EdgeNormalizeReport rep;
  for (auto& e : raw) {
    if (e.first == e.second) {
      ++rep.dropped_self_loops;
      continue;
    }
    if (e.first > e.second) std::swap(e.first, e.second);
    rep.edges.push_back(e);
  }
  std::sort(rep.edges.begin(), rep.edges.end());
  auto it = std::unique(rep.edges.begin(), rep.edges.end());
  rep.dropped_duplicates = static_cast<int>(rep.edges.end() - it);
  rep.edges.erase(it, rep.edges.end());
  return rep;
}

inline void validate_graph(const Graph& g) {
  if (g.num_nodes < 0 || g.feat_dim < 0 || g.num_classes <= 0)
    throw std::invalid_argument("graph: bad dimensions");
  if (g.features.rows != g.num_nodes || g.features.cols != g.feat_dim)
    throw std::invalid_argument("graph: feature matrix shape mismatch");
  if (static_cast<int>(g.labels.size()) != g.num_nodes)
    throw std::invalid_argument("graph: label count mismatch");
  for (int y : g.labels)
    if (y < 0 || y >= g.num_classes) throw std::invalid_argument("graph: label out of range");
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto& e = g.edges[i];
    if (e.first >= e.second) throw std::invalid_argument("graph: edge not canonical (u<v)");
    if (e.second >= static_cast<std::uint32_t>(g.num_nodes))
      throw std::invalid_argument("graph: edge endpoint out of range");
    if (i > 0 && !(g.edges[i - 1] < e)) throw std::invalid_argument("graph: edges not sorted unique");
  }
}

inline std::vector<int> degrees(const Graph& g) {
  std::vector<int> d(g.num_nodes, 0);
  for (const auto& e : g.edges) {
    ++d[e.first];
    ++d[e.second];
  }
  return d;
}

// Fraction of edges whose endpoints share a label. Graphs without edges get
// 0 by convention (callers that care should check num_edges).
inline double edge_homophily(const Graph& g) {
  if (g.edges.empty()) return 0.0;
  std::size_t same = 0;
  for (const auto& e : g.edges)
    if (g.labels[e.first] == g.labels[e.second]) ++same;
  return static_cast<double>(same) / static_cast<double>(g.edges.size());
}

struct StructuralStats {
  int num_nodes = 0;
  int num_edges = 0;
  double avg_degree = 0.0;       // 2E / N
  double density = 0.0;          // 2E / (N (N-1))
  double homophily = 0.0;        // edge homophily
  std::vector<int> degree_histogram;  // index = degree
};

inline StructuralStats structural_stats(const Graph& g) {
  StructuralStats s;
  s.num_nodes = g.num_nodes;
  s.num_edges = static_cast<int>(g.edges.size());
  if (g.num_nodes > 0)
    s.avg_degree = 2.0 * s.num_edges / static_cast<double>(g.num_nodes);
  if (g.num_nodes > 1)
    s.density = 2.0 * s.num_edges /
                (static_cast<double>(g.num_nodes) * (g.num_nodes - 1));
  s.homophily = edge_homophily(g);
  auto d = degrees(g);
  int dmax = 0;
  for (int x : d) dmax = std::max(dmax, x);
  s.degree_histogram.assign(dmax + 1, 0);
  for (int x : d) ++s.degree_histogram[x];
  return s;
}

// Sparse row-major matrix; each row holds (col, weight) sorted by col so
// accumulation order is fixed.
struct SparseRows {
  int n = 0;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;

  static SparseRows empty(int n) {
    SparseRows s;
    s.n = n;
    s.rows.resize(n);
    return s;
  }
  void sort_rows() {
    for (auto& r : rows) std::sort(r.begin(), r.end());
  }
};

// out = S * X
inline Matrix spmm(const SparseRows& S, const Matrix& X) {
  Matrix out(S.n, X.cols);
  for (int i = 0; i < S.n; ++i) {
    double* oi = out.row(i);
    for (const auto& [j, w] : S.rows[i]) {
      const double* xj = X.row(static_cast<int>(j));
      for (int c = 0; c < X.cols; ++c) oi[c] += w * xj[c];
    }
  }
  return out;
}

// Symmetric-normalised adjacency with self-loops:
// D^{-1/2} (A + I) D^{-1/2} where D counts A + I degrees.
inline SparseRows normalized_adjacency(const std::vector<Edge>& edges, int n) {
  std::vector<double> deg(n, 1.0);  // self-loop
  for (const auto& e : edges) {
    deg[e.first] += 1.0;
    deg[e.second] += 1.0;
  }
  std::vector<double> dinv(n);
  for (int i = 0; i < n; ++i) dinv[i] = 1.0 / std::sqrt(deg[i]);
  SparseRows s = SparseRows::empty(n);
  for (int i = 0; i < n; ++i) s.rows[i].push_back({static_cast<std::uint32_t>(i), dinv[i] * dinv[i]});
  for (const auto& e : edges) {
    double w = dinv[e.first] * dinv[e.second];
    s.rows[e.first].push_back({e.second, w});
    s.rows[e.second].push_back({e.first, w});
  }
  s.sort_rows();
  return s;
}

// Row-normalised closed-neighbourhood operator: D^{-1} (A + I). Each row
// averages the node itself and its neighbours. Also used as one step of
// feature-propagation smoothing.
inline SparseRows row_normalized_closed(const std::vector<Edge>& edges, int n) {
  std::vector<double> deg(n, 1.0);
  for (const auto& e : edges) {
    deg[e.first] += 1.0;
    deg[e.second] += 1.0;
  }
  SparseRows s = SparseRows::empty(n);
  for (int i = 0; i < n; ++i) s.rows[i].push_back({static_cast<std::uint32_t>(i), 1.0 / deg[i]});
  for (const auto& e : edges) {
    s.rows[e.first].push_back({e.second, 1.0 / deg[e.first]});
    s.rows[e.second].push_back({e.first, 1.0 / deg[e.second]});
  }
  s.sort_rows();
  return s;
}

inline SparseRows transpose(const SparseRows& s) {
  SparseRows t = SparseRows::empty(s.n);
  for (int i = 0; i < s.n; ++i)
    for (const auto& [j, w] : s.rows[i])
      t.rows[j].push_back({static_cast<std::uint32_t>(i), w});
  t.sort_rows();
  return t;
}

// Closed neighbourhoods (self first is not guaranteed; lists are sorted by id).
inline std::vector<std::vector<std::uint32_t>> closed_neighbors(const std::vector<Edge>& edges, int n) {
  std::vector<std::vector<std::uint32_t>> nb(n);
  for (int i = 0; i < n; ++i) nb[i].push_back(static_cast<std::uint32_t>(i));
  for (const auto& e : edges) {
    nb[e.first].push_back(e.second);
    nb[e.second].push_back(e.first);
  }
  for (auto& v : nb) std::sort(v.begin(), v.end());
  return nb;
}

}  // namespace graphbench
