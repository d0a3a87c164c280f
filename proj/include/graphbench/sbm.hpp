#pragma once

// Stochastic block model generator with a feature-signal knob. Classes are
// assigned round-robin (balanced), every unordered pair draws an edge with
// p_in (same class) or p_out (different class), and features are a per-class
// mean of the requested magnitude plus unit Gaussian noise. p_in far above
// p_out gives homophilous graphs; p_in == p_out gives homophily around the
// balanced-class baseline.

#include <stdexcept>
#include <string>

#include "graphbench/graph.hpp"
#include "graphbench/rng.hpp"

namespace graphbench {

struct SbmParams {
  int num_nodes = 600;
  int num_classes = 3;
  double p_in = 0.05;
  double p_out = 0.005;
  int feat_dim = 32;
  double feat_signal = 1.0;
  std::string name = "sbm";
};

inline Graph generate_sbm(const SbmParams& p, Rng rng) {
  if (p.num_nodes < p.num_classes || p.num_classes < 1)
    throw std::invalid_argument("sbm: need num_nodes >= num_classes >= 1");
  if (p.p_in < 0.0 || p.p_in > 1.0 || p.p_out < 0.0 || p.p_out > 1.0)
    throw std::invalid_argument("sbm: edge probabilities must be in [0,1]");

  Graph g;
  g.num_nodes = p.num_nodes;
  g.feat_dim = p.feat_dim;
  g.num_classes = p.num_classes;
  g.name = p.name;
  g.labels.resize(p.num_nodes);
  for (int i = 0; i < p.num_nodes; ++i) g.labels[i] = i % p.num_classes;

  // Class means: random directions scaled to feat_signal.
  Matrix means(p.num_classes, p.feat_dim);
  for (int c = 0; c < p.num_classes; ++c) {
    double norm2 = 0.0;
    for (int j = 0; j < p.feat_dim; ++j) {
      double v = rng.normal();
      means.at(c, j) = v;
      norm2 += v * v;
    }
    double s = norm2 > 0.0 ? p.feat_signal / std::sqrt(norm2) : 0.0;
    for (int j = 0; j < p.feat_dim; ++j) means.at(c, j) *= s;
  }

  g.features = Matrix(p.num_nodes, p.feat_dim);
  for (int i = 0; i < p.num_nodes; ++i) {
    const double* mu = means.row(g.labels[i]);
    for (int j = 0; j < p.feat_dim; ++j) g.features.at(i, j) = mu[j] + rng.normal();
  }

  // Pair order (u, v) with u < v ascending, so the draw sequence is fixed.
  for (std::uint32_t u = 0; u + 1 < static_cast<std::uint32_t>(p.num_nodes); ++u) {
    for (std::uint32_t v = u + 1; v < static_cast<std::uint32_t>(p.num_nodes); ++v) {
      double pe = (g.labels[u] == g.labels[v]) ? p.p_in : p.p_out;
      if (rng.uniform() < pe) g.edges.push_back({u, v});
    }
  }
  return g;
}

}  // namespace graphbench
