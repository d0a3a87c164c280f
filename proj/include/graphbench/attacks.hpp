#pragma once

// The twelve black-box extraction attacks. Every attack consumes the same
// inputs: a query oracle (the only label source), a regime view of the host
// graph, a budgeted node sample, and a seed. Ground-truth labels are not
// reachable from here; supervision comes exclusively from oracle responses.
//
// Family overview:
//   MEA0..MEA5   one-shot: build a training graph from the view, query the
//                budget nodes once, fit the surrogate on hard labels.
//   AdvMEA       adaptive: query in rounds, preferring nodes whose perturbed
//                features the interim surrogate is most sensitive to.
//   CEGA         adaptive: query in rounds, ranking candidates by a mix of
//                degree centrality and interim prediction entropy.
//   Realistic    reconstruct a full candidate adjacency with a learned edge
//                scorer, then run the MEA0 pipeline on the reconstruction.
//   DFEA I..III  data-free: train on synthetic Erdos-Renyi + Gaussian graphs
//                refreshed every round, with responses keyed by node id.
//                I distills soft responses via KL, II uses hard labels, III
//                trains two surrogates on disjoint response halves tied by a
//                symmetric-KL consistency term and returns the first.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "graphbench/graph.hpp"
#include "graphbench/matrix.hpp"
#include "graphbench/nn.hpp"
#include "graphbench/oracle.hpp"
#include "graphbench/regime.hpp"
#include "graphbench/rng.hpp"

namespace graphbench {

enum class AttackKind {
  MEA0,
  MEA1,
  MEA2,
  MEA3,
  MEA4,
  MEA5,
  AdvMEA,
  CEGA,
  Realistic,
  DFEA_I,
  DFEA_II,
  DFEA_III,
};

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::MEA0: return "MEA0";
    case AttackKind::MEA1: return "MEA1";
    case AttackKind::MEA2: return "MEA2";
    case AttackKind::MEA3: return "MEA3";
    case AttackKind::MEA4: return "MEA4";
    case AttackKind::MEA5: return "MEA5";
    case AttackKind::AdvMEA: return "AdvMEA";
    case AttackKind::CEGA: return "CEGA";
    case AttackKind::Realistic: return "Realistic";
    case AttackKind::DFEA_I: return "DFEA_I";
    case AttackKind::DFEA_II: return "DFEA_II";
    case AttackKind::DFEA_III: return "DFEA_III";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  static const AttackKind all[] = {
      AttackKind::MEA0,   AttackKind::MEA1, AttackKind::MEA2,      AttackKind::MEA3,
      AttackKind::MEA4,   AttackKind::MEA5, AttackKind::AdvMEA,    AttackKind::CEGA,
      AttackKind::Realistic, AttackKind::DFEA_I, AttackKind::DFEA_II, AttackKind::DFEA_III,
  };
  for (AttackKind k : all)
    if (s == attack_kind_name(k)) return k;
  throw std::invalid_argument("unknown attack kind: " + s);
}

inline std::vector<AttackKind> all_attack_kinds() {
  return {AttackKind::MEA0,   AttackKind::MEA1,   AttackKind::MEA2,   AttackKind::MEA3,
          AttackKind::MEA4,   AttackKind::MEA5,   AttackKind::AdvMEA, AttackKind::CEGA,
          AttackKind::Realistic, AttackKind::DFEA_I, AttackKind::DFEA_II, AttackKind::DFEA_III};
}

// Fixed schedules, recorded rather than tuned. The adaptive and data-free
// attacks spend their budget over five rounds; AdvMEA refreshes its interim
// surrogate with short 40-epoch fits between rounds, CEGA refits in full.
inline constexpr int kAdvRounds = 5;
inline constexpr int kAdvInterimEpochs = 40;
inline constexpr int kDfeaRounds = 5;
inline constexpr int kEdgeScorerHidden = 16;

struct AttackSpec {
  AttackKind kind = AttackKind::MEA0;
  Backbone surrogate_backbone = Backbone::GCN;
  int surrogate_hidden = 16;
  int epochs = 200;
  double lr = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;

  // kind-specific knobs, all logged per run
  int knn_k = 5;                    // MEA1/MEA5 feature graph
  double er_edge_prob = 0.01;       // MEA2 and DFEA synthetic structure
  int cega_rounds = 5;              // CEGA query rounds
  double cega_lambda = 0.5;         // centrality weight in the CEGA score
  double adv_step = 0.5;            // AdvMEA perturbation step; 0 disables
  int edge_model_epochs = 200;      // MEA4 logistic model / Realistic edge scorer
  double consistency_weight = 1.0;  // DFEA_III agreement term

  TrainConfig train_config() const { return {epochs, lr, weight_decay, dropout, false}; }
};

inline void check_attack_spec(const AttackSpec& sp) {
  if (sp.epochs < 1) throw std::invalid_argument("attack spec: epochs must be >= 1");
  if (sp.surrogate_hidden < 1) throw std::invalid_argument("attack spec: hidden width must be >= 1");
  if (sp.lr <= 0.0) throw std::invalid_argument("attack spec: lr must be positive");
  if (sp.dropout < 0.0 || sp.dropout >= 1.0)
    throw std::invalid_argument("attack spec: dropout must be in [0, 1)");
  if (sp.knn_k < 1) throw std::invalid_argument("attack spec: knn_k must be >= 1");
  if (sp.er_edge_prob <= 0.0 || sp.er_edge_prob > 1.0)
    throw std::invalid_argument("attack spec: er_edge_prob must be in (0, 1]");
  if (sp.cega_rounds < 1) throw std::invalid_argument("attack spec: cega_rounds must be >= 1");
  if (sp.cega_lambda < 0.0 || sp.cega_lambda > 1.0)
    throw std::invalid_argument("attack spec: cega_lambda must be in [0, 1]");
  if (sp.adv_step < 0.0) throw std::invalid_argument("attack spec: adv_step must be >= 0");
  if (sp.edge_model_epochs < 1)
    throw std::invalid_argument("attack spec: edge_model_epochs must be >= 1");
  if (sp.consistency_weight < 0.0)
    throw std::invalid_argument("attack spec: consistency_weight must be >= 0");
}

struct SurrogateResult {
  GnnModel surrogate;
  std::size_t queries_used = 0;
  double wall_time = 0.0;  // seconds, steady clock
  std::vector<std::string> construction_log;
};

// ---- graph construction helpers ----

inline Matrix gaussian_features(int n, int d, Rng& rng) {
  Matrix X(n, d);
  for (double& v : X.a) v = rng.normal();
  return X;
}

inline std::vector<Edge> er_edges(int n, double p, Rng& rng) {
  std::vector<Edge> out;
  for (std::uint32_t u = 0; u + 1 < static_cast<std::uint32_t>(n); ++u)
    for (std::uint32_t v = u + 1; v < static_cast<std::uint32_t>(n); ++v)
      if (rng.uniform() < p) out.emplace_back(u, v);
  return out;
}

// Cosine k-nearest-neighbour graph. Zero rows neither pick nor serve as
// neighbours (cosine is undefined there); ties break toward lower index.
inline std::vector<Edge> knn_edges(const Matrix& X, int k) {
  int n = X.rows, d = X.cols;
  std::vector<double> norm(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* r = X.row(i);
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += r[j] * r[j];
    norm[i] = std::sqrt(s);
  }
  std::vector<Edge> out;
  std::vector<std::pair<double, std::uint32_t>> cand;
  for (int u = 0; u < n; ++u) {
    if (norm[u] == 0.0) continue;
    cand.clear();
    const double* ru = X.row(u);
    for (int v = 0; v < n; ++v) {
      if (v == u || norm[v] == 0.0) continue;
      double dot = 0.0;
      const double* rv = X.row(v);
      for (int j = 0; j < d; ++j) dot += ru[j] * rv[j];
      cand.emplace_back(dot / (norm[u] * norm[v]), static_cast<std::uint32_t>(v));
    }
    std::size_t take = std::min<std::size_t>(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    for (std::size_t i = 0; i < take; ++i) {
      std::uint32_t v = cand[i].second;
      out.emplace_back(std::min<std::uint32_t>(u, v), std::max<std::uint32_t>(u, v));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Edges of the subgraph induced by the closed 2-hop neighbourhood of `seeds`.
inline std::vector<Edge> induced_two_hop_edges(int n, const std::vector<Edge>& edges,
                                               const std::vector<std::uint32_t>& seeds,
                                               std::size_t* node_count = nullptr) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const Edge& e : edges) {
    adj[e.first].push_back(e.second);
    adj[e.second].push_back(e.first);
  }
  std::vector<char> in(n, 0);
  std::vector<std::uint32_t> frontier;
  for (std::uint32_t s : seeds)
    if (!in[s]) {
      in[s] = 1;
      frontier.push_back(s);
    }
  for (int hop = 0; hop < 2; ++hop) {
    std::vector<std::uint32_t> next;
    for (std::uint32_t u : frontier)
      for (std::uint32_t v : adj[u])
        if (!in[v]) {
          in[v] = 1;
          next.push_back(v);
        }
    frontier = std::move(next);
  }
  if (node_count) *node_count = static_cast<std::size_t>(std::count(in.begin(), in.end(), 1));
  std::vector<Edge> out;
  for (const Edge& e : edges)
    if (in[e.first] && in[e.second]) out.push_back(e);
  return out;
}

// One step of mean smoothing over the closed neighbourhood:
// row i becomes the average of x_i and its neighbours' features.
inline Matrix mean_smooth(int n, const std::vector<Edge>& edges, const Matrix& X) {
  Matrix out = X;
  std::vector<double> deg(n, 1.0);
  for (const Edge& e : edges) {
    const double* a = X.row(e.first);
    const double* b = X.row(e.second);
    double* oa = out.row(e.first);
    double* ob = out.row(e.second);
    for (int j = 0; j < X.cols; ++j) {
      oa[j] += b[j];
      ob[j] += a[j];
    }
    deg[e.first] += 1.0;
    deg[e.second] += 1.0;
  }
  for (int i = 0; i < n; ++i) {
    double* r = out.row(i);
    for (int j = 0; j < X.cols; ++j) r[j] /= deg[i];
  }
  return out;
}

// Distinct uniform non-edges (u < v, never in `edges`). May return fewer than
// `k` pairs if the attempt cap is hit on a near-complete graph.
inline std::vector<Edge> sample_non_edges(int n, const std::vector<Edge>& edges, std::size_t k,
                                          Rng& rng) {
  std::unordered_set<std::uint64_t> taken;
  taken.reserve(edges.size() + k);
  auto pack = [](std::uint32_t u, std::uint32_t v) {
    return (static_cast<std::uint64_t>(u) << 32) | v;
  };
  for (const Edge& e : edges) taken.insert(pack(e.first, e.second));
  std::vector<Edge> out;
  std::size_t attempts = 0, cap = 100 * k + 1000;
  while (out.size() < k && attempts++ < cap) {
    auto u = static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(n)));
    auto v = static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(n)));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    if (!taken.insert(pack(u, v)).second) continue;
    out.emplace_back(u, v);
  }
  return out;
}

// ---- edge models ----

// Logistic edge predictor on the symmetric pair embedding
// [x_u * x_v, |x_u - x_v|, 1]; plain full-batch gradient descent.
struct LogisticEdgeModel {
  std::vector<double> w;
  std::vector<double> mu, sd;  // per-dim standardization fitted on the training pairs

  static void pair_feature(const Matrix& X, std::uint32_t u, std::uint32_t v,
                           std::vector<double>& out) {
    int d = X.cols;
    out.resize(2 * d + 1);
    const double* a = X.row(static_cast<int>(u));
    const double* b = X.row(static_cast<int>(v));
    for (int j = 0; j < d; ++j) {
      out[j] = a[j] * b[j];
      out[d + j] = std::fabs(a[j] - b[j]);
    }
    out[2 * d] = 1.0;
  }

  void standardize(std::vector<double>& phi) const {
    for (std::size_t j = 0; j + 1 < phi.size(); ++j) phi[j] = (phi[j] - mu[j]) / sd[j];
  }

  void train(const Matrix& X, const std::vector<Edge>& pos, const std::vector<Edge>& neg,
             int steps, double lr) {
    int dim = 2 * X.cols + 1;
    w.assign(dim, 0.0);
    mu.assign(dim, 0.0);
    sd.assign(dim, 1.0);
    std::size_t m = pos.size() + neg.size();
    if (m == 0) return;
    std::vector<std::vector<double>> phi(m);
    std::vector<double> y(m);
    std::size_t i = 0;
    for (const Edge& e : pos) {
      pair_feature(X, e.first, e.second, phi[i]);
      y[i++] = 1.0;
    }
    for (const Edge& e : neg) {
      pair_feature(X, e.first, e.second, phi[i]);
      y[i++] = 0.0;
    }
    // Hadamard products are heavy-tailed; without standardization the
    // gradient steps are dominated by a few large dims and the model stays
    // close to its prior, which floods the reconstruction with
    // cross-cluster false positives.
    for (int j = 0; j + 1 < dim; ++j) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        s += phi[r][j];
        s2 += phi[r][j] * phi[r][j];
      }
      mu[j] = s / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mu[j] * mu[j];
      sd[j] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    for (std::size_t r = 0; r < m; ++r) standardize(phi[r]);
    std::vector<double> grad(dim);
    for (int s = 0; s < steps; ++s) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        double z = std::inner_product(phi[r].begin(), phi[r].end(), w.begin(), 0.0);
        double p = 1.0 / (1.0 + std::exp(-z));
        double g = (p - y[r]) / static_cast<double>(m);
        for (int j = 0; j < dim; ++j) grad[j] += g * phi[r][j];
      }
      for (int j = 0; j < dim; ++j) w[j] -= lr * grad[j];
    }
  }

  double prob(const Matrix& X, std::uint32_t u, std::uint32_t v) const {
    std::vector<double> phi;
    pair_feature(X, u, v, phi);
    standardize(phi);
    double z = std::inner_product(phi.begin(), phi.end(), w.begin(), 0.0);
    return 1.0 / (1.0 + std::exp(-z));
  }
};

// Two-layer perceptron edge scorer on ordered concatenated pairs [x_u, x_v].
// Trained on both orders of each example; scores are symmetrized.
struct EdgeScorer {
  int feat_dim = 0;
  std::vector<Matrix> w;  // [2d x hidden, hidden x 1]

  void init(int d, std::uint64_t seed) {
    feat_dim = d;
    Rng rng(seed);
    w.clear();
    w.push_back(glorot(2 * d, kEdgeScorerHidden, rng));
    w.push_back(glorot(kEdgeScorerHidden, 1, rng));
  }

  static void fill_row(const Matrix& X, std::uint32_t u, std::uint32_t v, double* out) {
    int d = X.cols;
    const double* a = X.row(static_cast<int>(u));
    const double* b = X.row(static_cast<int>(v));
    std::copy(a, a + d, out);
    std::copy(b, b + d, out + d);
  }

  // Full-batch Adam on binary cross-entropy; returns the final loss.
  double train(const Matrix& X, const std::vector<Edge>& pos, const std::vector<Edge>& neg,
               int epochs, double lr) {
    std::size_t m = 2 * (pos.size() + neg.size());
    if (m == 0) return 0.0;
    Matrix Z(static_cast<int>(m), 2 * feat_dim);
    std::vector<double> y(m);
    std::size_t r = 0;
    for (const Edge& e : pos) {
      fill_row(X, e.first, e.second, Z.row(static_cast<int>(r)));
      y[r++] = 1.0;
      fill_row(X, e.second, e.first, Z.row(static_cast<int>(r)));
      y[r++] = 1.0;
    }
    for (const Edge& e : neg) {
      fill_row(X, e.first, e.second, Z.row(static_cast<int>(r)));
      y[r++] = 0.0;
      fill_row(X, e.second, e.first, Z.row(static_cast<int>(r)));
      y[r++] = 0.0;
    }
    Adam opt;
    opt.lr = lr;
    opt.weight_decay = 0.0;
    opt.init(w);
    double loss = 0.0;
    for (int ep = 0; ep < epochs; ++ep) {
      Matrix H = matmul(Z, w[0]);
      for (double& v : H.a) v = v > 0.0 ? v : 0.0;
      Matrix s = matmul(H, w[1]);
      loss = 0.0;
      Matrix ds(s.rows, 1);
      for (std::size_t i = 0; i < m; ++i) {
        double p = 1.0 / (1.0 + std::exp(-s.a[i]));
        double pc = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
        loss -= (y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc)) / static_cast<double>(m);
        ds.a[i] = (p - y[i]) / static_cast<double>(m);
      }
      Matrix dW1 = matmul_tn(H, ds);
      Matrix dH = matmul_nt(ds, w[1]);
      for (std::size_t i = 0; i < H.a.size(); ++i)
        if (H.a[i] <= 0.0) dH.a[i] = 0.0;
      Matrix dW0 = matmul_tn(Z, dH);
      std::vector<Matrix> grads;
      grads.push_back(std::move(dW0));
      grads.push_back(std::move(dW1));
      opt.step(w, grads);
    }
    return loss;
  }

  double logit(const Matrix& X, std::uint32_t u, std::uint32_t v) const {
    int d = X.cols;
    const double* a = X.row(static_cast<int>(u));
    const double* b = X.row(static_cast<int>(v));
    double z = 0.0;
    for (int h = 0; h < kEdgeScorerHidden; ++h) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) {
        acc += a[j] * w[0].at(j, h);
        acc += b[j] * w[0].at(d + j, h);
      }
      if (acc > 0.0) z += acc * w[1].at(h, 0);
    }
    return z;
  }

  double score(const Matrix& X, std::uint32_t u, std::uint32_t v) const {
    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    return 0.5 * (sig(logit(X, u, v)) + sig(logit(X, v, u)));
  }
};

// Probability that a positive outranks a negative (ties count half).
inline double ranking_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw std::invalid_argument("ranking_auc: empty side");
  double wins = 0.0;
  for (double p : pos)
    for (double q : neg) {
      if (p > q)
        wins += 1.0;
      else if (p == q)
        wins += 0.5;
    }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// ---- response bookkeeping ----

struct ResponseStore {
  std::vector<std::uint32_t> order;  // answered ids in query order
  std::vector<std::uint32_t> mask;   // sorted unique answered ids
  std::vector<int> hard;             // full length; -1 where unanswered
  Matrix soft;                       // full n x C; rows valid where answered
  bool have_soft = false;

  ResponseStore(int n, int C) : hard(n, -1), soft(n, C) {}

  void add(const QueryResponse& r) {
    bool rows = r.probs.rows > 0;
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
      std::uint32_t id = r.ids[i];
      if (hard[id] < 0) order.push_back(id);
      hard[id] = r.labels[i];
      if (rows) {
        const double* src = r.probs.row(static_cast<int>(i));
        std::copy(src, src + soft.cols, soft.row(static_cast<int>(id)));
        have_soft = true;
      }
    }
    mask = order;
    std::sort(mask.begin(), mask.end());
  }

  bool have(std::uint32_t id) const { return hard[id] >= 0; }
};

// Issue one batch, trimmed to the remaining budget. Returns false once the
// budget is gone so round-based attacks can finish with what they have.
inline bool ask(QueryOracle& oracle, std::vector<std::uint32_t> ids, ResponseStore& store,
                std::vector<std::string>& log) {
  if (ids.empty()) return false;
  if (ids.size() > oracle.remaining()) {
    log.push_back("budget: trimmed a batch of " + std::to_string(ids.size()) +
                  " to the remaining " + std::to_string(oracle.remaining()));
    ids.resize(oracle.remaining());
  }
  if (ids.empty()) {
    log.push_back("budget exhausted: finishing with queries already answered");
    return false;
  }
  store.add(oracle.query(ids));
  return true;
}

// Split a budget into round batches: even chunks with the remainder on the
// last; a budget smaller than the round count collapses to a single batch.
inline std::vector<std::size_t> chunk_sizes(std::size_t total, int rounds) {
  if (total == 0) return {};
  std::size_t b = total / static_cast<std::size_t>(rounds);
  if (b == 0) return {total};
  std::vector<std::size_t> out(static_cast<std::size_t>(rounds), b);
  out.back() += total - b * static_cast<std::size_t>(rounds);
  return out;
}

// ---- shared surrogate fit ----

inline GnnModel fit_surrogate(const AttackSpec& sp, int n, int d, int C,
                              const std::vector<Edge>& edges, const Matrix& X,
                              const ResponseStore& store, const SeedTree& st) {
  if (store.mask.empty())
    throw std::runtime_error("attack received no oracle responses before the budget ran out");
  auto gi = build_inputs(edges, n);
  GnnModel m = init_model(sp.surrogate_backbone, d, sp.surrogate_hidden, C,
                          st.child("surrogate-init").seed());
  Supervision sup;
  sup.hard = &store.hard;
  train(m, gi, X, sup, store.mask, sp.train_config(), st.rng("surrogate-train"));
  return m;
}

// ---- MEA family ----

inline void attack_mea_family(const AttackSpec& sp, QueryOracle& oracle, const RegimeView& view,
                              const std::vector<std::uint32_t>& budget_nodes, const SeedTree& st,
                              SurrogateResult& res) {
  int n = view.num_nodes, d = view.feat_dim, C = view.num_classes;
  auto& log = res.construction_log;
  const Matrix* X = &view.visible_features;
  Matrix own_x;
  std::vector<Edge> edges;
  switch (sp.kind) {
    case AttackKind::MEA0:
      edges = view.visible_edges;
      log.push_back("view graph as-is: " + std::to_string(edges.size()) + " edges");
      break;
    case AttackKind::MEA1:
      if (!view.visible_edges.empty()) {
        edges = view.visible_edges;
        log.push_back("structure visible: kept " + std::to_string(edges.size()) + " edges");
      } else {
        edges = knn_edges(*X, sp.knn_k);
        log.push_back("no visible structure: cosine kNN k=" + std::to_string(sp.knn_k) +
                      " built " + std::to_string(edges.size()) + " edges");
      }
      break;
    case AttackKind::MEA2: {
      // Fully synthetic inputs; the view contributes nothing but its shape,
      // so the surrogate is identical across information regimes.
      Rng syn = st.rng("synthetic");
      own_x = gaussian_features(n, d, syn);
      X = &own_x;
      edges = er_edges(n, sp.er_edge_prob, syn);
      log.push_back("synthetic graph: ER p=" + std::to_string(sp.er_edge_prob) + ", " +
                    std::to_string(edges.size()) + " edges, Gaussian features");
      break;
    }
    case AttackKind::MEA3: {
      std::size_t kept = 0;
      edges = induced_two_hop_edges(n, view.visible_edges, budget_nodes, &kept);
      log.push_back("2-hop induced subgraph of the queried set: " + std::to_string(kept) +
                    " nodes, " + std::to_string(edges.size()) + " edges");
      break;
    }
    case AttackKind::MEA4: {
      const auto& pos = view.visible_edges;
      if (pos.empty()) {
        log.push_back("no visible edges to fit the logistic edge model: empty reconstruction");
      } else {
        Rng neg_rng = st.rng("edge-negatives");
        auto neg = sample_non_edges(n, pos, pos.size(), neg_rng);
        LogisticEdgeModel lem;
        lem.train(*X, pos, neg, sp.edge_model_epochs, 0.1);
        for (std::uint32_t u = 0; u + 1 < static_cast<std::uint32_t>(n); ++u)
          for (std::uint32_t v = u + 1; v < static_cast<std::uint32_t>(n); ++v)
            if (lem.prob(*X, u, v) > 0.5) edges.emplace_back(u, v);
        log.push_back("logistic edge model (threshold 0.5): " + std::to_string(edges.size()) +
                      " edges from " + std::to_string(pos.size()) + " positives");
      }
      break;
    }
    case AttackKind::MEA5: {
      std::vector<Edge> base;
      if (!view.visible_edges.empty())
        base = view.visible_edges;
      else
        base = knn_edges(*X, sp.knn_k);
      own_x = mean_smooth(n, base, *X);
      X = &own_x;
      edges = std::move(base);
      log.push_back("one mean-smoothing step over " + std::to_string(edges.size()) + " edges");
      break;
    }
    default:
      throw std::logic_error("attack_mea_family: not a MEA kind");
  }
  ResponseStore store(n, C);
  ask(oracle, budget_nodes, store, log);
  res.surrogate = fit_surrogate(sp, n, d, C, edges, *X, store, st);
}

// ---- adaptive attacks ----

inline void attack_adv_mea(const AttackSpec& sp, QueryOracle& oracle, const RegimeView& view,
                           const std::vector<std::uint32_t>& budget_nodes, const SeedTree& st,
                           SurrogateResult& res) {
  int n = view.num_nodes, d = view.feat_dim, C = view.num_classes;
  auto& log = res.construction_log;
  const Matrix& X = view.visible_features;
  auto gi = build_inputs(view.visible_edges, n);
  double lo = 0.0, hi = 0.0;
  if (!X.a.empty()) {
    auto mm = std::minmax_element(X.a.begin(), X.a.end());
    lo = *mm.first;
    hi = *mm.second;
  }

  // Preference order fixed up front; with adv_step = 0 every round keeps it,
  // so selection degenerates to a random sample of the pool.
  std::vector<std::uint32_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0u);
  Rng shuffle_rng = st.rng("pool-shuffle");
  shuffle_rng.shuffle(pool);

  ResponseStore store(n, C);
  auto sizes = chunk_sizes(budget_nodes.size(), kAdvRounds);
  if (sizes.size() == 1)
    log.push_back("budget below the round schedule: one random batch, no adaptive rounds");
  GnnModel interim;
  bool have_interim = false;
  for (std::size_t r = 0; r < sizes.size(); ++r) {
    std::vector<std::uint32_t> cands;
    for (std::uint32_t id : pool)
      if (!store.have(id)) cands.push_back(id);
    if (cands.empty()) break;
    if (have_interim && sp.adv_step > 0.0) {
      auto cache = forward(interim, gi, X);
      Matrix probs = softmax_rows(cache.logits);
      std::vector<int> self_hard = argmax_rows(cache.logits);
      std::vector<std::uint32_t> cmask = cands;
      std::sort(cmask.begin(), cmask.end());
      Matrix dlogits;
      ce_loss_grad(cache.logits, self_hard, cmask, dlogits);
      auto back = backward(interim, gi, cache, dlogits, nullptr, true);
      Matrix Xp = X;
      for (std::uint32_t c : cands) {
        double* rp = Xp.row(static_cast<int>(c));
        const double* g = back.dX.row(static_cast<int>(c));
        for (int j = 0; j < d; ++j) {
          double s = g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
          rp[j] = std::clamp(rp[j] + sp.adv_step * s, lo, hi);
        }
      }
      Matrix probs_p = softmax_rows(forward_logits(interim, gi, Xp));
      std::vector<double> score(n, 0.0);
      for (std::uint32_t c : cands) {
        const double* a = probs.row(static_cast<int>(c));
        const double* b = probs_p.row(static_cast<int>(c));
        double s = 0.0;
        for (int j = 0; j < C; ++j) s += std::fabs(a[j] - b[j]);
        score[c] = s;
      }
      std::stable_sort(cands.begin(), cands.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return score[a] > score[b]; });
    }
    cands.resize(std::min(cands.size(), sizes[r]));
    if (!ask(oracle, cands, store, log)) break;
    if (r + 1 < sizes.size()) {
      interim = init_model(sp.surrogate_backbone, d, sp.surrogate_hidden, C,
                           st.child("interim-init", r).seed());
      TrainConfig icfg = sp.train_config();
      icfg.epochs = kAdvInterimEpochs;
      Supervision sup;
      sup.hard = &store.hard;
      train(interim, gi, X, sup, store.mask, icfg, st.child("interim-train", r).rng("drop"));
      have_interim = true;
    }
  }
  log.push_back("adaptive selection done: " + std::to_string(store.order.size()) +
                " nodes over " + std::to_string(sizes.size()) + " rounds, step " +
                std::to_string(sp.adv_step));
  res.surrogate = fit_surrogate(sp, n, d, C, view.visible_edges, X, store, st);
}

inline void attack_cega(const AttackSpec& sp, QueryOracle& oracle, const RegimeView& view,
                        const std::vector<std::uint32_t>& budget_nodes, const SeedTree& st,
                        SurrogateResult& res) {
  int n = view.num_nodes, d = view.feat_dim, C = view.num_classes;
  auto& log = res.construction_log;
  const Matrix& X = view.visible_features;
  auto gi = build_inputs(view.visible_edges, n);

  std::vector<double> deg(n, 0.0);
  for (const Edge& e : view.visible_edges) {
    deg[e.first] += 1.0;
    deg[e.second] += 1.0;
  }
  double max_deg = *std::max_element(deg.begin(), deg.end());
  double log_c = std::log(static_cast<double>(C));

  ResponseStore store(n, C);
  auto sizes = chunk_sizes(budget_nodes.size(), sp.cega_rounds);
  GnnModel interim;
  bool trained = false;
  for (std::size_t r = 0; r < sizes.size(); ++r) {
    std::vector<std::uint32_t> cands;
    for (std::uint32_t id = 0; id < static_cast<std::uint32_t>(n); ++id)
      if (!store.have(id)) cands.push_back(id);
    if (cands.empty()) break;
    // Entropy of the interim prediction; before any fit the surrogate is
    // uninformative, so the term is a constant and centrality decides alone.
    std::vector<double> ent(n, 1.0);
    if (trained) {
      Predictions p = predict(interim, gi, X);
      for (std::uint32_t id : cands) {
        const double* row = p.probs.row(static_cast<int>(id));
        double h = 0.0;
        for (int j = 0; j < C; ++j)
          if (row[j] > 0.0) h -= row[j] * std::log(row[j]);
        ent[id] = h / log_c;
      }
    }
    std::vector<double> score(n, 0.0);
    for (std::uint32_t id : cands)
      score[id] = sp.cega_lambda * (max_deg > 0.0 ? deg[id] / max_deg : 0.0) +
                  (1.0 - sp.cega_lambda) * ent[id];
    std::sort(cands.begin(), cands.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return a < b;
    });
    cands.resize(std::min(cands.size(), sizes[r]));
    if (!ask(oracle, cands, store, log)) break;
    interim = init_model(sp.surrogate_backbone, d, sp.surrogate_hidden, C,
                         st.child("round-init", r).seed());
    Supervision sup;
    sup.hard = &store.hard;
    train(interim, gi, X, sup, store.mask, sp.train_config(), st.child("round-train", r).rng("drop"));
    trained = true;
  }
  if (!trained)
    throw std::runtime_error("attack received no oracle responses before the budget ran out");
  log.push_back("centrality/entropy selection: " + std::to_string(store.order.size()) +
                " nodes over " + std::to_string(sizes.size()) + " rounds, lambda " +
                std::to_string(sp.cega_lambda));
  res.surrogate = std::move(interim);
}

// ---- full-pipeline reconstruction ----

inline void attack_realistic(const AttackSpec& sp, QueryOracle& oracle, const RegimeView& view,
                             const std::vector<std::uint32_t>& budget_nodes, const SeedTree& st,
                             SurrogateResult& res) {
  int n = view.num_nodes, d = view.feat_dim, C = view.num_classes;
  auto& log = res.construction_log;
  const Matrix& X = view.visible_features;

  auto t0 = std::chrono::steady_clock::now();
  const auto& pos = view.visible_edges;
  Rng neg_rng = st.rng("edge-negatives");
  // With no visible edges the scorer still fits, on sampled negatives alone;
  // the reconstruction then comes out (correctly) empty.
  std::size_t neg_count = pos.empty() ? 32 : pos.size();
  auto neg = sample_non_edges(n, pos, neg_count, neg_rng);
  EdgeScorer scorer;
  scorer.init(d, st.child("edge-init").seed());
  scorer.train(X, pos, neg, sp.edge_model_epochs, sp.lr);
  std::vector<Edge> rec;
  for (std::uint32_t u = 0; u + 1 < static_cast<std::uint32_t>(n); ++u)
    for (std::uint32_t v = u + 1; v < static_cast<std::uint32_t>(n); ++v)
      if (scorer.score(X, u, v) > 0.5) rec.emplace_back(u, v);
  double edge_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log.push_back("edge scorer: " + std::to_string(rec.size()) + " edges reconstructed from " +
                std::to_string(pos.size()) + " positives / " + std::to_string(neg.size()) +
                " negatives in " + std::to_string(edge_secs) + "s (dominates wall time)");

  ResponseStore store(n, C);
  ask(oracle, budget_nodes, store, log);
  res.surrogate = fit_surrogate(sp, n, d, C, rec, X, store, st);
}

// ---- data-free attacks ----

// Core data-free trainer: one surrogate, synthetic graph refreshed per round,
// optimizer state carried across rounds. Exposed so the consistency variant's
// weight-zero behaviour can be checked against a standalone run.
inline GnnModel dfea_train_single(const AttackSpec& sp, int n, int d, int C,
                                  const std::vector<std::vector<std::uint32_t>>& round_ids,
                                  const std::vector<int>& hard_full, const Matrix* soft_full,
                                  const SeedTree& st, const std::string& stream_label) {
  GnnModel m = init_model(sp.surrogate_backbone, d, sp.surrogate_hidden, C,
                          st.child(stream_label + "-init").seed());
  Rng drop = st.rng(stream_label + "-train");
  Adam opt;
  opt.lr = sp.lr;
  opt.weight_decay = sp.weight_decay;
  opt.init(m.weights);
  int per_round = std::max(1, sp.epochs / kDfeaRounds);
  std::vector<std::uint32_t> mask;
  for (std::size_t r = 0; r < round_ids.size(); ++r) {
    mask.insert(mask.end(), round_ids[r].begin(), round_ids[r].end());
    std::sort(mask.begin(), mask.end());
    if (mask.empty()) continue;
    Rng syn = st.rng("synthetic/" + std::to_string(r));
    Matrix Xs = gaussian_features(n, d, syn);
    auto gi = build_inputs(er_edges(n, sp.er_edge_prob, syn), n);
    for (int e = 0; e < per_round; ++e) {
      Matrix m0, m1;
      const Matrix *d0 = nullptr, *d1 = nullptr;
      if (sp.dropout > 0.0) {
        m0 = make_dropout_mask(n, d, sp.dropout, drop);
        m1 = make_dropout_mask(n, sp.surrogate_hidden, sp.dropout, drop);
        d0 = &m0;
        d1 = &m1;
      }
      auto cache = forward(m, gi, Xs, d0, d1);
      Matrix dl;
      double loss = soft_full ? kl_loss_grad(cache.logits, *soft_full, mask, dl)
                              : ce_loss_grad(cache.logits, hard_full, mask, dl);
      if (!std::isfinite(loss)) throw TrainDivergence(static_cast<int>(r) * per_round + e);
      for (double v : cache.logits.a)
        if (!std::isfinite(v)) throw TrainDivergence(static_cast<int>(r) * per_round + e);
      auto back = backward(m, gi, cache, dl, nullptr, false, d0, d1);
      opt.step(m.weights, back.grads);
    }
  }
  return m;
}

// Symmetric KL between two softmax rows, with gradients in both logit rows.
// Returns KL(pa||pb) + KL(pb||pa); dza/dzb may be null.
inline double symmetric_kl_row(const double* za, const double* zb, int C, double* dza,
                               double* dzb) {
  std::vector<double> lpa(C), lpb(C), pa(C), pb(C);
  auto log_softmax = [C](const double* z, std::vector<double>& lp, std::vector<double>& p) {
    double mx = z[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < C; ++j) sum += std::exp(z[j] - mx);
    double lse = mx + std::log(sum);
    for (int j = 0; j < C; ++j) {
      lp[j] = z[j] - lse;
      p[j] = std::exp(lp[j]);
    }
  };
  log_softmax(za, lpa, pa);
  log_softmax(zb, lpb, pb);
  double value = 0.0, mean_a = 0.0, mean_b = 0.0;
  for (int j = 0; j < C; ++j) {
    double u = lpa[j] - lpb[j];
    value += (pa[j] - pb[j]) * u;
    mean_a += pa[j] * u;
    mean_b += pb[j] * u;
  }
  for (int j = 0; j < C; ++j) {
    double u = lpa[j] - lpb[j];
    if (dza) dza[j] = pa[j] * (u - mean_a) + (pa[j] - pb[j]);
    if (dzb) dzb[j] = pb[j] * (mean_b - u) + (pb[j] - pa[j]);
  }
  return value;
}

inline void attack_dfea(const AttackSpec& sp, QueryOracle& oracle, const RegimeView& view,
                        const std::vector<std::uint32_t>& budget_nodes, const SeedTree& st,
                        SurrogateResult& res) {
  int n = view.num_nodes, d = view.feat_dim, C = view.num_classes;
  auto& log = res.construction_log;
  bool want_soft = sp.kind == AttackKind::DFEA_I;
  if (want_soft && oracle.mode() == ResponseMode::HardLabel) {
    log.push_back("oracle returns hard labels only: downgraded to hard-label training");
    want_soft = false;
  }

  ResponseStore store(n, C);
  auto sizes = chunk_sizes(budget_nodes.size(), kDfeaRounds);
  std::vector<std::vector<std::uint32_t>> round_new;
  std::size_t offset = 0;
  for (std::size_t k : sizes) {
    std::size_t before = store.order.size();
    std::vector<std::uint32_t> chunk(budget_nodes.begin() + offset,
                                     budget_nodes.begin() + offset + k);
    offset += k;
    bool ok = ask(oracle, chunk, store, log);
    round_new.emplace_back(store.order.begin() + before, store.order.end());
    if (!ok) break;
  }
  if (store.mask.empty())
    throw std::runtime_error("attack received no oracle responses before the budget ran out");
  log.push_back("synthetic rounds: " + std::to_string(round_new.size()) + ", ER p=" +
                std::to_string(sp.er_edge_prob) + ", " + std::to_string(store.order.size()) +
                " responses");

  if (sp.kind != AttackKind::DFEA_III) {
    res.surrogate = dfea_train_single(sp, n, d, C, round_new, store.hard,
                                      want_soft ? &store.soft : nullptr, st, "solo");
    return;
  }

  // Split responses into halves by query-order parity.
  std::vector<std::vector<std::uint32_t>> ra(round_new.size()), rb(round_new.size());
  std::size_t gpos = 0;
  for (std::size_t r = 0; r < round_new.size(); ++r)
    for (std::uint32_t id : round_new[r]) ((gpos++ % 2 == 0) ? ra : rb)[r].push_back(id);

  if (sp.consistency_weight == 0.0) {
    log.push_back("consistency weight 0: independent hard-label run on the first half");
    res.surrogate = dfea_train_single(sp, n, d, C, ra, store.hard, nullptr, st, "solo");
    return;
  }

  // Joint loop: two surrogates on their halves, plus the agreement term over
  // every synthetic node. Streams mirror the standalone trainer exactly.
  GnnModel ma = init_model(sp.surrogate_backbone, d, sp.surrogate_hidden, C,
                           st.child("solo-init").seed());
  GnnModel mb = init_model(sp.surrogate_backbone, d, sp.surrogate_hidden, C,
                           st.child("pair-init").seed());
  Rng drop_a = st.rng("solo-train");
  Rng drop_b = st.rng("pair-train");
  Adam opt_a, opt_b;
  opt_a.lr = opt_b.lr = sp.lr;
  opt_a.weight_decay = opt_b.weight_decay = sp.weight_decay;
  opt_a.init(ma.weights);
  opt_b.init(mb.weights);
  int per_round = std::max(1, sp.epochs / kDfeaRounds);
  std::vector<std::uint32_t> mask_a, mask_b;
  std::vector<double> dza(C), dzb(C);
  for (std::size_t r = 0; r < round_new.size(); ++r) {
    mask_a.insert(mask_a.end(), ra[r].begin(), ra[r].end());
    mask_b.insert(mask_b.end(), rb[r].begin(), rb[r].end());
    std::sort(mask_a.begin(), mask_a.end());
    std::sort(mask_b.begin(), mask_b.end());
    Rng syn = st.rng("synthetic/" + std::to_string(r));
    Matrix Xs = gaussian_features(n, d, syn);
    auto gi = build_inputs(er_edges(n, sp.er_edge_prob, syn), n);
    for (int e = 0; e < per_round; ++e) {
      Matrix a0, a1, b0, b1;
      const Matrix *da0 = nullptr, *da1 = nullptr, *db0 = nullptr, *db1 = nullptr;
      if (sp.dropout > 0.0) {
        a0 = make_dropout_mask(n, d, sp.dropout, drop_a);
        a1 = make_dropout_mask(n, sp.surrogate_hidden, sp.dropout, drop_a);
        b0 = make_dropout_mask(n, d, sp.dropout, drop_b);
        b1 = make_dropout_mask(n, sp.surrogate_hidden, sp.dropout, drop_b);
        da0 = &a0;
        da1 = &a1;
        db0 = &b0;
        db1 = &b1;
      }
      auto ca = forward(ma, gi, Xs, da0, da1);
      auto cb = forward(mb, gi, Xs, db0, db1);
      Matrix dla, dlb;
      double la = mask_a.empty() ? 0.0 : ce_loss_grad(ca.logits, store.hard, mask_a, dla);
      double lb = mask_b.empty() ? 0.0 : ce_loss_grad(cb.logits, store.hard, mask_b, dlb);
      if (dla.rows == 0) dla = Matrix(n, C);
      if (dlb.rows == 0) dlb = Matrix(n, C);
      double lc = 0.0;
      double inv_n = 1.0 / static_cast<double>(n);
      for (int i = 0; i < n; ++i) {
        lc += symmetric_kl_row(ca.logits.row(i), cb.logits.row(i), C, dza.data(), dzb.data());
        double* ra_ = dla.row(i);
        double* rb_ = dlb.row(i);
        for (int j = 0; j < C; ++j) {
          ra_[j] += sp.consistency_weight * inv_n * dza[j];
          rb_[j] += sp.consistency_weight * inv_n * dzb[j];
        }
      }
      lc *= inv_n;
      int ep = static_cast<int>(r) * per_round + e;
      if (!std::isfinite(la + lb + lc)) throw TrainDivergence(ep);
      for (double v : ca.logits.a)
        if (!std::isfinite(v)) throw TrainDivergence(ep);
      for (double v : cb.logits.a)
        if (!std::isfinite(v)) throw TrainDivergence(ep);
      auto ba = backward(ma, gi, ca, dla, nullptr, false, da0, da1);
      auto bb = backward(mb, gi, cb, dlb, nullptr, false, db0, db1);
      opt_a.step(ma.weights, ba.grads);
      opt_b.step(mb.weights, bb.grads);
    }
  }
  log.push_back("consistency-trained pair (weight " + std::to_string(sp.consistency_weight) +
                "): returning the first surrogate");
  res.surrogate = std::move(ma);
}

// ---- dispatcher ----

inline SurrogateResult run_attack(const AttackSpec& sp, QueryOracle& oracle,
                                  const RegimeView& view,
                                  const std::vector<std::uint32_t>& budget_nodes,
                                  std::uint64_t seed) {
  check_attack_spec(sp);
  if (view.num_nodes != oracle.num_nodes() || view.num_classes != oracle.num_classes())
    throw std::invalid_argument("run_attack: view shape does not match the oracle endpoint");
  if (budget_nodes.empty()) throw std::invalid_argument("run_attack: empty budget sample");

  SeedTree st(seed);
  SurrogateResult res;
  auto t0 = std::chrono::steady_clock::now();
  std::size_t used0 = oracle.queries_used();
  switch (sp.kind) {
    case AttackKind::MEA0:
    case AttackKind::MEA1:
    case AttackKind::MEA2:
    case AttackKind::MEA3:
    case AttackKind::MEA4:
    case AttackKind::MEA5:
      attack_mea_family(sp, oracle, view, budget_nodes, st, res);
      break;
    case AttackKind::AdvMEA:
      attack_adv_mea(sp, oracle, view, budget_nodes, st, res);
      break;
    case AttackKind::CEGA:
      attack_cega(sp, oracle, view, budget_nodes, st, res);
      break;
    case AttackKind::Realistic:
      attack_realistic(sp, oracle, view, budget_nodes, st, res);
      break;
    case AttackKind::DFEA_I:
    case AttackKind::DFEA_II:
    case AttackKind::DFEA_III:
      attack_dfea(sp, oracle, view, budget_nodes, st, res);
      break;
  }
  res.queries_used = oracle.queries_used() - used0;
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace graphbench
