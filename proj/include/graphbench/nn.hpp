#pragma once

// Two-layer graph neural networks with hand-derived gradients. Three
// backbones share one parameter container:
//
//   GCN    logits = A_hat * relu(A_hat * X * W0) * W1
//          with A_hat = D^{-1/2}(A+I)D^{-1/2}
//   SAGE   per layer: H' = act(H * W_self + M * H * W_neigh)
//          with M = D^{-1}(A+I), the closed-neighbourhood mean
//   GAT    single-head attention per layer over closed neighbourhoods,
//          scores LeakyReLU(a_src . Wh_i + a_dst . Wh_j) with slope 0.2,
//          softmax over each node's neighbourhood
//
// ReLU after the first layer, none after the second. Optional inverted
// dropout on the layer inputs during training. No autodiff: backward() is
// the analytic gradient, checked against finite differences in the tests.
// All accumulations run in fixed index order so training is bit-exact
// reproducible for a given seed.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphbench/graph.hpp"
#include "graphbench/matrix.hpp"
#include "graphbench/rng.hpp"

namespace graphbench {

enum class Backbone { GCN, SAGE, GAT };

inline const char* backbone_name(Backbone b) {
  switch (b) {
    case Backbone::GCN: return "GCN";
    case Backbone::SAGE: return "SAGE";
    default: return "GAT";
  }
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "GCN" || s == "gcn") return Backbone::GCN;
  if (s == "SAGE" || s == "sage") return Backbone::SAGE;
  if (s == "GAT" || s == "gat") return Backbone::GAT;
  throw std::invalid_argument("unknown backbone: " + s);
}

// Adjacency operators shared by the backbones, built once per graph.
struct GraphInputs {
  int n = 0;
  SparseRows norm_adj;    // GCN propagation (symmetric)
  SparseRows mean_adj;    // SAGE neighbourhood mean
  SparseRows mean_adj_t;  // its transpose, for backprop
  std::vector<std::vector<std::uint32_t>> nbrs;  // GAT closed neighbourhoods
};

inline GraphInputs build_inputs(const std::vector<Edge>& edges, int n) {
  GraphInputs gi;
  gi.n = n;
  gi.norm_adj = normalized_adjacency(edges, n);
  gi.mean_adj = row_normalized_closed(edges, n);
  gi.mean_adj_t = transpose(gi.mean_adj);
  gi.nbrs = closed_neighbors(edges, n);
  return gi;
}

// Parameter layout per backbone, in checkpoint declaration order:
//   GCN:  W0 (d x h), W1 (h x C)
//   SAGE: W0_self (d x h), W0_neigh (d x h), W1_self (h x C), W1_neigh (h x C)
//   GAT:  W0 (d x h), a0_src (1 x h), a0_dst (1 x h),
//         W1 (h x C), a1_src (1 x C), a1_dst (1 x C)
struct GnnModel {
  Backbone backbone = Backbone::GCN;
  int in_dim = 0;
  int hidden_dim = 16;
  int out_dim = 0;
  std::uint64_t init_seed = 0;
  std::vector<Matrix> weights;
};

inline Matrix glorot(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  double a = std::sqrt(6.0 / (rows + cols));
  for (double& v : m.a) v = rng.uniform(-a, a);
  return m;
}

inline GnnModel init_model(Backbone b, int in_dim, int hidden, int out_dim, std::uint64_t seed) {
  GnnModel m;
  m.backbone = b;
  m.in_dim = in_dim;
  m.hidden_dim = hidden;
  m.out_dim = out_dim;
  m.init_seed = seed;
  Rng rng(seed);
  switch (b) {
    case Backbone::GCN:
      m.weights = {glorot(in_dim, hidden, rng), glorot(hidden, out_dim, rng)};
      break;
    case Backbone::SAGE:
      m.weights = {glorot(in_dim, hidden, rng), glorot(in_dim, hidden, rng),
                   glorot(hidden, out_dim, rng), glorot(hidden, out_dim, rng)};
      break;
    case Backbone::GAT:
      m.weights = {glorot(in_dim, hidden, rng), glorot(1, hidden, rng), glorot(1, hidden, rng),
                   glorot(hidden, out_dim, rng), glorot(1, out_dim, rng), glorot(1, out_dim, rng)};
      break;
  }
  return m;
}

namespace nnd {  // forward/backward internals

inline double leaky_relu(double x) { return x > 0.0 ? x : 0.2 * x; }
inline double leaky_relu_grad(double x) { return x > 0.0 ? 1.0 : 0.2; }

// One GAT layer's saved state: projected features and attention softmax.
struct GatLayerCache {
  Matrix P;                               // H * W
  std::vector<double> s, t;               // a_src.P_i, a_dst.P_j
  std::vector<std::vector<double>> alpha; // per node, aligned with nbrs
  std::vector<std::vector<double>> pre;   // pre-activation scores
};

struct ForwardCache {
  Matrix X0;       // layer-1 input after dropout
  Matrix S;        // GCN: A_hat * X0          SAGE: M * X0
  Matrix Z1;       // first-layer pre-activation
  Matrix H1;       // relu(Z1)
  Matrix H1d;      // H1 after dropout
  Matrix T;        // GCN: A_hat * H1d         SAGE: M * H1d
  Matrix logits;
  GatLayerCache g0, g1;  // GAT only
};

inline void apply_dropout(Matrix& m, const Matrix* mask) {
  if (!mask) return;
  assert(mask->same_shape(m));
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] *= mask->a[i];
}

// GAT layer forward over closed neighbourhoods with a numerically stable
// per-node softmax.
inline Matrix gat_layer(const GraphInputs& gi, const Matrix& H, const Matrix& W,
                        const Matrix& a_src, const Matrix& a_dst, GatLayerCache& cache) {
  int n = gi.n;
  int dout = W.cols;
  cache.P = matmul(H, W);
  cache.s.assign(n, 0.0);
  cache.t.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* pi = cache.P.row(i);
    double si = 0.0, ti = 0.0;
    for (int c = 0; c < dout; ++c) {
      si += a_src.at(0, c) * pi[c];
      ti += a_dst.at(0, c) * pi[c];
    }
    cache.s[i] = si;
    cache.t[i] = ti;
  }
  cache.alpha.assign(n, {});
  cache.pre.assign(n, {});
  Matrix out(n, dout);
  for (int i = 0; i < n; ++i) {
    const auto& nb = gi.nbrs[i];
    auto& pre = cache.pre[i];
    auto& alpha = cache.alpha[i];
    pre.resize(nb.size());
    alpha.resize(nb.size());
    double mx = -1e300;
    for (std::size_t k = 0; k < nb.size(); ++k) {
      pre[k] = cache.s[i] + cache.t[nb[k]];
      double e = leaky_relu(pre[k]);
      alpha[k] = e;
      if (e > mx) mx = e;
    }
    double z = 0.0;
    for (std::size_t k = 0; k < nb.size(); ++k) {
      alpha[k] = std::exp(alpha[k] - mx);
      z += alpha[k];
    }
    double* oi = out.row(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      alpha[k] /= z;
      const double* pj = cache.P.row(static_cast<int>(nb[k]));
      for (int c = 0; c < dout; ++c) oi[c] += alpha[k] * pj[c];
    }
  }
  return out;
}

// Backward through one GAT layer. dOut is the gradient at the layer output;
// returns gradient wrt H and accumulates dW, da_src, da_dst.
inline Matrix gat_layer_backward(const GraphInputs& gi, const Matrix& H, const Matrix& W,
                                 const Matrix& a_src, const Matrix& a_dst,
                                 const GatLayerCache& cache, const Matrix& dOut,
                                 Matrix& dW, Matrix& da_src, Matrix& da_dst) {
  int n = gi.n;
  int dout = W.cols;
  Matrix dP(cache.P.rows, cache.P.cols);
  std::vector<double> ds(n, 0.0), dt(n, 0.0);

  for (int i = 0; i < n; ++i) {
    const auto& nb = gi.nbrs[i];
    const auto& alpha = cache.alpha[i];
    const auto& pre = cache.pre[i];
    const double* gi_row = dOut.row(i);
    // dalpha_k = dOut_i . P_{nb k}; dP_{nb k} += alpha_k dOut_i
    std::vector<double> dalpha(nb.size());
    double dot_sum = 0.0;
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const double* pj = cache.P.row(static_cast<int>(nb[k]));
      double d = 0.0;
      for (int c = 0; c < dout; ++c) d += gi_row[c] * pj[c];
      dalpha[k] = d;
      dot_sum += d * alpha[k];
      double* dpj = dP.row(static_cast<int>(nb[k]));
      for (int c = 0; c < dout; ++c) dpj[c] += alpha[k] * gi_row[c];
    }
    // softmax backward, then LeakyReLU slope
    for (std::size_t k = 0; k < nb.size(); ++k) {
      double de = alpha[k] * (dalpha[k] - dot_sum);
      double dpre = de * leaky_relu_grad(pre[k]);
      ds[i] += dpre;
      dt[nb[k]] += dpre;
    }
  }
  // s_i = a_src . P_i, t_i = a_dst . P_i
  for (int i = 0; i < n; ++i) {
    const double* pi = cache.P.row(i);
    double* dpi = dP.row(i);
    for (int c = 0; c < dout; ++c) {
      da_src.at(0, c) += ds[i] * pi[c];
      da_dst.at(0, c) += dt[i] * pi[c];
      dpi[c] += ds[i] * a_src.at(0, c) + dt[i] * a_dst.at(0, c);
    }
  }
  add_inplace(dW, matmul_tn(H, dP));
  return matmul_nt(dP, W);
}

}  // namespace nnd

// Forward pass. Dropout masks (already scaled by 1/(1-p)) are optional; pass
// nullptr at inference. The cache feeds backward().
inline nnd::ForwardCache forward(const GnnModel& m, const GraphInputs& gi, const Matrix& X,
                                 const Matrix* drop0 = nullptr, const Matrix* drop1 = nullptr) {
  nnd::ForwardCache c;
  c.X0 = X;
  nnd::apply_dropout(c.X0, drop0);
  switch (m.backbone) {
    case Backbone::GCN: {
      c.S = spmm(gi.norm_adj, c.X0);
      c.Z1 = matmul(c.S, m.weights[0]);
      break;
    }
    case Backbone::SAGE: {
      c.S = spmm(gi.mean_adj, c.X0);
      c.Z1 = matmul(c.X0, m.weights[0]);
      add_inplace(c.Z1, matmul(c.S, m.weights[1]));
      break;
    }
    case Backbone::GAT: {
      c.Z1 = nnd::gat_layer(gi, c.X0, m.weights[0], m.weights[1], m.weights[2], c.g0);
      break;
    }
  }
  c.H1 = c.Z1;
  for (double& v : c.H1.a) v = v > 0.0 ? v : 0.0;
  c.H1d = c.H1;
  nnd::apply_dropout(c.H1d, drop1);
  switch (m.backbone) {
    case Backbone::GCN: {
      c.T = spmm(gi.norm_adj, c.H1d);
      c.logits = matmul(c.T, m.weights[1]);
      break;
    }
    case Backbone::SAGE: {
      c.T = spmm(gi.mean_adj, c.H1d);
      c.logits = matmul(c.H1d, m.weights[2]);
      add_inplace(c.logits, matmul(c.T, m.weights[3]));
      break;
    }
    case Backbone::GAT: {
      c.logits = nnd::gat_layer(gi, c.H1d, m.weights[3], m.weights[4], m.weights[5], c.g1);
      break;
    }
  }
  return c;
}

inline Matrix forward_logits(const GnnModel& m, const GraphInputs& gi, const Matrix& X) {
  return forward(m, gi, X).logits;
}

// Analytic backward. dlogits is the loss gradient at the output; dH1_extra
// (optional) is an additional gradient applied at the post-ReLU hidden layer,
// used by regularisers that act on embeddings. Returns parameter gradients in
// model order and, when want_dX, the gradient wrt the (pre-dropout) input.
struct BackwardResult {
  std::vector<Matrix> grads;
  Matrix dX;
  bool has_dX = false;
};

inline BackwardResult backward(const GnnModel& m, const GraphInputs& gi, const nnd::ForwardCache& c,
                               const Matrix& dlogits, const Matrix* dH1_extra = nullptr,
                               bool want_dX = false, const Matrix* drop0 = nullptr,
                               const Matrix* drop1 = nullptr) {
  BackwardResult r;
  r.grads.reserve(m.weights.size());
  for (const auto& w : m.weights) r.grads.emplace_back(w.rows, w.cols);

  Matrix dH1d;  // gradient at H1d
  switch (m.backbone) {
    case Backbone::GCN: {
      // logits = T W1, T = A_hat H1d
      r.grads[1] = matmul_tn(c.T, dlogits);
      Matrix dT = matmul_nt(dlogits, m.weights[1]);
      dH1d = spmm(gi.norm_adj, dT);  // symmetric, so A^T = A
      break;
    }
    case Backbone::SAGE: {
      r.grads[2] = matmul_tn(c.H1d, dlogits);
      r.grads[3] = matmul_tn(c.T, dlogits);
      dH1d = matmul_nt(dlogits, m.weights[2]);
      Matrix tmp = matmul_nt(dlogits, m.weights[3]);
      add_inplace(dH1d, spmm(gi.mean_adj_t, tmp));
      break;
    }
    case Backbone::GAT: {
      dH1d = nnd::gat_layer_backward(gi, c.H1d, m.weights[3], m.weights[4], m.weights[5], c.g1,
                                     dlogits, r.grads[3], r.grads[4], r.grads[5]);
      break;
    }
  }

  nnd::apply_dropout(dH1d, drop1);  // same mask scales the gradient
  Matrix dZ1 = dH1d;
  if (dH1_extra) {
    // Extra term lands on H1 (after ReLU, before dropout).
    assert(dH1_extra->same_shape(dZ1));
    add_inplace(dZ1, *dH1_extra);
  }
  for (std::size_t i = 0; i < dZ1.a.size(); ++i)
    if (c.Z1.a[i] <= 0.0) dZ1.a[i] = 0.0;

  Matrix dX0;
  bool need_dX0 = want_dX;
  switch (m.backbone) {
    case Backbone::GCN: {
      // Z1 = S W0, S = A_hat X0
      r.grads[0] = matmul_tn(c.S, dZ1);
      if (need_dX0) {
        Matrix dS = matmul_nt(dZ1, m.weights[0]);
        dX0 = spmm(gi.norm_adj, dS);
      }
      break;
    }
    case Backbone::SAGE: {
      r.grads[0] = matmul_tn(c.X0, dZ1);
      r.grads[1] = matmul_tn(c.S, dZ1);
      if (need_dX0) {
        dX0 = matmul_nt(dZ1, m.weights[0]);
        Matrix tmp = matmul_nt(dZ1, m.weights[1]);
        add_inplace(dX0, spmm(gi.mean_adj_t, tmp));
      }
      break;
    }
    case Backbone::GAT: {
      Matrix dH = nnd::gat_layer_backward(gi, c.X0, m.weights[0], m.weights[1], m.weights[2], c.g0,
                                          dZ1, r.grads[0], r.grads[1], r.grads[2]);
      if (need_dX0) dX0 = dH;
      break;
    }
  }
  if (need_dX0) {
    nnd::apply_dropout(dX0, drop0);
    r.dX = std::move(dX0);
    r.has_dX = true;
  }
  return r;
}

// Row-wise stable softmax.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    const double* li = logits.row(i);
    double* pi = p.row(i);
    double mx = li[0];
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, li[c]);
    double z = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      pi[c] = std::exp(li[c] - mx);
      z += pi[c];
    }
    for (int c = 0; c < logits.cols; ++c) pi[c] /= z;
  }
  return p;
}

// Hard predictions: argmax with lowest-index tie-break.
inline std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows);
  for (int i = 0; i < probs.rows; ++i) {
    const double* pi = probs.row(i);
    int best = 0;
    for (int c = 1; c < probs.cols; ++c)
      if (pi[c] > pi[best]) best = c;
    out[i] = best;
  }
  return out;
}

struct Predictions {
  Matrix probs;            // rows sum to 1
  std::vector<int> hard;   // argmax, lowest index wins ties
};

inline Predictions predict(const GnnModel& m, const GraphInputs& gi, const Matrix& X) {
  Predictions p;
  p.probs = softmax_rows(forward_logits(m, gi, X));
  p.hard = argmax_rows(p.probs);
  return p;
}

// Masked losses. Hard targets use mean cross-entropy over the mask; soft
// targets use mean KL(target || softmax(logits)), whose gradient matches
// cross-entropy with soft targets. Both return the loss and write the
// gradient wrt logits into dlogits (zero outside the mask).
inline double ce_loss_grad(const Matrix& logits, const std::vector<int>& targets,
                           const std::vector<std::uint32_t>& mask, Matrix& dlogits) {
  assert(!mask.empty());
  Matrix p = softmax_rows(logits);
  dlogits = Matrix(logits.rows, logits.cols);
  double loss = 0.0;
  double inv = 1.0 / static_cast<double>(mask.size());
  for (auto i : mask) {
    const double* pi = p.row(static_cast<int>(i));
    int y = targets[i];
    loss -= std::log(std::max(pi[y], 1e-300));
    double* di = dlogits.row(static_cast<int>(i));
    for (int c = 0; c < logits.cols; ++c) di[c] = (pi[c] - (c == y ? 1.0 : 0.0)) * inv;
  }
  return loss * inv;
}

inline double kl_loss_grad(const Matrix& logits, const Matrix& soft_targets,
                           const std::vector<std::uint32_t>& mask, Matrix& dlogits) {
  assert(!mask.empty());
  Matrix p = softmax_rows(logits);
  dlogits = Matrix(logits.rows, logits.cols);
  double loss = 0.0;
  double inv = 1.0 / static_cast<double>(mask.size());
  for (auto i : mask) {
    const double* pi = p.row(static_cast<int>(i));
    const double* ti = soft_targets.row(static_cast<int>(i));
    double* di = dlogits.row(static_cast<int>(i));
    for (int c = 0; c < logits.cols; ++c) {
      if (ti[c] > 0.0) loss += ti[c] * (std::log(ti[c]) - std::log(std::max(pi[c], 1e-300)));
      di[c] = (pi[c] - ti[c]) * inv;
    }
  }
  return loss * inv;
}

// Adam with the classic coupled L2 weight decay (decay added to the
// gradient). Deterministic: state updates in parameter declaration order.
struct Adam {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  int t = 0;
  std::vector<Matrix> m, v;

  void init(const std::vector<Matrix>& weights) {
    m.clear();
    v.clear();
    for (const auto& w : weights) {
      m.emplace_back(w.rows, w.cols);
      v.emplace_back(w.rows, w.cols);
    }
    t = 0;
  }

  void step(std::vector<Matrix>& weights, const std::vector<Matrix>& grads) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t k = 0; k < weights.size(); ++k) {
      auto& w = weights[k].a;
      auto& gk = grads[k].a;
      auto& mk = m[k].a;
      auto& vk = v[k].a;
      for (std::size_t i = 0; i < w.size(); ++i) {
        double g = gk[i] + weight_decay * w[i];
        mk[i] = beta1 * mk[i] + (1.0 - beta1) * g;
        vk[i] = beta2 * vk[i] + (1.0 - beta2) * g * g;
        double mhat = mk[i] / bc1;
        double vhat = vk[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

struct TrainConfig {
  int epochs = 200;
  double lr = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  bool verbose = false;
};

struct TrainDivergence : std::runtime_error {
  int epoch;
  explicit TrainDivergence(int e)
      : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(e)),
        epoch(e) {}
};

// Hard or soft supervision for train(); exactly one of the two is active.
struct Supervision {
  const std::vector<int>* hard = nullptr;
  const Matrix* soft = nullptr;
};

inline Matrix make_dropout_mask(int rows, int cols, double p, Rng& rng) {
  Matrix m(rows, cols);
  double keep = 1.0 - p;
  for (double& v : m.a) v = (rng.uniform() >= p) ? 1.0 / keep : 0.0;
  return m;
}

// Full-batch training loop. Dropout masks are drawn per epoch from `rng`;
// with dropout = 0 the loop is deterministic in the weights alone. Throws
// TrainDivergence when the loss goes non-finite.
inline void train(GnnModel& model, const GraphInputs& gi, const Matrix& X,
                  const Supervision& sup, const std::vector<std::uint32_t>& mask,
                  const TrainConfig& cfg, Rng rng) {
  assert((sup.hard != nullptr) != (sup.soft != nullptr));
  if (mask.empty()) throw std::invalid_argument("train: empty supervision mask");
  Adam opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.init(model.weights);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Matrix mask0, mask1;
    const Matrix *d0 = nullptr, *d1 = nullptr;
    if (cfg.dropout > 0.0) {
      mask0 = make_dropout_mask(X.rows, X.cols, cfg.dropout, rng);
      mask1 = make_dropout_mask(X.rows, model.hidden_dim, cfg.dropout, rng);
      d0 = &mask0;
      d1 = &mask1;
    }
    auto cache = forward(model, gi, X, d0, d1);
    Matrix dlogits;
    double loss = sup.hard ? ce_loss_grad(cache.logits, *sup.hard, mask, dlogits)
                           : kl_loss_grad(cache.logits, *sup.soft, mask, dlogits);
    if (!std::isfinite(loss)) throw TrainDivergence(epoch);
    for (double v : cache.logits.a)
      if (!std::isfinite(v)) throw TrainDivergence(epoch);
    auto back = backward(model, gi, cache, dlogits, nullptr, false, d0, d1);
    opt.step(model.weights, back.grads);
  }
}

// ---- checkpoint format ----
// Binary, little-endian:
//   magic "GBCKPT1\n" (8 bytes)
//   int32 backbone, int32 in_dim, int32 hidden_dim, int32 out_dim
//   uint64 init_seed, uint32 matrix count
//   per matrix: int32 rows, int32 cols, rows*cols float64 row-major
// Matrices appear in the declaration order documented on GnnModel.

inline void save_checkpoint(const GnnModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write("GBCKPT1\n", 8);
  std::int32_t head[4] = {static_cast<std::int32_t>(m.backbone), m.in_dim, m.hidden_dim, m.out_dim};
  out.write(reinterpret_cast<const char*>(head), sizeof(head));
  std::uint64_t seed = m.init_seed;
  out.write(reinterpret_cast<const char*>(&seed), sizeof(seed));
  std::uint32_t cnt = static_cast<std::uint32_t>(m.weights.size());
  out.write(reinterpret_cast<const char*>(&cnt), sizeof(cnt));
  for (const auto& w : m.weights) {
    std::int32_t shape[2] = {w.rows, w.cols};
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(w.a.data()),
              static_cast<std::streamsize>(w.a.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

inline GnnModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "GBCKPT1\n")
    throw std::runtime_error("bad checkpoint magic in " + path);
  std::int32_t head[4];
  in.read(reinterpret_cast<char*>(head), sizeof(head));
  GnnModel m;
  if (head[0] < 0 || head[0] > 2) throw std::runtime_error("bad backbone tag in " + path);
  m.backbone = static_cast<Backbone>(head[0]);
  m.in_dim = head[1];
  m.hidden_dim = head[2];
  m.out_dim = head[3];
  std::uint64_t seed;
  in.read(reinterpret_cast<char*>(&seed), sizeof(seed));
  m.init_seed = seed;
  std::uint32_t cnt;
  in.read(reinterpret_cast<char*>(&cnt), sizeof(cnt));
  if (!in || cnt > 64) throw std::runtime_error("bad matrix count in " + path);
  m.weights.resize(cnt);
  for (auto& w : m.weights) {
    std::int32_t shape[2];
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    if (!in || shape[0] < 0 || shape[1] < 0) throw std::runtime_error("bad matrix shape in " + path);
    w = Matrix(shape[0], shape[1]);
    in.read(reinterpret_cast<char*>(w.a.data()),
            static_cast<std::streamsize>(w.a.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint " + path);
  return m;
}

}  // namespace graphbench
