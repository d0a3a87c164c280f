#pragma once

// The twelve defenses and their verification procedures.
//
// Five training-time kinds embed ownership evidence into the model:
//   BackdoorWM        trigger-feature backdoor on a subset of train nodes
//   RandomWM          disjoint random watermark component trained jointly
//   SurviveWM         key inputs relabelled to teacher predictions + SNNL pull
//   ImperceptibleWM   optimized bounded feature perturbation on held-out nodes
//   Integrity         fingerprint of least-margin predictions (no retraining
//                     beyond the clean fit; detection, not watermarking)
//
// Seven inference-time kinds transform responses at the endpoint:
//   OP_low/OP_high    Gaussian noise on logits (sigma 0.05 / 0.20)
//   PR_2bit           probabilities quantized to 2-bit levels, renormalized
//   PR_top1           one-hot argmax
//   PRADA             query-distance detector, serves uniform after alarm
//   AdaptMisinfo      reversed probabilities for low-confidence queries
//   GradRedir         mass moved from runner-up to least-likely class,
//                     argmax preserved by construction
//
// verify() is a pure function of (artifact, subject, host graph): run the
// probe inputs through the subject and count matches. The same call scores
// the defended target (ownership verification) and an extracted surrogate
// (watermark survival).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphbench/graph.hpp"
#include "graphbench/matrix.hpp"
#include "graphbench/metrics.hpp"
#include "graphbench/nn.hpp"
#include "graphbench/oracle.hpp"
#include "graphbench/rng.hpp"
#include "graphbench/splits.hpp"

namespace graphbench {

enum class DefenseKind {
  RandomWM,
  BackdoorWM,
  SurviveWM,
  ImperceptibleWM,
  Integrity,
  OP_low,
  OP_high,
  PR_2bit,
  PR_top1,
  PRADA,
  AdaptMisinfo,
  GradRedir,
};

inline const char* defense_kind_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::RandomWM: return "RandomWM";
    case DefenseKind::BackdoorWM: return "BackdoorWM";
    case DefenseKind::SurviveWM: return "SurviveWM";
    case DefenseKind::ImperceptibleWM: return "ImperceptibleWM";
    case DefenseKind::Integrity: return "Integrity";
    case DefenseKind::OP_low: return "OP_low";
    case DefenseKind::OP_high: return "OP_high";
    case DefenseKind::PR_2bit: return "PR_2bit";
    case DefenseKind::PR_top1: return "PR_top1";
    case DefenseKind::PRADA: return "PRADA";
    case DefenseKind::AdaptMisinfo: return "AdaptMisinfo";
    case DefenseKind::GradRedir: return "GradRedir";
  }
  return "?";
}

inline DefenseKind parse_defense_kind(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(DefenseKind::GradRedir); ++k)
    if (s == defense_kind_name(static_cast<DefenseKind>(k))) return static_cast<DefenseKind>(k);
  throw std::invalid_argument("unknown defense kind: " + s);
}

inline bool is_training_defense(DefenseKind k) {
  switch (k) {
    case DefenseKind::RandomWM:
    case DefenseKind::BackdoorWM:
    case DefenseKind::SurviveWM:
    case DefenseKind::ImperceptibleWM:
    case DefenseKind::Integrity: return true;
    default: return false;
  }
}

struct DefenseSpec {
  DefenseKind kind = DefenseKind::OP_low;

  // BackdoorWM
  double trigger_rate = 0.01;   // fraction of train nodes carrying the trigger
  int trigger_dims = 20;        // feature dims set to trigger_value (capped at feat_dim)
  double trigger_value = 0.99;
  double joint_alpha = 0.3;     // weight of the trigger term in the joint loss

  // RandomWM
  double wm_node_ratio = 0.002;
  int wm_node_count = 0;        // > 0 overrides the ratio

  // SurviveWM
  double wm_strength = 0.25;    // key-label loss weight
  double snnl_alpha = 0.1;
  double key_ratio = 0.1;       // fraction of train nodes used as key inputs
  double t_opt = 20.0;          // SNNL temperature

  // ImperceptibleWM
  double epsilon = 0.25;        // inf-norm bound on the trigger perturbation

  // Integrity
  int fingerprint_count = 50;

  // inference-time kinds
  double sigma = 0.05;          // OP noise; default_defense sets 0.20 for OP_high
  int bits = 2;                 // PR quantization
  int prada_window = 100;
  double prada_threshold = 0.5;
  double misinfo_threshold = 0.6;
  double redirect_strength = 0.5;

  TrainConfig train;            // training-time kinds reuse the target recipe
};

inline DefenseSpec default_defense(DefenseKind k) {
  DefenseSpec sp;
  sp.kind = k;
  if (k == DefenseKind::OP_high) sp.sigma = 0.20;
  // The perturbation trigger competes with the whole clean loss; an even
  // split keeps the small held-out trigger set learnable.
  if (k == DefenseKind::ImperceptibleWM) sp.joint_alpha = 0.5;
  return sp;
}

// ---- soft nearest-neighbor loss ----
//
//   snnl = -mean_i log( sum_{j != i, y_j = y_i} exp(-|h_i - h_j|^2 / T)
//                     / sum_{j != i}            exp(-|h_i - h_j|^2 / T) )
//
// Rows whose class has no other member are skipped (their numerator is an
// empty sum); the mean runs over the counted rows. Both loss and gradient
// shift the exponents per row before exponentiating, so far-apart
// embeddings do not underflow the ratio.

namespace snnl_detail {

inline double dist2(const Matrix& H, int i, int j) {
  const double* a = H.row(i);
  const double* b = H.row(j);
  double s = 0.0;
  for (int c = 0; c < H.cols; ++c) {
    double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

}  // namespace snnl_detail

inline double snnl(const Matrix& H, const std::vector<int>& labels, double temperature) {
  int n = H.rows;
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("snnl: label count mismatch");
  if (temperature <= 0.0) throw std::invalid_argument("snnl: temperature must be > 0");
  double total = 0.0;
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, -snnl_detail::dist2(H, i, j) / temperature);
    if (!std::isfinite(mx)) continue;  // n == 1
    double num = 0.0, den = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double w = std::exp(-snnl_detail::dist2(H, i, j) / temperature - mx);
      den += w;
      if (labels[j] == labels[i]) num += w;
    }
    if (num <= 0.0) continue;  // no same-class partner in reach
    total += -std::log(num / den);
    ++counted;
  }
  return counted > 0 ? total / static_cast<double>(counted) : 0.0;
}

inline Matrix snnl_grad(const Matrix& H, const std::vector<int>& labels, double temperature) {
  int n = H.rows;
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("snnl: label count mismatch");
  Matrix g(n, H.cols);
  // First pass mirrors the loss to find which rows count.
  std::vector<char> counts(n, 0);
  std::vector<double> shift(n, 0.0);
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, -snnl_detail::dist2(H, i, j) / temperature);
    if (!std::isfinite(mx)) continue;
    shift[i] = mx;
    double num = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i])
        num += std::exp(-snnl_detail::dist2(H, i, j) / temperature - mx);
    if (num > 0.0) {
      counts[i] = 1;
      ++counted;
    }
  }
  if (counted == 0) return g;
  double inv_m = 1.0 / static_cast<double>(counted);
  for (int i = 0; i < n; ++i) {
    if (!counts[i]) continue;
    double num = 0.0, den = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double w = std::exp(-snnl_detail::dist2(H, i, j) / temperature - shift[i]);
      den += w;
      if (labels[j] == labels[i]) num += w;
    }
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double w = std::exp(-snnl_detail::dist2(H, i, j) / temperature - shift[i]);
      bool same = labels[j] == labels[i];
      // loss_i = -log num_i + log den_i; d/dw_ij = 1/den_i - same/num_i;
      // dw_ij/dd_ij = -w_ij/T. Shifted ratios equal the unshifted ones.
      double dl_dd = inv_m * ((same ? w / num : 0.0) - w / den) / temperature;
      for (int c = 0; c < H.cols; ++c) {
        double diff = 2.0 * (H.at(i, c) - H.at(j, c));
        g.at(i, c) += dl_dd * diff;
        g.at(j, c) -= dl_dd * diff;
      }
    }
  }
  return g;
}

// ---- verification ----

enum class VerifyMode { TriggerHit, WmGraphAcc, FingerprintMatch, MarkerAcc };

inline const char* verify_mode_name(VerifyMode m) {
  switch (m) {
    case VerifyMode::TriggerHit: return "trigger_hit";
    case VerifyMode::WmGraphAcc: return "wm_graph_acc";
    case VerifyMode::FingerprintMatch: return "fingerprint_match";
    case VerifyMode::MarkerAcc: return "marker_acc";
  }
  return "?";
}

struct VerificationReport {
  double rate = 0.0;
  VerifyMode mode = VerifyMode::TriggerHit;
  std::size_t n_probes = 0;
};

// Everything verify() needs, with no reference back to training state.
struct WatermarkArtifact {
  DefenseKind kind = DefenseKind::BackdoorWM;

  // BackdoorWM / ImperceptibleWM / SurviveWM / Integrity probe nodes
  std::vector<std::uint32_t> trigger_nodes;
  std::vector<int> trigger_dims;
  double trigger_value = 0.0;
  int target_class = -1;
  Matrix perturbation;  // ImperceptibleWM: |trigger_nodes| x feat_dim

  Graph wm_graph;       // RandomWM: standalone watermark component
  int wm_base = -1;     // RandomWM: first watermark node id in the deployment

  std::vector<std::uint32_t> key_nodes;  // SurviveWM
  std::vector<int> key_labels;

  std::vector<std::uint32_t> fingerprint_nodes;  // Integrity
  std::vector<int> fingerprint_labels;
};

struct DefendedModel {
  GnnModel model;
  WatermarkArtifact artifact;
  Graph deployed;  // what the endpoint serves; differs from the host graph
                   // for BackdoorWM (features) and RandomWM (extra component)
};

struct DefenseTrainError : std::runtime_error {
  DefenseKind kind;
  std::uint64_t seed;
  int epoch;
  DefenseTrainError(DefenseKind k, std::uint64_t s, int e)
      : std::runtime_error(std::string(defense_kind_name(k)) +
                           " training diverged at epoch " + std::to_string(e) +
                           " (seed " + std::to_string(s) + ")"),
        kind(k), seed(s), epoch(e) {}
};

namespace defense_detail {

inline void check_finite(double loss, const Matrix& logits, DefenseKind k,
                         std::uint64_t seed, int epoch) {
  if (!std::isfinite(loss)) throw DefenseTrainError(k, seed, epoch);
  for (double v : logits.a)
    if (!std::isfinite(v)) throw DefenseTrainError(k, seed, epoch);
}

inline std::vector<std::uint32_t> pick_from(const std::vector<std::uint32_t>& pool,
                                            std::size_t count, Rng& rng) {
  auto sel = rng.sample_without_replacement(static_cast<std::uint32_t>(pool.size()),
                                            static_cast<std::uint32_t>(count));
  std::vector<std::uint32_t> out(sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) out[i] = pool[sel[i]];
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::uint32_t> minus_sorted(const std::vector<std::uint32_t>& a,
                                               const std::vector<std::uint32_t>& b) {
  std::vector<std::uint32_t> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace defense_detail

// ---- training-time defenses ----

inline DefendedModel train_backdoor(const DefenseSpec& sp, const Graph& g,
                                    const SplitSpec& splits, Backbone b, int hidden,
                                    std::uint64_t seed) {
  SeedTree st(seed);
  Rng pick = st.rng("trigger");
  auto count = static_cast<std::size_t>(std::floor(sp.trigger_rate * static_cast<double>(splits.train.size())));
  count = std::min(std::max<std::size_t>(count, 1), splits.train.size());
  auto trig = defense_detail::pick_from(splits.train, count, pick);
  int ell = std::min(sp.trigger_dims, g.feat_dim);
  auto dim_sel = pick.sample_without_replacement(static_cast<std::uint32_t>(g.feat_dim),
                                                 static_cast<std::uint32_t>(ell));
  std::vector<int> dims(dim_sel.begin(), dim_sel.end());
  std::sort(dims.begin(), dims.end());
  int target = static_cast<int>(pick.below(static_cast<std::uint64_t>(g.num_classes)));

  DefendedModel out;
  out.deployed = g;
  for (auto nd : trig)
    for (int d : dims) out.deployed.features.at(static_cast<int>(nd), d) = sp.trigger_value;

  auto clean_mask = defense_detail::minus_sorted(splits.train, trig);
  std::vector<int> labels_t = g.labels;
  for (auto nd : trig) labels_t[nd] = target;

  GraphInputs gi = build_inputs(out.deployed.edges, g.num_nodes);
  out.model = init_model(b, g.feat_dim, hidden, g.num_classes, st.child("init").seed());
  Adam opt;
  opt.lr = sp.train.lr;
  opt.weight_decay = sp.train.weight_decay;
  opt.init(out.model.weights);
  Rng drop = st.rng("dropout");
  double a = sp.joint_alpha;
  for (int epoch = 0; epoch < sp.train.epochs; ++epoch) {
    Matrix m0, m1;
    const Matrix *d0 = nullptr, *d1 = nullptr;
    if (sp.train.dropout > 0.0) {
      m0 = make_dropout_mask(g.num_nodes, g.feat_dim, sp.train.dropout, drop);
      m1 = make_dropout_mask(g.num_nodes, hidden, sp.train.dropout, drop);
      d0 = &m0;
      d1 = &m1;
    }
    auto cache = forward(out.model, gi, out.deployed.features, d0, d1);
    Matrix dlogits(g.num_nodes, g.num_classes);
    double loss = 0.0;
    if (!clean_mask.empty()) {
      Matrix dc;
      loss += (1.0 - a) * ce_loss_grad(cache.logits, g.labels, clean_mask, dc);
      add_inplace(dlogits, dc, 1.0 - a);
    }
    Matrix dt;
    loss += a * ce_loss_grad(cache.logits, labels_t, trig, dt);
    add_inplace(dlogits, dt, a);
    defense_detail::check_finite(loss, cache.logits, sp.kind, seed, epoch);
    auto back = backward(out.model, gi, cache, dlogits, nullptr, false, d0, d1);
    opt.step(out.model.weights, back.grads);
  }

  out.artifact.kind = DefenseKind::BackdoorWM;
  out.artifact.trigger_nodes = trig;
  out.artifact.trigger_dims = dims;
  out.artifact.trigger_value = sp.trigger_value;
  out.artifact.target_class = target;
  return out;
}

inline DefendedModel train_random_wm(const DefenseSpec& sp, const Graph& g,
                                     const SplitSpec& splits, Backbone b, int hidden,
                                     std::uint64_t seed) {
  SeedTree st(seed);
  Rng wmr = st.rng("wm-graph");
  int k = sp.wm_node_count > 0
              ? sp.wm_node_count
              : std::max(1, static_cast<int>(std::floor(sp.wm_node_ratio * g.num_nodes)));

  Graph wm;
  wm.num_nodes = k;
  wm.feat_dim = g.feat_dim;
  wm.num_classes = g.num_classes;
  wm.name = g.name + "-wm";
  wm.features = Matrix(k, g.feat_dim);
  for (double& v : wm.features.a) v = wmr.normal();
  double p = structural_stats(g).density;
  for (std::uint32_t u = 0; u + 1 < static_cast<std::uint32_t>(k); ++u)
    for (std::uint32_t v = u + 1; v < static_cast<std::uint32_t>(k); ++v)
      if (wmr.uniform() < p) wm.edges.emplace_back(u, v);
  wm.labels.resize(k);
  for (int i = 0; i < k; ++i)
    wm.labels[i] = static_cast<int>(wmr.below(static_cast<std::uint64_t>(g.num_classes)));

  DefendedModel out;
  out.deployed = g;
  out.deployed.name = g.name + "+wm";
  out.deployed.num_nodes = g.num_nodes + k;
  out.deployed.features = Matrix(g.num_nodes + k, g.feat_dim);
  std::copy(g.features.a.begin(), g.features.a.end(), out.deployed.features.a.begin());
  std::copy(wm.features.a.begin(), wm.features.a.end(),
            out.deployed.features.a.begin() + g.features.a.size());
  out.deployed.labels = g.labels;
  out.deployed.labels.insert(out.deployed.labels.end(), wm.labels.begin(), wm.labels.end());
  out.deployed.edges = g.edges;
  auto base = static_cast<std::uint32_t>(g.num_nodes);
  for (auto [u, v] : wm.edges) out.deployed.edges.emplace_back(base + u, base + v);

  std::vector<std::uint32_t> mask = splits.train;
  for (int i = 0; i < k; ++i) mask.push_back(base + static_cast<std::uint32_t>(i));

  GraphInputs gi = build_inputs(out.deployed.edges, out.deployed.num_nodes);
  out.model = init_model(b, g.feat_dim, hidden, g.num_classes, st.child("init").seed());
  Supervision sup;
  sup.hard = &out.deployed.labels;
  try {
    train(out.model, gi, out.deployed.features, sup, mask, sp.train, st.rng("train"));
  } catch (const TrainDivergence& e) {
    throw DefenseTrainError(sp.kind, seed, e.epoch);
  }

  out.artifact.kind = DefenseKind::RandomWM;
  out.artifact.wm_graph = wm;
  out.artifact.wm_base = g.num_nodes;
  return out;
}

inline DefendedModel train_survive_wm(const DefenseSpec& sp, const Graph& g,
                                      const SplitSpec& splits, Backbone b, int hidden,
                                      std::uint64_t seed) {
  SeedTree st(seed);
  GraphInputs gi = build_inputs(g.edges, g.num_nodes);

  // Clean teacher supplies the key labels, so embedding the key costs
  // little test accuracy.
  GnnModel teacher = init_model(b, g.feat_dim, hidden, g.num_classes, st.child("teacher-init").seed());
  Supervision ground;
  ground.hard = &g.labels;
  try {
    train(teacher, gi, g.features, ground, splits.train, sp.train, st.rng("teacher-train"));
  } catch (const TrainDivergence& e) {
    throw DefenseTrainError(sp.kind, seed, e.epoch);
  }
  auto teacher_pred = predict(teacher, gi, g.features);

  Rng pick = st.rng("key");
  auto kcount = static_cast<std::size_t>(std::floor(sp.key_ratio * static_cast<double>(splits.train.size())));
  kcount = std::min(std::max<std::size_t>(kcount, 1), splits.train.size());
  auto key = defense_detail::pick_from(splits.train, kcount, pick);
  std::vector<int> key_labels(key.size());
  std::vector<int> key_full = g.labels;  // full-length target vector for the CE term
  for (std::size_t i = 0; i < key.size(); ++i) {
    key_labels[i] = teacher_pred.hard[key[i]];
    key_full[key[i]] = key_labels[i];
  }
  auto main_mask = defense_detail::minus_sorted(splits.train, key);

  DefendedModel out;
  out.deployed = g;
  out.model = init_model(b, g.feat_dim, hidden, g.num_classes, st.child("init").seed());
  Adam opt;
  opt.lr = sp.train.lr;
  opt.weight_decay = sp.train.weight_decay;
  opt.init(out.model.weights);
  Rng drop = st.rng("dropout");
  for (int epoch = 0; epoch < sp.train.epochs; ++epoch) {
    Matrix m0, m1;
    const Matrix *d0 = nullptr, *d1 = nullptr;
    if (sp.train.dropout > 0.0) {
      m0 = make_dropout_mask(g.num_nodes, g.feat_dim, sp.train.dropout, drop);
      m1 = make_dropout_mask(g.num_nodes, hidden, sp.train.dropout, drop);
      d0 = &m0;
      d1 = &m1;
    }
    auto cache = forward(out.model, gi, g.features, d0, d1);
    Matrix dlogits(g.num_nodes, g.num_classes);
    double loss = 0.0;
    if (!main_mask.empty()) {
      Matrix dm;
      loss += ce_loss_grad(cache.logits, g.labels, main_mask, dm);
      add_inplace(dlogits, dm, 1.0);
    }
    Matrix dk;
    loss += sp.wm_strength * ce_loss_grad(cache.logits, key_full, key, dk);
    add_inplace(dlogits, dk, sp.wm_strength);

    Matrix Hk(static_cast<int>(key.size()), hidden);
    for (std::size_t i = 0; i < key.size(); ++i)
      for (int c = 0; c < hidden; ++c) Hk.at(static_cast<int>(i), c) = cache.H1.at(static_cast<int>(key[i]), c);
    loss += sp.snnl_alpha * snnl(Hk, key_labels, sp.t_opt);
    Matrix gk = snnl_grad(Hk, key_labels, sp.t_opt);
    Matrix dH1_extra(g.num_nodes, hidden);
    for (std::size_t i = 0; i < key.size(); ++i)
      for (int c = 0; c < hidden; ++c)
        dH1_extra.at(static_cast<int>(key[i]), c) = sp.snnl_alpha * gk.at(static_cast<int>(i), c);

    defense_detail::check_finite(loss, cache.logits, sp.kind, seed, epoch);
    auto back = backward(out.model, gi, cache, dlogits, &dH1_extra, false, d0, d1);
    opt.step(out.model.weights, back.grads);
  }

  out.artifact.kind = DefenseKind::SurviveWM;
  out.artifact.key_nodes = key;
  out.artifact.key_labels = key_labels;
  return out;
}

inline DefendedModel train_imperceptible_wm(const DefenseSpec& sp, const Graph& g,
                                            const SplitSpec& splits, Backbone b, int hidden,
                                            std::uint64_t seed) {
  SeedTree st(seed);
  Rng pick = st.rng("trigger");
  if (splits.val.empty()) throw std::invalid_argument("ImperceptibleWM needs a validation split");
  // Trigger nodes must not already carry the target class: a probe whose
  // natural label equals the target verifies on any accurate model, which
  // turns verification into plain accuracy instead of a mark.
  int target = static_cast<int>(pick.below(static_cast<std::uint64_t>(g.num_classes)));
  std::vector<std::uint32_t> candidates;
  for (auto nd : splits.val)
    if (g.labels[nd] != target) candidates.push_back(nd);
  if (candidates.empty())
    throw std::invalid_argument("ImperceptibleWM: validation split has no non-target-class nodes");
  auto tcount = std::min<std::size_t>(10, candidates.size());
  auto trig = defense_detail::pick_from(candidates, tcount, pick);

  Matrix P(static_cast<int>(trig.size()), g.feat_dim);
  Matrix X_aug = g.features;
  std::vector<int> labels_t = g.labels;
  for (auto nd : trig) labels_t[nd] = target;

  GraphInputs gi = build_inputs(g.edges, g.num_nodes);
  DefendedModel out;
  out.deployed = g;  // the perturbation stays the owner's secret
  out.model = init_model(b, g.feat_dim, hidden, g.num_classes, st.child("init").seed());
  Adam opt;
  opt.lr = sp.train.lr;
  opt.weight_decay = sp.train.weight_decay;
  opt.init(out.model.weights);
  Rng drop = st.rng("dropout");
  double a = sp.joint_alpha;
  double step = sp.epsilon / 4.0;
  int outer_rounds = 10, epochs_per_round = std::max(1, sp.train.epochs / 10), pgd_steps = 10;

  auto apply_p = [&] {
    for (std::size_t i = 0; i < trig.size(); ++i)
      for (int d = 0; d < g.feat_dim; ++d)
        X_aug.at(static_cast<int>(trig[i]), d) = g.features.at(static_cast<int>(trig[i]), d) + P.at(static_cast<int>(i), d);
  };

  for (int outer = 0; outer < outer_rounds; ++outer) {
    for (int e = 0; e < epochs_per_round; ++e) {
      Matrix m0, m1;
      const Matrix *d0 = nullptr, *d1 = nullptr;
      if (sp.train.dropout > 0.0) {
        m0 = make_dropout_mask(g.num_nodes, g.feat_dim, sp.train.dropout, drop);
        m1 = make_dropout_mask(g.num_nodes, hidden, sp.train.dropout, drop);
        d0 = &m0;
        d1 = &m1;
      }
      auto cache = forward(out.model, gi, X_aug, d0, d1);
      Matrix dlogits(g.num_nodes, g.num_classes);
      Matrix dc, dt;
      double loss = (1.0 - a) * ce_loss_grad(cache.logits, g.labels, splits.train, dc);
      add_inplace(dlogits, dc, 1.0 - a);
      loss += a * ce_loss_grad(cache.logits, labels_t, trig, dt);
      add_inplace(dlogits, dt, a);
      defense_detail::check_finite(loss, cache.logits, sp.kind, seed, outer * epochs_per_round + e);
      auto back = backward(out.model, gi, cache, dlogits, nullptr, false, d0, d1);
      opt.step(out.model.weights, back.grads);
    }
    // Sharpen the trigger against the current model: signed gradient steps
    // on the perturbation, projected back into the epsilon box.
    for (int s = 0; s < pgd_steps; ++s) {
      auto cache = forward(out.model, gi, X_aug, nullptr, nullptr);
      Matrix dlogits;
      ce_loss_grad(cache.logits, labels_t, trig, dlogits);
      auto back = backward(out.model, gi, cache, dlogits, nullptr, true, nullptr, nullptr);
      for (std::size_t i = 0; i < trig.size(); ++i)
        for (int d = 0; d < g.feat_dim; ++d) {
          double grd = back.dX.at(static_cast<int>(trig[i]), d);
          double val = P.at(static_cast<int>(i), d) - step * ((grd > 0.0) - (grd < 0.0));
          P.at(static_cast<int>(i), d) = std::clamp(val, -sp.epsilon, sp.epsilon);
        }
      apply_p();
    }
  }

  out.artifact.kind = DefenseKind::ImperceptibleWM;
  out.artifact.trigger_nodes = trig;
  out.artifact.perturbation = P;
  out.artifact.target_class = target;
  return out;
}

inline DefendedModel train_integrity(const DefenseSpec& sp, const Graph& g,
                                     const SplitSpec& splits, Backbone b, int hidden,
                                     std::uint64_t seed) {
  SeedTree st(seed);
  GraphInputs gi = build_inputs(g.edges, g.num_nodes);
  DefendedModel out;
  out.deployed = g;
  out.model = init_model(b, g.feat_dim, hidden, g.num_classes, st.child("init").seed());
  Supervision sup;
  sup.hard = &g.labels;
  try {
    train(out.model, gi, g.features, sup, splits.train, sp.train, st.rng("train"));
  } catch (const TrainDivergence& e) {
    throw DefenseTrainError(sp.kind, seed, e.epoch);
  }

  Matrix logits = forward_logits(out.model, gi, g.features);
  auto hard = argmax_rows(logits);
  std::vector<std::pair<double, std::uint32_t>> margins;
  margins.reserve(splits.query.size());
  for (auto nd : splits.query) {
    const double* row = logits.row(static_cast<int>(nd));
    double top1 = -std::numeric_limits<double>::infinity(), top2 = top1;
    for (int c = 0; c < g.num_classes; ++c) {
      if (row[c] > top1) {
        top2 = top1;
        top1 = row[c];
      } else if (row[c] > top2) {
        top2 = row[c];
      }
    }
    margins.emplace_back(g.num_classes > 1 ? top1 - top2 : 0.0, nd);
  }
  std::sort(margins.begin(), margins.end());
  auto fp = std::min<std::size_t>(static_cast<std::size_t>(std::max(sp.fingerprint_count, 1)),
                                  margins.size());
  std::vector<std::uint32_t> nodes;
  for (std::size_t i = 0; i < fp; ++i) nodes.push_back(margins[i].second);
  std::sort(nodes.begin(), nodes.end());

  out.artifact.kind = DefenseKind::Integrity;
  out.artifact.fingerprint_nodes = nodes;
  out.artifact.fingerprint_labels.reserve(nodes.size());
  for (auto nd : nodes) out.artifact.fingerprint_labels.push_back(hard[nd]);
  return out;
}

inline DefendedModel train_defended(const DefenseSpec& sp, const Graph& g,
                                    const SplitSpec& splits, std::uint64_t seed,
                                    Backbone b = Backbone::GCN, int hidden = 16) {
  switch (sp.kind) {
    case DefenseKind::BackdoorWM: return train_backdoor(sp, g, splits, b, hidden, seed);
    case DefenseKind::RandomWM: return train_random_wm(sp, g, splits, b, hidden, seed);
    case DefenseKind::SurviveWM: return train_survive_wm(sp, g, splits, b, hidden, seed);
    case DefenseKind::ImperceptibleWM: return train_imperceptible_wm(sp, g, splits, b, hidden, seed);
    case DefenseKind::Integrity: return train_integrity(sp, g, splits, b, hidden, seed);
    default:
      throw std::invalid_argument(std::string(defense_kind_name(sp.kind)) +
                                  " is not a training-time defense");
  }
}

// ---- verification ----
//
// Probes run through the subject on the host graph's structure; only the
// artifact decides which inputs are perturbed and what counts as a match.
// Pure: no randomness, identical on repeated calls.

inline VerificationReport verify_model(const WatermarkArtifact& art, const GnnModel& subject,
                                       const Graph& host) {
  VerificationReport rep;
  switch (art.kind) {
    case DefenseKind::BackdoorWM: {
      Matrix X = host.features;
      for (auto nd : art.trigger_nodes)
        for (int d : art.trigger_dims) X.at(static_cast<int>(nd), d) = art.trigger_value;
      GraphInputs gi = build_inputs(host.edges, host.num_nodes);
      auto pred = predict(subject, gi, X);
      std::size_t hit = 0;
      for (auto nd : art.trigger_nodes) hit += pred.hard[nd] == art.target_class;
      rep.mode = VerifyMode::TriggerHit;
      rep.n_probes = art.trigger_nodes.size();
      rep.rate = static_cast<double>(hit) / static_cast<double>(rep.n_probes);
      return rep;
    }
    case DefenseKind::ImperceptibleWM: {
      Matrix X = host.features;
      for (std::size_t i = 0; i < art.trigger_nodes.size(); ++i)
        for (int d = 0; d < host.feat_dim; ++d)
          X.at(static_cast<int>(art.trigger_nodes[i]), d) += art.perturbation.at(static_cast<int>(i), d);
      GraphInputs gi = build_inputs(host.edges, host.num_nodes);
      auto pred = predict(subject, gi, X);
      std::size_t hit = 0;
      for (auto nd : art.trigger_nodes) hit += pred.hard[nd] == art.target_class;
      rep.mode = VerifyMode::TriggerHit;
      rep.n_probes = art.trigger_nodes.size();
      rep.rate = static_cast<double>(hit) / static_cast<double>(rep.n_probes);
      return rep;
    }
    case DefenseKind::RandomWM: {
      GraphInputs gi = build_inputs(art.wm_graph.edges, art.wm_graph.num_nodes);
      auto pred = predict(subject, gi, art.wm_graph.features);
      std::size_t hit = 0;
      for (int i = 0; i < art.wm_graph.num_nodes; ++i) hit += pred.hard[i] == art.wm_graph.labels[i];
      rep.mode = VerifyMode::WmGraphAcc;
      rep.n_probes = static_cast<std::size_t>(art.wm_graph.num_nodes);
      rep.rate = static_cast<double>(hit) / static_cast<double>(rep.n_probes);
      return rep;
    }
    case DefenseKind::SurviveWM: {
      GraphInputs gi = build_inputs(host.edges, host.num_nodes);
      auto pred = predict(subject, gi, host.features);
      std::size_t hit = 0;
      for (std::size_t i = 0; i < art.key_nodes.size(); ++i)
        hit += pred.hard[art.key_nodes[i]] == art.key_labels[i];
      rep.mode = VerifyMode::FingerprintMatch;
      rep.n_probes = art.key_nodes.size();
      rep.rate = static_cast<double>(hit) / static_cast<double>(rep.n_probes);
      return rep;
    }
    case DefenseKind::Integrity: {
      GraphInputs gi = build_inputs(host.edges, host.num_nodes);
      auto pred = predict(subject, gi, host.features);
      std::size_t hit = 0;
      for (std::size_t i = 0; i < art.fingerprint_nodes.size(); ++i)
        hit += pred.hard[art.fingerprint_nodes[i]] == art.fingerprint_labels[i];
      rep.mode = VerifyMode::FingerprintMatch;
      rep.n_probes = art.fingerprint_nodes.size();
      rep.rate = static_cast<double>(hit) / static_cast<double>(rep.n_probes);
      return rep;
    }
    default:
      throw std::invalid_argument("verify_model: not an ownership artifact");
  }
}

// Ownership check through a live endpoint. Works for kinds whose probes are
// deployed nodes; ImperceptibleWM perturbs inputs and cannot be verified
// through a node-id endpoint. Queries are charged to the caller's budget.
inline VerificationReport verify_oracle(const WatermarkArtifact& art, QueryOracle& oracle) {
  std::vector<std::uint32_t> ids;
  const std::vector<int>* want = nullptr;
  std::vector<int> target_vec;
  switch (art.kind) {
    case DefenseKind::BackdoorWM:
      ids = art.trigger_nodes;
      target_vec.assign(ids.size(), art.target_class);
      want = &target_vec;
      break;
    case DefenseKind::RandomWM: {
      if (art.wm_base < 0) throw std::invalid_argument("verify_oracle: artifact lacks wm_base");
      for (int i = 0; i < art.wm_graph.num_nodes; ++i)
        ids.push_back(static_cast<std::uint32_t>(art.wm_base + i));
      want = &art.wm_graph.labels;
      break;
    }
    case DefenseKind::SurviveWM:
      ids = art.key_nodes;
      want = &art.key_labels;
      break;
    case DefenseKind::Integrity:
      ids = art.fingerprint_nodes;
      want = &art.fingerprint_labels;
      break;
    default:
      throw std::invalid_argument("verify_oracle: unsupported artifact kind");
  }
  auto resp = oracle.query(ids);
  VerificationReport rep;
  rep.mode = art.kind == DefenseKind::BackdoorWM ? VerifyMode::TriggerHit
             : art.kind == DefenseKind::RandomWM ? VerifyMode::WmGraphAcc
                                                 : VerifyMode::FingerprintMatch;
  rep.n_probes = ids.size();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) hit += resp.labels[i] == (*want)[i];
  rep.rate = rep.n_probes ? static_cast<double>(hit) / static_cast<double>(rep.n_probes) : 0.0;
  return rep;
}

// Proxy for inference-time defenses: how often the served argmax still
// matches the clean model's argmax on a fixed probe set. Charges budget.
inline VerificationReport marker_accuracy(QueryOracle& oracle, const std::vector<int>& clean_hard,
                                          const std::vector<std::uint32_t>& probes) {
  auto resp = oracle.query(probes);
  VerificationReport rep;
  rep.mode = VerifyMode::MarkerAcc;
  rep.n_probes = probes.size();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) hit += resp.labels[i] == clean_hard[probes[i]];
  rep.rate = rep.n_probes ? static_cast<double>(hit) / static_cast<double>(rep.n_probes) : 0.0;
  return rep;
}

// Watermark-retention indicator: did the subject keep the mark better than
// both reference rates? Strict inequalities; aggregate by averaging.
inline int e_ave(double subject_rate, double clean_rate, double random_rate) {
  return (subject_rate > clean_rate && subject_rate > random_rate) ? 1 : 0;
}

inline double e_ave_fraction(const std::vector<int>& outcomes) {
  if (outcomes.empty()) return 0.0;
  double s = 0.0;
  for (int v : outcomes) s += v;
  return s / static_cast<double>(outcomes.size());
}

// ---- inference-time transforms ----

class OutputPerturbation : public InferenceTransform {
 public:
  explicit OutputPerturbation(double sigma) : sigma_(sigma) {}
  bool logits_stage() const override { return true; }
  void apply(std::vector<double>& row, std::uint32_t, const Matrix&, Rng& rng) override {
    for (auto& v : row) v += sigma_ * rng.normal();
  }
  std::string name() const override { return "OP(sigma=" + std::to_string(sigma_) + ")"; }

 private:
  double sigma_;
};

class ProbabilityRounding : public InferenceTransform {
 public:
  explicit ProbabilityRounding(int bits) : bits_(bits) {
    if (bits < 1) throw std::invalid_argument("PR: bits must be >= 1");
  }
  void apply(std::vector<double>& row, std::uint32_t, const Matrix&, Rng&) override {
    QueryOracle::quantize_row(row, bits_);
  }
  std::string name() const override { return "PR(" + std::to_string(bits_) + "bit)"; }

 private:
  int bits_;
};

class TopOneLabel : public InferenceTransform {
 public:
  void apply(std::vector<double>& row, std::uint32_t, const Matrix&, Rng&) override {
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    std::fill(row.begin(), row.end(), 0.0);
    row[best] = 1.0;
  }
  std::string name() const override { return "PR(top1)"; }
};

// Distance-based extraction detector. Tracks the minimum feature distance
// of each query to everything asked before; when too many recent queries
// land unusually close to the history (fraction of the last `window`
// minima below the historical 10th percentile exceeds `threshold`), all
// later responses are uniform. Cost is quadratic in the query count.
class PradaDetector : public InferenceTransform {
 public:
  PradaDetector(int window, double threshold) : window_(window), threshold_(threshold) {}
  void apply(std::vector<double>& row, std::uint32_t node, const Matrix& X, Rng&) override {
    if (!seen_.empty()) {
      double best = std::numeric_limits<double>::infinity();
      for (auto id : seen_) {
        double s = 0.0;
        const double* a = X.row(static_cast<int>(node));
        const double* b = X.row(static_cast<int>(id));
        for (int c = 0; c < X.cols; ++c) {
          double d = a[c] - b[c];
          s += d * d;
        }
        best = std::min(best, s);
      }
      min_dists_.push_back(std::sqrt(best));
      auto sorted = min_dists_;
      std::sort(sorted.begin(), sorted.end());
      double p10 = percentile_sorted(sorted, 0.10);
      std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window_), min_dists_.size());
      std::size_t low = 0;
      for (std::size_t i = min_dists_.size() - w; i < min_dists_.size(); ++i)
        low += min_dists_[i] < p10;
      if (static_cast<double>(low) / static_cast<double>(w) > threshold_) detected_ = true;
    }
    seen_.push_back(node);
    if (detected_) {
      double u = 1.0 / static_cast<double>(row.size());
      std::fill(row.begin(), row.end(), u);
    }
  }
  bool detected() const { return detected_; }
  std::string name() const override { return "PRADA"; }

 private:
  int window_;
  double threshold_;
  std::vector<std::uint32_t> seen_;
  std::vector<double> min_dists_;
  bool detected_ = false;
};

class AdaptiveMisinformation : public InferenceTransform {
 public:
  explicit AdaptiveMisinformation(double threshold) : threshold_(threshold) {}
  void apply(std::vector<double>& row, std::uint32_t, const Matrix&, Rng&) override {
    double mx = *std::max_element(row.begin(), row.end());
    if (mx >= threshold_) return;
    std::reverse(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += v;
    if (s > 0.0)
      for (auto& v : row) v /= s;
  }
  std::string name() const override { return "AdaptMisinfo"; }

 private:
  double threshold_;
};

class GradientRedirection : public InferenceTransform {
 public:
  explicit GradientRedirection(double strength) : strength_(strength) {}
  void apply(std::vector<double>& row, std::uint32_t, const Matrix&, Rng&) override {
    std::size_t n = row.size();
    if (n < 2) return;
    std::size_t top = 0;
    for (std::size_t c = 1; c < n; ++c)
      if (row[c] > row[top]) top = c;
    std::size_t runner = top == 0 ? 1 : 0, least = runner;
    for (std::size_t c = 0; c < n; ++c) {
      if (c == top) continue;
      if (row[c] > row[runner]) runner = c;
      if (row[c] < row[least]) least = c;
    }
    if (runner == least) return;
    // Both caps keep the argmax: the runner-up only loses mass, and the
    // least-likely class can rise at most halfway to the maximum.
    double t = std::min(strength_ * row[runner], strength_ * (row[top] - row[least]));
    if (t <= 0.0) return;
    row[runner] -= t;
    row[least] += t;
  }
  std::string name() const override { return "GradRedir"; }

 private:
  double strength_;
};

inline std::unique_ptr<InferenceTransform> make_transform(const DefenseSpec& sp) {
  switch (sp.kind) {
    case DefenseKind::OP_low:
    case DefenseKind::OP_high: return std::make_unique<OutputPerturbation>(sp.sigma);
    case DefenseKind::PR_2bit: return std::make_unique<ProbabilityRounding>(sp.bits);
    case DefenseKind::PR_top1: return std::make_unique<TopOneLabel>();
    case DefenseKind::PRADA: return std::make_unique<PradaDetector>(sp.prada_window, sp.prada_threshold);
    case DefenseKind::AdaptMisinfo: return std::make_unique<AdaptiveMisinformation>(sp.misinfo_threshold);
    case DefenseKind::GradRedir: return std::make_unique<GradientRedirection>(sp.redirect_strength);
    default:
      throw std::invalid_argument(std::string(defense_kind_name(sp.kind)) +
                                  " is not an inference-time defense");
  }
}

inline std::vector<std::unique_ptr<InferenceTransform>> make_chain(const std::vector<DefenseSpec>& specs) {
  std::vector<std::unique_ptr<InferenceTransform>> chain;
  chain.reserve(specs.size());
  for (const auto& sp : specs) chain.push_back(make_transform(sp));
  return chain;
}

// ---- artifact serialization: JSON header line + binary payload ----

namespace defense_detail {

template <typename T>
void write_vec(std::ofstream& out, const std::vector<T>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_vec(std::ifstream& in, std::vector<T>& v, std::size_t n) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

}  // namespace defense_detail

inline void save_artifact(const WatermarkArtifact& art, const std::string& path) {
  nlohmann::ordered_json h;
  h["format"] = "gbwm-1";
  h["kind"] = defense_kind_name(art.kind);
  h["trigger_value"] = art.trigger_value;
  h["target_class"] = art.target_class;
  h["wm_base"] = art.wm_base;
  h["n_trigger"] = art.trigger_nodes.size();
  h["n_dims"] = art.trigger_dims.size();
  h["pert_rows"] = art.perturbation.rows;
  h["pert_cols"] = art.perturbation.cols;
  h["n_key"] = art.key_nodes.size();
  h["n_fingerprint"] = art.fingerprint_nodes.size();
  h["wm_nodes"] = art.wm_graph.num_nodes;
  h["wm_feat_dim"] = art.wm_graph.feat_dim;
  h["wm_classes"] = art.wm_graph.num_classes;
  h["wm_edges"] = art.wm_graph.edges.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write artifact " + path);
  out << h.dump() << '\n';
  defense_detail::write_vec(out, art.trigger_nodes);
  defense_detail::write_vec(out, art.trigger_dims);
  defense_detail::write_vec(out, art.perturbation.a);
  defense_detail::write_vec(out, art.key_nodes);
  defense_detail::write_vec(out, art.key_labels);
  defense_detail::write_vec(out, art.fingerprint_nodes);
  defense_detail::write_vec(out, art.fingerprint_labels);
  defense_detail::write_vec(out, art.wm_graph.edges);
  defense_detail::write_vec(out, art.wm_graph.features.a);
  defense_detail::write_vec(out, art.wm_graph.labels);
  if (!out) throw std::runtime_error("short write on artifact " + path);
}

inline WatermarkArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read artifact " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("artifact missing header: " + path);
  auto h = nlohmann::json::parse(header);
  if (h.value("format", "") != "gbwm-1")
    throw std::runtime_error("artifact format mismatch: " + path);
  WatermarkArtifact art;
  art.kind = parse_defense_kind(h.at("kind").get<std::string>());
  art.trigger_value = h.at("trigger_value").get<double>();
  art.target_class = h.at("target_class").get<int>();
  art.wm_base = h.at("wm_base").get<int>();
  defense_detail::read_vec(in, art.trigger_nodes, h.at("n_trigger").get<std::size_t>());
  defense_detail::read_vec(in, art.trigger_dims, h.at("n_dims").get<std::size_t>());
  art.perturbation = Matrix(h.at("pert_rows").get<int>(), h.at("pert_cols").get<int>());
  in.read(reinterpret_cast<char*>(art.perturbation.a.data()),
          static_cast<std::streamsize>(art.perturbation.a.size() * sizeof(double)));
  defense_detail::read_vec(in, art.key_nodes, h.at("n_key").get<std::size_t>());
  defense_detail::read_vec(in, art.key_labels, h.at("n_key").get<std::size_t>());
  defense_detail::read_vec(in, art.fingerprint_nodes, h.at("n_fingerprint").get<std::size_t>());
  defense_detail::read_vec(in, art.fingerprint_labels, h.at("n_fingerprint").get<std::size_t>());
  art.wm_graph.num_nodes = h.at("wm_nodes").get<int>();
  art.wm_graph.feat_dim = h.at("wm_feat_dim").get<int>();
  art.wm_graph.num_classes = h.at("wm_classes").get<int>();
  defense_detail::read_vec(in, art.wm_graph.edges, h.at("wm_edges").get<std::size_t>());
  art.wm_graph.features = Matrix(art.wm_graph.num_nodes, art.wm_graph.feat_dim);
  in.read(reinterpret_cast<char*>(art.wm_graph.features.a.data()),
          static_cast<std::streamsize>(art.wm_graph.features.a.size() * sizeof(double)));
  defense_detail::read_vec(in, art.wm_graph.labels, static_cast<std::size_t>(art.wm_graph.num_nodes));
  if (!in) throw std::runtime_error("artifact truncated: " + path);
  return art;
}

}  // namespace graphbench
