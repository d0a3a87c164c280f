// Watermark embedding, verification, SNNL, inference-time transforms,
// artifact round-trip.

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "graphbench/defenses.hpp"
#include "graphbench/metrics.hpp"
#include "graphbench/nn.hpp"
#include "graphbench/oracle.hpp"
#include "graphbench/rng.hpp"
#include "graphbench/sbm.hpp"
#include "graphbench/splits.hpp"

using namespace graphbench;

namespace {

struct Fixture {
  Graph g;
  SplitSpec splits;

  Fixture() {
    SbmParams p;
    p.num_nodes = 160;
    p.num_classes = 3;
    p.p_in = 0.08;
    p.p_out = 0.005;
    p.feat_dim = 8;
    p.feat_signal = 2.0;
    g = generate_sbm(p, Rng(31));
    splits = make_splits(g, {}, Rng(32));
  }
};

const Fixture& fix() {
  static Fixture f;
  return f;
}

// Random probability row: softmax of iid normals.
std::vector<double> random_probs(int C, Rng& rng) {
  std::vector<double> v(C);
  double mx = -1e300;
  for (auto& x : v) {
    x = rng.normal();
    mx = std::max(mx, x);
  }
  double s = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

int argmax_of(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t c = 1; c < v.size(); ++c)
    if (v[c] > v[best]) best = static_cast<int>(c);
  return best;
}

}  // namespace

TEST_CASE("snnl closed forms") {
  // All embeddings identical, two balanced classes of three: every pairwise
  // weight is 1, so each row contributes -log(2/5).
  Matrix H(6, 4);
  std::vector<int> labels{0, 1, 0, 1, 0, 1};
  CHECK(snnl(H, labels, 20.0) == Catch::Approx(-std::log(2.0 / 5.0)).epsilon(1e-12));

  // Well-separated classes: the cross-class weights vanish and the loss
  // goes to zero.
  Matrix F(6, 2);
  for (int i = 0; i < 6; ++i) F.at(i, 0) = labels[i] == 0 ? 0.0 : 1000.0;
  CHECK(snnl(F, labels, 20.0) < 1e-9);

  // A lone class member has an empty numerator and is skipped.
  Matrix L(3, 2);
  L.at(0, 0) = 0.0;
  L.at(1, 0) = 1.0;
  L.at(2, 0) = 50.0;
  std::vector<int> lone{0, 0, 1};
  CHECK(std::isfinite(snnl(L, lone, 5.0)));

  CHECK_THROWS_AS(snnl(H, labels, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(snnl(H, {0, 1}, 1.0), std::invalid_argument);
}

TEST_CASE("snnl gradient matches finite differences") {
  Rng rng(41);
  Matrix H(7, 4);
  for (auto& v : H.a) v = rng.normal();
  std::vector<int> labels{0, 1, 0, 1, 2, 2, 0};
  double T = 5.0;
  Matrix g = snnl_grad(H, labels, T);
  double h = 1e-6;
  for (int i = 0; i < H.rows; ++i)
    for (int c = 0; c < H.cols; ++c) {
      Matrix Hp = H, Hm = H;
      Hp.at(i, c) += h;
      Hm.at(i, c) -= h;
      double fd = (snnl(Hp, labels, T) - snnl(Hm, labels, T)) / (2.0 * h);
      double an = g.at(i, c);
      if (std::abs(fd - an) < 1e-8) continue;  // FD noise floor
      CHECK(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)) < 1e-4);
    }
}

TEST_CASE("backdoor watermark verifies on target and fades at zero weight") {
  const auto& f = fix();
  DefenseSpec sp = default_defense(DefenseKind::BackdoorWM);

  double rate_sum = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto def = train_defended(sp, f.g, f.splits, seed);
    // default rate 0.01 floors to a single trigger node on 40 train nodes
    REQUIRE(def.artifact.trigger_nodes.size() == 1);
    CHECK(def.artifact.trigger_dims.size() == static_cast<std::size_t>(f.g.feat_dim));
    auto rep = verify_model(def.artifact, def.model, f.g);
    CHECK(rep.mode == VerifyMode::TriggerHit);
    CHECK(rep.n_probes == 1);
    rate_sum += rep.rate;

    // verification is pure: same inputs, same report
    auto again = verify_model(def.artifact, def.model, f.g);
    CHECK(again.rate == rep.rate);

    // deployment bakes the trigger features in
    for (auto nd : def.artifact.trigger_nodes)
      for (int d : def.artifact.trigger_dims)
        CHECK(def.deployed.features.at(static_cast<int>(nd), d) == sp.trigger_value);
  }
  CHECK(rate_sum / 3.0 >= 0.95);

  // alpha = 0: no watermark signal reaches the weights
  DefenseSpec off = sp;
  off.joint_alpha = 0.0;
  double off_sum = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u})
    off_sum += verify_model(train_defended(off, f.g, f.splits, seed).artifact,
                            train_defended(off, f.g, f.splits, seed).model, f.g).rate;
  CHECK(off_sum / 3.0 <= 2.0 / 3.0);  // chance-level, far from the embedded 1.0
}

TEST_CASE("random watermark graph is disjoint and verifiable") {
  const auto& f = fix();
  DefenseSpec sp = default_defense(DefenseKind::RandomWM);
  sp.wm_node_count = 4;

  auto def = train_defended(sp, f.g, f.splits, 7);
  REQUIRE(def.artifact.wm_graph.num_nodes == 4);
  CHECK(def.artifact.wm_base == f.g.num_nodes);
  CHECK(def.deployed.num_nodes == f.g.num_nodes + 4);

  // watermark edges never touch host nodes
  auto base = static_cast<std::uint32_t>(f.g.num_nodes);
  for (auto [u, v] : def.deployed.edges) {
    bool host = v < base;
    bool wm = u >= base;
    CHECK((host || wm));
  }

  auto rep = verify_model(def.artifact, def.model, f.g);
  CHECK(rep.mode == VerifyMode::WmGraphAcc);
  CHECK(rep.n_probes == 4);
  CHECK(rep.rate >= 0.5);  // memorized watermark labels

  // deterministic in the seed
  auto def2 = train_defended(sp, f.g, f.splits, 7);
  CHECK(def2.model.weights[0].a == def.model.weights[0].a);
  CHECK(def2.artifact.wm_graph.features.a == def.artifact.wm_graph.features.a);
  auto def3 = train_defended(sp, f.g, f.splits, 8);
  CHECK(def3.artifact.wm_graph.features.a != def.artifact.wm_graph.features.a);

  // default ratio on a small host floors to a single node
  DefenseSpec tiny = default_defense(DefenseKind::RandomWM);
  auto deft = train_defended(tiny, f.g, f.splits, 1);
  CHECK(deft.artifact.wm_graph.num_nodes == 1);
}

TEST_CASE("survive watermark sits between chance and backdoor") {
  const auto& f = fix();
  DefenseSpec bd = default_defense(DefenseKind::BackdoorWM);
  DefenseSpec sv = default_defense(DefenseKind::SurviveWM);

  double sv_sum = 0.0, bd_sum = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto d_sv = train_defended(sv, f.g, f.splits, seed);
    REQUIRE(d_sv.artifact.key_nodes.size() == 4);  // 0.1 * 40 train nodes
    auto rep = verify_model(d_sv.artifact, d_sv.model, f.g);
    CHECK(rep.mode == VerifyMode::FingerprintMatch);
    sv_sum += rep.rate;
    bd_sum += verify_model(train_defended(bd, f.g, f.splits, seed).artifact,
                           train_defended(bd, f.g, f.splits, seed).model, f.g).rate;
  }
  CHECK(sv_sum / 3.0 > 1.0 / 3.0);
  CHECK(sv_sum / 3.0 <= bd_sum / 3.0 + 1e-9);
}

TEST_CASE("imperceptible watermark stays inside the epsilon box and verifies") {
  const auto& f = fix();
  DefenseSpec sp = default_defense(DefenseKind::ImperceptibleWM);
  auto def = train_defended(sp, f.g, f.splits, 3);

  REQUIRE(def.artifact.trigger_nodes.size() == std::min<std::size_t>(10, f.splits.val.size()));
  for (double v : def.artifact.perturbation.a) CHECK(std::abs(v) <= sp.epsilon + 1e-12);
  // trigger probes must be informative: a node already labeled with the
  // target class would verify on any accurate model
  for (auto nd : def.artifact.trigger_nodes) CHECK(f.g.labels[nd] != def.artifact.target_class);
  // deployment is the clean graph; the perturbation stays secret
  CHECK(def.deployed.features.a == f.g.features.a);

  auto rep = verify_model(def.artifact, def.model, f.g);
  CHECK(rep.mode == VerifyMode::TriggerHit);
  CHECK(rep.rate >= 0.8);
}

TEST_CASE("integrity fingerprint is a restricted fidelity") {
  const auto& f = fix();
  DefenseSpec sp = default_defense(DefenseKind::Integrity);
  sp.fingerprint_count = 10;
  auto def = train_defended(sp, f.g, f.splits, 5);
  REQUIRE(def.artifact.fingerprint_nodes.size() == 10);
  for (auto nd : def.artifact.fingerprint_nodes)
    CHECK(std::binary_search(f.splits.query.begin(), f.splits.query.end(), nd));

  // the defended target matches its own recorded labels exactly
  CHECK(verify_model(def.artifact, def.model, f.g).rate == 1.0);

  // for any subject, verify(Integrity) equals fidelity on fingerprint nodes
  GnnModel other = init_model(Backbone::GCN, f.g.feat_dim, 16, f.g.num_classes, 777);
  GraphInputs gi = build_inputs(f.g.edges, f.g.num_nodes);
  auto pred = predict(other, gi, f.g.features);
  std::vector<int> recorded(f.g.num_nodes, -1);
  for (std::size_t i = 0; i < def.artifact.fingerprint_nodes.size(); ++i)
    recorded[def.artifact.fingerprint_nodes[i]] = def.artifact.fingerprint_labels[i];
  double fid = fidelity(pred.hard, recorded, def.artifact.fingerprint_nodes);
  CHECK(verify_model(def.artifact, other, f.g).rate == fid);
}

TEST_CASE("random-init subjects verify near chance") {
  const auto& f = fix();
  // hand-crafted artifact with a wide probe set
  WatermarkArtifact art;
  art.kind = DefenseKind::BackdoorWM;
  for (std::uint32_t i = 0; i < 100; ++i) art.trigger_nodes.push_back(i);
  art.trigger_dims = {0, 1, 2};
  art.trigger_value = 0.99;
  art.target_class = 0;

  // average over many independent random models; per-model rates are
  // correlated across probes, so the binomial check applies at model level
  double sum = 0.0;
  int models = 60;
  for (int k = 0; k < models; ++k) {
    GnnModel m = init_model(Backbone::GCN, f.g.feat_dim, 16, f.g.num_classes, 1000 + k);
    sum += verify_model(art, m, f.g).rate;
  }
  double mean = sum / models;
  // 99% band around 1/3 for 60 draws of worst-case variance
  double band = 2.576 * std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / models);
  CHECK(std::abs(mean - 1.0 / 3.0) < band + 0.02);
}

TEST_CASE("defense training divergence reports kind and seed") {
  const auto& f = fix();
  DefenseSpec sp = default_defense(DefenseKind::RandomWM);
  sp.wm_node_count = 2;
  sp.train.lr = 1e200;
  sp.train.epochs = 5;
  try {
    train_defended(sp, f.g, f.splits, 9);
    FAIL("expected divergence");
  } catch (const DefenseTrainError& e) {
    CHECK(e.kind == DefenseKind::RandomWM);
    CHECK(e.seed == 9);
    CHECK(std::string(e.what()).find("RandomWM") != std::string::npos);
  }

  // inference kinds cannot be trained, training kinds make no transform
  CHECK_THROWS_AS(train_defended(default_defense(DefenseKind::OP_low), f.g, f.splits, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_transform(default_defense(DefenseKind::BackdoorWM)),
                  std::invalid_argument);
}

TEST_CASE("transform hand cases") {
  Rng rng(1);
  Matrix X(1, 1);

  // OP with sigma 0 is the identity
  OutputPerturbation op0(0.0);
  std::vector<double> v{0.2, 0.5, 0.3};
  auto w = v;
  op0.apply(w, 0, X, rng);
  CHECK(w == v);
  CHECK(op0.logits_stage());

  // PR 2-bit on [0.5, 0.3, 0.2]: levels 2/3, 1/3, 1/3 renormalize to
  // [0.5, 0.25, 0.25]
  ProbabilityRounding pr(2);
  std::vector<double> p{0.5, 0.3, 0.2};
  pr.apply(p, 0, X, rng);
  CHECK(p[0] == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(p[2] == Catch::Approx(0.25).epsilon(1e-12));

  // quantization keeps at most 2^bits distinct pre-normalization levels
  Rng fz(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto row = random_probs(6, fz);
    std::vector<double> levels = row;
    for (auto& x : levels) x = std::round(x * 3.0) / 3.0;
    std::set<double> distinct(levels.begin(), levels.end());
    CHECK(distinct.size() <= 4);
  }

  // all-zero quantization falls back to one-hot at the argmax
  std::vector<double> flat{0.16, 0.16, 0.16, 0.16, 0.16, 0.2 - 0.04};
  ProbabilityRounding pr2(2);
  auto flat2 = flat;
  pr2.apply(flat2, 0, X, rng);
  double s = 0.0;
  for (double x : flat2) s += x;
  CHECK(s == Catch::Approx(1.0).margin(1e-9));

  // misinformation reverses only low-confidence rows
  AdaptiveMisinformation mis(0.6);
  std::vector<double> lo{0.5, 0.3, 0.2};
  mis.apply(lo, 0, X, rng);
  CHECK(lo == std::vector<double>{0.2, 0.3, 0.5});
  std::vector<double> hi{0.7, 0.2, 0.1};
  auto hi2 = hi;
  mis.apply(hi2, 0, X, rng);
  CHECK(hi2 == hi);

  // redirection moves mass from runner-up to least-likely
  GradientRedirection gr(0.5);
  std::vector<double> q{0.5, 0.3, 0.2};
  gr.apply(q, 0, X, rng);
  CHECK(q[0] == Catch::Approx(0.5));
  CHECK(q[1] == Catch::Approx(0.15));
  CHECK(q[2] == Catch::Approx(0.35));

  // two classes: runner-up and least-likely coincide, nothing moves
  std::vector<double> two{0.7, 0.3};
  auto two2 = two;
  gr.apply(two2, 0, X, rng);
  CHECK(two2 == two);
}

TEST_CASE("transforms preserve normalization and argmax where promised") {
  Rng rng(3);
  Matrix X(1, 1);
  TopOneLabel top1;
  GradientRedirection gr(0.5);
  ProbabilityRounding pr(2);
  AdaptiveMisinformation mis(0.6);

  for (int trial = 0; trial < 10000; ++trial) {
    int C = 2 + static_cast<int>(rng.below(7));
    auto row = random_probs(C, rng);
    int am = argmax_of(row);

    auto a = row;
    top1.apply(a, 0, X, rng);
    CHECK(argmax_of(a) == am);
    CHECK(a[am] == 1.0);

    auto b = row;
    gr.apply(b, 0, X, rng);
    CHECK(argmax_of(b) == am);
    double sb = 0.0;
    for (double x : b) {
      sb += x;
      CHECK(x >= -1e-12);
    }
    CHECK(sb == Catch::Approx(1.0).margin(1e-6));

    auto c = row;
    pr.apply(c, 0, X, rng);
    double sc = 0.0;
    for (double x : c) sc += x;
    CHECK(sc == Catch::Approx(1.0).margin(1e-6));

    auto d = row;
    mis.apply(d, 0, X, rng);
    double sd = 0.0;
    for (double x : d) sd += x;
    CHECK(sd == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("prada flags clustered query streams and spares spread ones") {
  // features: 100 well-spread rows, then 60 packed with shrinking gaps
  int n = 160, d = 2;
  Matrix X(n, d);
  for (int i = 0; i < 100; ++i) X.at(i, 0) = 1000.0 * i;
  double pos = 500000.0;
  for (int i = 100; i < n; ++i) {
    X.at(i, 0) = pos;
    pos += std::pow(0.5, i - 100) * 0.001;
  }
  Rng rng(0);

  DefenseSpec sp = default_defense(DefenseKind::PRADA);
  sp.prada_window = 10;
  PradaDetector spread(sp.prada_window, sp.prada_threshold);
  std::vector<double> row{0.6, 0.4};
  for (std::uint32_t i = 0; i < 100; ++i) {
    row = {0.6, 0.4};
    spread.apply(row, i, X, rng);
  }
  CHECK_FALSE(spread.detected());
  CHECK(row == std::vector<double>{0.6, 0.4});

  PradaDetector packed(sp.prada_window, sp.prada_threshold);
  for (std::uint32_t i = 0; i < 100; ++i) {
    row = {0.6, 0.4};
    packed.apply(row, i, X, rng);
  }
  for (std::uint32_t i = 100; i < static_cast<std::uint32_t>(n); ++i) {
    row = {0.6, 0.4};
    packed.apply(row, i, X, rng);
  }
  CHECK(packed.detected());
  // uniform thereafter, for every later query
  row = {0.9, 0.1};
  packed.apply(row, 0, X, rng);
  CHECK(row == std::vector<double>{0.5, 0.5});
}

TEST_CASE("ownership checks through a live endpoint") {
  const auto& f = fix();
  DefenseSpec sp = default_defense(DefenseKind::BackdoorWM);
  sp.trigger_rate = 0.1;
  auto def = train_defended(sp, f.g, f.splits, 0);
  auto direct = verify_model(def.artifact, def.model, f.g);

  // top-1 rounding cannot disturb the trigger labels
  std::vector<DefenseSpec> chain{default_defense(DefenseKind::PR_top1)};
  auto oracle = make_oracle(def.model, def.deployed, make_chain(chain),
                            ResponseMode::SoftProbs, 1000);
  auto through = verify_oracle(def.artifact, oracle);
  CHECK(through.rate == direct.rate);
  CHECK(through.n_probes == direct.n_probes);
  CHECK(oracle.queries_used() == direct.n_probes);

  // marker accuracy: identity chain scores 1.0 on any probe set
  auto plain = make_oracle(def.model, def.deployed, {}, ResponseMode::SoftProbs, 1000);
  GraphInputs gi = build_inputs(def.deployed.edges, def.deployed.num_nodes);
  auto clean = predict(def.model, gi, def.deployed.features);
  auto probes = f.splits.query;
  auto marker = marker_accuracy(plain, clean.hard, probes);
  CHECK(marker.mode == VerifyMode::MarkerAcc);
  CHECK(marker.rate == 1.0);
  CHECK(marker.n_probes == probes.size());

  // imperceptible probes cannot travel through a node-id endpoint
  DefenseSpec imp = default_defense(DefenseKind::ImperceptibleWM);
  auto di = train_defended(imp, f.g, f.splits, 0);
  auto o2 = make_oracle(di.model, di.deployed, {}, ResponseMode::SoftProbs, 1000);
  CHECK_THROWS_AS(verify_oracle(di.artifact, o2), std::invalid_argument);
}

TEST_CASE("retention indicator uses strict inequalities") {
  CHECK(e_ave(0.9, 0.1, 0.12) == 1);
  CHECK(e_ave(0.5, 0.5, 0.1) == 0);   // tie with clean loses
  CHECK(e_ave(0.5, 0.1, 0.5) == 0);   // tie with random loses
  CHECK(e_ave_fraction({1, 0, 1}) == Catch::Approx(2.0 / 3.0));
  CHECK(e_ave_fraction({}) == 0.0);
}

TEST_CASE("artifact serialization round-trips every kind") {
  const auto& f = fix();
  auto dir = std::filesystem::temp_directory_path() / "gb_artifacts";
  std::filesystem::create_directories(dir);

  DefenseSpec kinds[] = {
      default_defense(DefenseKind::BackdoorWM),
      default_defense(DefenseKind::RandomWM),
      default_defense(DefenseKind::SurviveWM),
      default_defense(DefenseKind::ImperceptibleWM),
      default_defense(DefenseKind::Integrity),
  };
  kinds[0].trigger_rate = 0.1;
  kinds[1].wm_node_count = 3;
  kinds[4].fingerprint_count = 8;

  for (const auto& sp : kinds) {
    auto def = train_defended(sp, f.g, f.splits, 13);
    auto path = (dir / (std::string(defense_kind_name(sp.kind)) + ".gbwm")).string();
    save_artifact(def.artifact, path);
    auto back = load_artifact(path);
    CHECK(back.kind == def.artifact.kind);
    CHECK(back.trigger_nodes == def.artifact.trigger_nodes);
    CHECK(back.trigger_dims == def.artifact.trigger_dims);
    CHECK(back.trigger_value == def.artifact.trigger_value);
    CHECK(back.target_class == def.artifact.target_class);
    CHECK(back.perturbation.a == def.artifact.perturbation.a);
    CHECK(back.key_nodes == def.artifact.key_nodes);
    CHECK(back.key_labels == def.artifact.key_labels);
    CHECK(back.fingerprint_nodes == def.artifact.fingerprint_nodes);
    CHECK(back.fingerprint_labels == def.artifact.fingerprint_labels);
    CHECK(back.wm_base == def.artifact.wm_base);
    CHECK(back.wm_graph.edges == def.artifact.wm_graph.edges);
    CHECK(back.wm_graph.features.a == def.artifact.wm_graph.features.a);
    CHECK(back.wm_graph.labels == def.artifact.wm_graph.labels);

    // loaded artifact verifies identically
    auto r1 = verify_model(def.artifact, def.model, f.g);
    auto r2 = verify_model(back, def.model, f.g);
    CHECK(r1.rate == r2.rate);
  }
  CHECK_THROWS_AS(load_artifact((dir / "missing.gbwm").string()), std::runtime_error);
}
