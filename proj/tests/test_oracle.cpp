// Query endpoint: budgets, response modes, transform plumbing, query log.

#include <catch_amalgamated.hpp>

#include <cstring>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "graphbench/defenses.hpp"
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
  GnnModel target;

  Fixture() {
    SbmParams p;
    p.num_nodes = 120;
    p.num_classes = 3;
    p.p_in = 0.08;
    p.p_out = 0.005;
    p.feat_dim = 8;
    p.feat_signal = 2.0;
    g = generate_sbm(p, Rng(11));
    splits = make_splits(g, {}, Rng(12));
    GraphInputs gi = build_inputs(g.edges, g.num_nodes);
    target = init_model(Backbone::GCN, g.feat_dim, 16, g.num_classes, 21);
    Supervision sup;
    sup.hard = &g.labels;
    TrainConfig cfg;
    cfg.epochs = 60;
    train(target, gi, g.features, sup, splits.train, cfg, Rng(22));
  }
};

const Fixture& fix() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("soft responses with no defense match predict bit for bit") {
  const auto& f = fix();
  GraphInputs gi = build_inputs(f.g.edges, f.g.num_nodes);
  auto clean = predict(f.target, gi, f.g.features);

  auto oracle = make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 1000);
  std::vector<std::uint32_t> ids{0, 5, 17, 119, 5};
  auto resp = oracle.query(ids);
  REQUIRE(resp.probs.rows == 5);
  REQUIRE(resp.probs.cols == f.g.num_classes);
  for (std::size_t k = 0; k < ids.size(); ++k)
    for (int c = 0; c < f.g.num_classes; ++c) {
      double got = resp.probs.at(static_cast<int>(k), c);
      double want = clean.probs.at(static_cast<int>(ids[k]), c);
      CHECK(std::memcmp(&got, &want, sizeof(double)) == 0);
    }
  // labels are the argmax of the served rows
  for (std::size_t k = 0; k < ids.size(); ++k)
    CHECK(resp.labels[k] == clean.hard[ids[k]]);
  // duplicate id answered identically within the batch
  for (int c = 0; c < f.g.num_classes; ++c)
    CHECK(resp.probs.at(1, c) == resp.probs.at(4, c));
}

TEST_CASE("budget accounting charges every id and rejects whole batches") {
  const auto& f = fix();
  auto oracle = make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 10);
  std::vector<std::uint32_t> batch{1, 2, 3, 4};
  oracle.query(batch);
  oracle.query(batch);  // duplicates across batches are charged again
  CHECK(oracle.queries_used() == 8);
  CHECK_THROWS_AS(oracle.query(batch), BudgetExhausted);
  CHECK(oracle.queries_used() == 8);  // rejected batch charges nothing
  CHECK(oracle.log().size() == 2);
  oracle.query({7, 8});  // exactly to the limit is fine
  CHECK(oracle.queries_used() == 10);
  CHECK(oracle.remaining() == 0);

  // empty batch is free and unlogged
  auto empty = oracle.query({});
  CHECK(empty.ids.empty());
  CHECK(empty.labels.empty());
  CHECK(oracle.queries_used() == 10);
  CHECK(oracle.log().size() == 3);

  auto fresh = make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 10);
  CHECK_THROWS_AS(fresh.query({200}), std::invalid_argument);
  CHECK_THROWS_AS(make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 0),
                  std::invalid_argument);
}

TEST_CASE("repeat queries identical without noise, differing under noise") {
  const auto& f = fix();
  std::vector<std::uint32_t> ids{3, 30, 60, 90};

  auto quiet = make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 100);
  auto r1 = quiet.query(ids);
  auto r2 = quiet.query(ids);
  CHECK(r1.probs.a == r2.probs.a);

  std::vector<DefenseSpec> chain_spec{default_defense(DefenseKind::OP_low)};
  auto noisy = make_oracle(f.target, f.g, make_chain(chain_spec), ResponseMode::SoftProbs, 4000, 99);
  int flips = 0, diffs = 0;
  auto base = quiet.query(ids);
  for (int rep = 0; rep < 50; ++rep) {
    auto r = noisy.query(ids);
    if (r.probs.a != base.probs.a) ++diffs;
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (r.labels[k] != base.labels[k]) ++flips;
  }
  CHECK(diffs == 50);               // fresh draws perturb every response
  CHECK(flips < 50 * 4 / 5);        // sigma=0.05: argmax mostly stable
  // rows remain normalized after the logits-stage noise
  auto r = noisy.query(ids);
  for (int i = 0; i < r.probs.rows; ++i) {
    double s = 0.0;
    for (int c = 0; c < r.probs.cols; ++c) s += r.probs.at(i, c);
    CHECK(s == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("hard and quantized response modes") {
  const auto& f = fix();
  std::vector<std::uint32_t> ids{2, 40, 80};

  auto soft = make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 100);
  auto hard = make_oracle(f.target, f.g, {}, ResponseMode::HardLabel, 100);
  auto rs = soft.query(ids);
  auto rh = hard.query(ids);
  CHECK(rh.probs.a.empty());
  CHECK(rh.labels == rs.labels);

  auto quant = make_oracle(f.target, f.g, {}, ResponseMode::Quantized, 100);
  auto rq = quant.query(ids);
  for (int i = 0; i < rq.probs.rows; ++i) {
    double s = 0.0;
    for (int c = 0; c < rq.probs.cols; ++c) s += rq.probs.at(i, c);
    CHECK(s == Catch::Approx(1.0).margin(1e-9));
  }
  // quantized argmax still matches: rounding to levels keeps the order here
  CHECK(rq.labels == rs.labels);
}

TEST_CASE("top-1 transform forces one-hot responses") {
  const auto& f = fix();
  std::vector<DefenseSpec> chain_spec{default_defense(DefenseKind::PR_top1)};
  auto oracle = make_oracle(f.target, f.g, make_chain(chain_spec), ResponseMode::SoftProbs, 100);
  auto r = oracle.query({0, 1, 2, 3, 4});
  for (int i = 0; i < r.probs.rows; ++i) {
    int ones = 0, zeros = 0;
    for (int c = 0; c < r.probs.cols; ++c) {
      if (r.probs.at(i, c) == 1.0) ++ones;
      if (r.probs.at(i, c) == 0.0) ++zeros;
    }
    CHECK(ones == 1);
    CHECK(zeros == r.probs.cols - 1);
    CHECK(r.probs.at(i, r.labels[i]) == 1.0);
  }
}

TEST_CASE("budget spec arithmetic and node sampling") {
  const auto& f = fix();
  // the fixture splits 120 nodes into quarters of 30
  REQUIRE(f.splits.test.size() == 30);
  REQUIRE(f.splits.query.size() == 30);

  auto b = make_budget(f.splits, 0.5, f.g.num_nodes);
  CHECK(b.realized_nodes == 15);
  CHECK(b.realized_fraction == Catch::Approx(15.0 / 120.0));

  auto cap = make_budget(f.splits, 2.0, f.g.num_nodes);
  CHECK(cap.realized_nodes == 30);  // pool smaller than 2x|test|

  CHECK_THROWS_AS(make_budget(f.splits, 0.01, f.g.num_nodes), std::invalid_argument);
  CHECK_THROWS_AS(make_budget(f.splits, -1.0, f.g.num_nodes), std::invalid_argument);

  Rng r1(7), r2(7), r3(8);
  auto ids = sample_budget_nodes(f.splits, b, r1);
  CHECK(ids.size() == 15);
  CHECK(std::is_sorted(ids.begin(), ids.end()));
  for (auto id : ids)
    CHECK(std::binary_search(f.splits.query.begin(), f.splits.query.end(), id));
  CHECK(ids == sample_budget_nodes(f.splits, b, r2));
  CHECK(ids != sample_budget_nodes(f.splits, b, r3));

  // whole pool comes back under the cap
  auto all = sample_budget_nodes(f.splits, cap, r1);
  CHECK(all == f.splits.query);

  // |test| = 100, multiplier 0.25 -> 25 nodes
  SplitSpec wide;
  wide.test.resize(100);
  wide.query.resize(200);
  for (std::uint32_t i = 0; i < 200; ++i) wide.query[i] = i;
  CHECK(make_budget(wide, 0.25, 400).realized_nodes == 25);
}

TEST_CASE("query log exports one JSON object per answered batch") {
  const auto& f = fix();
  auto oracle = make_oracle(f.target, f.g, {}, ResponseMode::SoftProbs, 100);
  oracle.query({1, 2, 3});
  oracle.query({4});
  std::ostringstream os;
  oracle.export_log_jsonl(os);
  std::istringstream is(os.str());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(is, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["n"] == 3);
  CHECK(rows[0]["ids"] == nlohmann::json::array({1, 2, 3}));
  CHECK(rows[1]["ids"] == nlohmann::json::array({4}));
  CHECK(rows[0]["t_ns"].get<std::int64_t>() >= 0);
  CHECK(rows[1]["t_ns"].get<std::int64_t>() >= rows[0]["t_ns"].get<std::int64_t>());
}
