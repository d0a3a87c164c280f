#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "graphbench/harness.hpp"

using namespace graphbench;

namespace {

// Small homophilic SBM config shared by the track tests.
DatasetSpec small_sbm(const char* name = "sbm-small") {
  DatasetSpec d;
  d.name = name;
  d.sbm.num_nodes = 150;
  d.sbm.num_classes = 3;
  d.sbm.p_in = 0.08;
  d.sbm.p_out = 0.005;
  d.sbm.feat_dim = 8;
  d.sbm.feat_signal = 1.5;
  d.sbm.name = name;
  return d;
}

AttackSpec attack(AttackKind k, int epochs = 120) {
  AttackSpec a;
  a.kind = k;
  a.epochs = epochs;
  return a;
}

std::vector<std::string> signatures(const std::vector<RunRecord>& rs) {
  std::vector<std::string> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(metric_signature(r));
  return out;
}

}  // namespace

TEST_CASE("attack and defense specs round-trip through json") {
  AttackSpec a;
  a.kind = AttackKind::DFEA_III;
  a.surrogate_backbone = Backbone::SAGE;
  a.epochs = 77;
  a.consistency_weight = 0.25;
  AttackSpec b = attack_spec_from_json(attack_spec_to_json(a));
  CHECK(b.kind == a.kind);
  CHECK(b.surrogate_backbone == a.surrogate_backbone);
  CHECK(b.epochs == 77);
  CHECK(b.consistency_weight == 0.25);
  CHECK(b.knn_k == a.knn_k);

  DefenseSpec d = default_defense(DefenseKind::OP_high);
  DefenseSpec e = defense_spec_from_json(defense_spec_to_json(d));
  CHECK(e.kind == DefenseKind::OP_high);
  CHECK(e.sigma == 0.20);

  // kind-aware defaults apply before overrides
  DefenseSpec f = defense_spec_from_json(nlohmann::json{{"kind", "OP_high"}});
  CHECK(f.sigma == 0.20);
  DefenseSpec g = defense_spec_from_json(nlohmann::json{{"kind", "OP_high"}, {"sigma", 0.3}});
  CHECK(g.sigma == 0.3);

  CHECK_THROWS_AS(attack_spec_from_json(nlohmann::json{{"kind", "MEA0"}, {"typo_key", 1}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(defense_spec_from_json(nlohmann::json{{"kind", "OP_low"}, {"sgima", 0.1}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(attack_spec_from_json(nlohmann::json{{"kind", "NotAnAttack"}}),
                  std::invalid_argument);
}

TEST_CASE("config json parsing and validation") {
  nlohmann::ordered_json j = {
      {"track", "extraction"},
      {"datasets",
       {{{"name", "toy"},
         {"sbm",
          {{"num_nodes", 90}, {"num_classes", 3}, {"p_in", 0.1}, {"p_out", 0.01},
           {"feat_dim", 6}, {"feat_signal", 1.0}}}}}},
      {"attacks", {{{"kind", "MEA0"}}, {{"kind", "MEA2"}, {"er_edge_prob", 0.05}}}},
      {"budgets", {0.5, 1.0}},
      {"regimes", {"both", "data_free"}},
      {"seeds", {0, 1}},
      {"response_mode", "soft_probs"},
      {"target_backbone", "GCN"},
      {"root_seed", 7},
  };
  ExperimentConfig cfg = config_from_json(j);
  CHECK(cfg.track == Track::Extraction);
  CHECK(cfg.datasets.size() == 1);
  CHECK(cfg.datasets[0].sbm.num_nodes == 90);
  CHECK(cfg.attacks.size() == 2);
  CHECK(cfg.attacks[1].er_edge_prob == 0.05);
  CHECK(cfg.regimes[1].kind == RegimeKind::DataFree);
  CHECK(cfg.root_seed == 7);

  auto bad = j;
  bad["seeds"] = {0, 0};
  CHECK_THROWS_AS(config_from_json(bad), std::invalid_argument);
  bad = j;
  bad["datasets"] = nlohmann::ordered_json::array();
  CHECK_THROWS_AS(config_from_json(bad), std::invalid_argument);
  bad = j;
  bad["surprise"] = 1;
  CHECK_THROWS_AS(config_from_json(bad), std::invalid_argument);
  bad = j;
  bad["datasets"][0].erase("sbm");
  CHECK_THROWS_AS(config_from_json(bad), std::invalid_argument);

  // ratios can ride along with a regime object
  auto rj = j;
  rj["regimes"] = nlohmann::ordered_json::array();
  rj["regimes"].push_back(nlohmann::ordered_json{{"kind", "x_only"}, {"x_ratio", 0.6}});
  ExperimentConfig rcfg = config_from_json(rj);
  CHECK(rcfg.regimes[0].kind == RegimeKind::XOnly);
  CHECK(rcfg.regimes[0].x_ratio == 0.6);
}

TEST_CASE("grid arithmetic: datasets x attacks x budgets x regimes x seeds") {
  ExperimentConfig cfg;
  cfg.track = Track::Extraction;
  cfg.datasets = {small_sbm()};
  cfg.attacks = {attack(AttackKind::MEA0)};
  cfg.budgets = {0.05, 0.10, 0.25, 0.50, 1.00};
  cfg.regimes = {Regime::both()};
  cfg.seeds = {0, 1, 2};
  CHECK(expected_record_count(cfg) == 15);

  auto result = run_experiment(cfg);
  REQUIRE(result.records.size() == 15);
  for (const auto& r : result.records) {
    CHECK(!r.error.has_value());
    CHECK(r.track == "extraction");
    CHECK(r.attack == "MEA0");
    CHECK(r.defense == "none");
    CHECK(r.fidelity.has_value());
    CHECK(r.accuracy.has_value());
    CHECK(!r.verification_rate.has_value());
    CHECK(r.queries_used <= r.realized_nodes);
    CHECK(r.queries_used > 0);
    CHECK(r.target_train_time_s >= 0.0);
    CHECK(r.query_time_s >= 0.0);
    CHECK(r.surrogate_train_time_s >= 0.0);
    CHECK(r.total_time_s >= 0.0);
  }
}

TEST_CASE("double run is byte-identical on metric fields, any worker count") {
  ExperimentConfig cfg;
  cfg.track = Track::Extraction;
  cfg.datasets = {small_sbm()};
  cfg.attacks = {attack(AttackKind::MEA0), attack(AttackKind::DFEA_II, 100)};
  cfg.budgets = {0.25, 1.0};
  cfg.regimes = {Regime::both(), Regime::data_free()};
  cfg.seeds = {0, 1};
  cfg.root_seed = 42;

  auto first = run_experiment(cfg);
  auto second = run_experiment(cfg);
  REQUIRE(first.records.size() == second.records.size());
  CHECK(signatures(first.records) == signatures(second.records));

  cfg.workers = 3;
  auto parallel = run_experiment(cfg);
  CHECK(signatures(first.records) == signatures(parallel.records));

  // a different root seed must actually change something
  cfg.workers = 1;
  cfg.root_seed = 43;
  auto other = run_experiment(cfg);
  CHECK(signatures(first.records) != signatures(other.records));
}

TEST_CASE("BENCH_ROOT_SEED overrides the configured root seed") {
  ExperimentConfig cfg;
  cfg.track = Track::Extraction;
  cfg.datasets = {small_sbm()};
  cfg.attacks = {attack(AttackKind::MEA0)};
  cfg.budgets = {1.0};
  cfg.seeds = {0};
  cfg.root_seed = 5;

  auto plain = run_experiment(cfg);
  setenv("BENCH_ROOT_SEED", "5", 1);
  auto same = run_experiment(cfg);
  setenv("BENCH_ROOT_SEED", "99", 1);
  auto other = run_experiment(cfg);
  unsetenv("BENCH_ROOT_SEED");

  CHECK(same.root_seed == 5);
  CHECK(other.root_seed == 99);
  CHECK(signatures(plain.records) == signatures(same.records));
  CHECK(signatures(plain.records) != signatures(other.records));

  setenv("BENCH_ROOT_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
  unsetenv("BENCH_ROOT_SEED");
}

TEST_CASE("a broken dataset isolates: error rows fill its cells, the rest run") {
  ExperimentConfig cfg;
  cfg.track = Track::Extraction;
  cfg.datasets = {small_sbm("good")};
  DatasetSpec broken;
  broken.name = "broken";
  broken.bundle_dir = "/nonexistent/bundle/path";
  cfg.datasets.push_back(broken);
  cfg.attacks = {attack(AttackKind::MEA0)};
  cfg.budgets = {1.0};
  cfg.seeds = {0, 1};

  auto result = run_experiment(cfg);
  REQUIRE(result.records.size() == 4);  // 2 datasets x 1 x 1 x 1 x 2 seeds
  int good_rows = 0, error_rows = 0;
  for (const auto& r : result.records) {
    if (r.dataset == "good") {
      CHECK(!r.error.has_value());
      CHECK(r.fidelity.has_value());
      ++good_rows;
    } else {
      CHECK(r.error.has_value());
      CHECK(!r.fidelity.has_value());
      CHECK(r.dataset == "broken");
      ++error_rows;
    }
  }
  CHECK(good_rows == 2);
  CHECK(error_rows == 2);

  // a degenerate budget isolates the same way
  ExperimentConfig tiny = cfg;
  tiny.datasets = {small_sbm()};
  tiny.budgets = {0.001, 1.0};
  auto r2 = run_experiment(tiny);
  REQUIRE(r2.records.size() == 4);
  CHECK(r2.records[0].error.has_value());   // budget 0.001, seed 0
  CHECK(r2.records[1].error.has_value());
  CHECK(!r2.records[2].error.has_value());  // budget 1.0 unaffected
  CHECK(!r2.records[3].error.has_value());
}

TEST_CASE("jsonl round-trip is lossless") {
  std::vector<RunRecord> recs;
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    RunRecord r;
    r.track = i % 2 ? "extraction" : "joint";
    r.dataset = "d" + std::to_string(i % 3);
    r.attack = "MEA" + std::to_string(i % 6);
    r.defense = i % 4 ? "none" : "BackdoorWM";
    r.config_index = i;
    r.budget_multiplier = 0.25 * (i % 4 + 1);
    r.realized_node_fraction = rng.uniform();
    r.regime = "both";
    r.x_ratio = 1.0;
    r.a_ratio = rng.uniform();
    r.seed = static_cast<std::uint64_t>(i);
    if (i % 5) r.accuracy = rng.uniform();
    if (i % 7) r.fidelity = rng.uniform();
    if (i % 11 == 0) r.survival_rate = rng.uniform();
    r.target_train_time_s = rng.uniform();
    r.total_time_s = rng.uniform();
    r.queries_used = static_cast<std::size_t>(i * 3);
    r.realized_nodes = static_cast<std::size_t>(i * 3 + 1);
    if (i % 13 == 0) r.error = "lines with \"quotes\" and, commas";
    recs.push_back(std::move(r));
  }
  auto path = std::filesystem::temp_directory_path() / "gb_roundtrip.jsonl";
  write_jsonl(path.string(), recs);
  auto back = read_jsonl(path.string());
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(record_to_json(back[i]) == record_to_json(recs[i]));
    CHECK(back[i].total_time_s == recs[i].total_time_s);
  }
  std::filesystem::remove(path);
}

TEST_CASE("ownership track: baseline, watermark, and wrapped endpoint rows") {
  ExperimentConfig cfg;
  cfg.track = Track::Ownership;
  cfg.datasets = {small_sbm()};
  cfg.defenses = {default_defense(DefenseKind::BackdoorWM),
                  default_defense(DefenseKind::Integrity),
                  default_defense(DefenseKind::OP_low)};
  cfg.seeds = {0, 1};

  auto result = run_experiment(cfg);
  // (baseline + 3 defenses) x 2 seeds
  REQUIRE(result.records.size() == 8);

  for (const auto& r : result.records) {
    REQUIRE(!r.error.has_value());
    CHECK(r.track == "ownership");
    CHECK(r.attack == "none");
    CHECK(r.accuracy.has_value());
    CHECK(r.fidelity.has_value());
    CHECK(!r.survival_rate.has_value());
    CHECK(r.target_train_time_s >= 0.0);
    CHECK(r.total_time_s >= 0.0);
    CHECK(r.queries_used <= r.realized_nodes * 1);
  }

  auto rows_for = [&](const std::string& name) {
    std::vector<RunRecord> out;
    for (const auto& r : result.records)
      if (r.defense == name) out.push_back(r);
    return out;
  };

  for (const auto& r : rows_for("none")) {
    CHECK(r.config_index == -1);
    CHECK(*r.fidelity == 1.0);
    CHECK(!r.verification_rate.has_value());
    CHECK(r.queries_used == 0);
  }
  for (const auto& r : rows_for("BackdoorWM")) {
    CHECK(r.verification_rate.has_value());
    CHECK(r.queries_used == 0);  // verification runs against the model, not the endpoint
  }
  // recorded fingerprints match the model they were recorded from
  for (const auto& r : rows_for("Integrity")) {
    REQUIRE(r.verification_rate.has_value());
    CHECK(*r.verification_rate == 1.0);
  }
  for (const auto& r : rows_for("OP_low")) {
    REQUIRE(r.verification_rate.has_value());
    CHECK(r.queries_used > 0);
    CHECK(r.queries_used == r.realized_nodes);  // test split + probes, each once
    CHECK(*r.verification_rate >= 0.5);         // sigma 0.05 rarely flips a separated argmax
  }
}

TEST_CASE("joint track: survival recorded for watermarks, null for wrappers") {
  ExperimentConfig cfg;
  cfg.track = Track::Joint;
  cfg.datasets = {small_sbm()};
  cfg.defenses = {default_defense(DefenseKind::Integrity),
                  default_defense(DefenseKind::PR_top1)};
  cfg.attacks = {attack(AttackKind::MEA0)};
  cfg.seeds = {0};

  auto result = run_experiment(cfg);
  REQUIRE(result.records.size() == 2);

  const RunRecord& integ = result.records[0];
  const RunRecord& prtop = result.records[1];
  REQUIRE(!integ.error.has_value());
  REQUIRE(!prtop.error.has_value());

  CHECK(integ.defense == "Integrity");
  CHECK(integ.budget_multiplier == 0.25);
  CHECK(integ.fidelity.has_value());
  REQUIRE(integ.survival_rate.has_value());
  CHECK(*integ.survival_rate >= 0.0);
  REQUIRE(integ.verification_rate.has_value());
  CHECK(*integ.verification_rate == 1.0);
  CHECK(integ.queries_used <= integ.realized_nodes);
  CHECK(integ.queries_used > 0);

  CHECK(prtop.defense == "PR_top1");
  CHECK(prtop.fidelity.has_value());
  CHECK(!prtop.survival_rate.has_value());
  CHECK(!prtop.verification_rate.has_value());
  CHECK(prtop.queries_used <= prtop.realized_nodes);
}

TEST_CASE("sweep expansion: cartesian order, single point equals a plain run") {
  SweepEntry e;
  e.base = default_defense(DefenseKind::PR_2bit);
  e.params = {{"sigma", {0.1, 0.2}}, {"bits", {1, 2, 3}}};
  auto expanded = expand_sweeps({e});
  REQUIRE(expanded.size() == 6);
  CHECK(expanded[0].sigma == 0.1);
  CHECK(expanded[0].bits == 1);
  CHECK(expanded[1].sigma == 0.1);
  CHECK(expanded[1].bits == 2);
  CHECK(expanded[3].sigma == 0.2);
  CHECK(expanded[3].bits == 1);
  CHECK_THROWS_AS(
      [] {
        DefenseSpec sp;
        set_defense_param(sp, "no_such_param", 1.0);
      }(),
      std::invalid_argument);

  ExperimentConfig sweep_cfg;
  sweep_cfg.track = Track::Sweep;
  sweep_cfg.datasets = {small_sbm()};
  SweepEntry single;
  single.base = default_defense(DefenseKind::OP_low);
  single.params = {{"sigma", {0.05}}};
  sweep_cfg.sweeps = {single};
  sweep_cfg.seeds = {0};

  ExperimentConfig own_cfg = sweep_cfg;
  own_cfg.track = Track::Ownership;
  own_cfg.sweeps.clear();
  own_cfg.defenses = {default_defense(DefenseKind::OP_low)};

  auto sweep_res = run_experiment(sweep_cfg);
  auto own_res = run_experiment(own_cfg);
  REQUIRE(sweep_res.records.size() == 2);  // baseline + 1 point
  REQUIRE(own_res.records.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const RunRecord& a = sweep_res.records[i];
    const RunRecord& b = own_res.records[i];
    CHECK(a.track == "sweep");
    CHECK(b.track == "ownership");
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.fidelity == b.fidelity);
    CHECK(a.verification_rate == b.verification_rate);
    CHECK(a.queries_used == b.queries_used);
  }
}

TEST_CASE("reports: deterministic csv layout") {
  std::vector<RunRecord> recs;
  const char* attacks[] = {"A01", "A02", "A03", "A04", "A05", "A06",
                           "A07", "A08", "A09", "A10", "A11", "A12"};
  const char* wms[] = {"W1", "W2", "W3", "W4", "W5"};
  Rng rng(3);
  for (const char* a : attacks)
    for (const char* w : wms)
      for (int s = 0; s < 2; ++s) {
        RunRecord r;
        r.track = "joint";
        r.dataset = "toy";
        r.attack = a;
        r.defense = w;
        r.seed = static_cast<std::uint64_t>(s);
        r.budget_multiplier = 0.25;
        r.fidelity = rng.uniform();
        r.survival_rate = rng.uniform();
        recs.push_back(std::move(r));
      }

  std::string surv = report(recs, "survival");
  std::istringstream is(surv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 14);  // header + 12 attacks + column means
  CHECK(lines[0] == "attack,W1,W2,W3,W4,W5,row_mean");
  CHECK(lines[13].rfind("col_mean,", 0) == 0);
  // every attack row has 5 cells + margin
  for (int i = 1; i <= 12; ++i)
    CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 6);
  CHECK(report(recs, "survival") == surv);  // deterministic

  std::string curves = report(recs, "curves");
  CHECK(curves.rfind("dataset,attack,budget,mean,std\n", 0) == 0);

  std::string board = report(recs, "leaderboard");
  CHECK(board.rfind("dataset,attack,defense,config_index,rows,errors,", 0) == 0);

  CHECK_THROWS_AS(report(recs, "nonsense"), std::invalid_argument);

  // error rows are counted but contribute no samples
  RunRecord err;
  err.track = "joint";
  err.dataset = "toy";
  err.attack = "A01";
  err.defense = "W1";
  err.error = "boom";
  auto with_err = recs;
  with_err.push_back(err);
  std::string board2 = report_leaderboard(with_err);
  CHECK(board2.find("toy,A01,W1,0,3,1,") != std::string::npos);
}

TEST_CASE("output directory gets records, config echo, and protocol") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "gb_harness_out";
  fs::remove_all(dir);

  ExperimentConfig cfg;
  cfg.track = Track::Ownership;
  cfg.datasets = {small_sbm()};
  cfg.defenses = {default_defense(DefenseKind::OP_low)};
  cfg.seeds = {0};
  cfg.output_dir = dir.string();

  auto result = run_experiment(cfg);
  auto on_disk = read_jsonl((dir / "records.jsonl").string());
  REQUIRE(on_disk.size() == result.records.size());
  for (std::size_t i = 0; i < on_disk.size(); ++i)
    CHECK(record_to_json(on_disk[i]) == record_to_json(result.records[i]));

  std::ifstream cis(dir / "config.json");
  REQUIRE(cis.good());
  auto echoed = nlohmann::ordered_json::parse(cis);
  CHECK(echoed.at("track") == "ownership");
  ExperimentConfig parsed = config_from_json(echoed);  // echo is itself a valid config
  CHECK(parsed.defenses.size() == 1);

  std::ifstream pis(dir / "protocol.json");
  REQUIRE(pis.good());
  auto protocol = nlohmann::json::parse(pis);
  CHECK(protocol.at("root_seed") == 0);
  CHECK(protocol.at("probe_sets").contains("sbm-small"));
  CHECK(protocol.at("probe_sets").at("sbm-small").at("0").size() > 0);
  fs::remove_all(dir);
}
