#pragma once

// Experiment orchestration: the extraction, ownership, and joint tracks plus
// defense-parameter sweeps. A run expands a config into a flat grid of
// cells, executes them on a bounded worker pool, and emits one RunRecord per
// cell in grid order regardless of worker count or completion order.
//
// Randomness discipline: every draw comes from a SeedTree stream whose label
// names the consumer ("target/<dataset>/seed/3" -> "init", "train"). Labels
// never encode grid positions, so adding attacks, budgets, or datasets to a
// config does not move the randomness of existing cells. Wall-clock fields
// are the only record fields allowed to differ between identical runs.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphbench/attacks.hpp"
#include "graphbench/bundle.hpp"
#include "graphbench/defenses.hpp"
#include "graphbench/metrics.hpp"
#include "graphbench/records.hpp"
#include "graphbench/sbm.hpp"

namespace graphbench {

enum class Track { Extraction, Ownership, Joint, Sweep };

inline const char* track_name(Track t) {
  switch (t) {
    case Track::Extraction: return "extraction";
    case Track::Ownership: return "ownership";
    case Track::Joint: return "joint";
    case Track::Sweep: return "sweep";
  }
  return "?";
}

inline Track parse_track(const std::string& s) {
  for (int t = 0; t <= static_cast<int>(Track::Sweep); ++t)
    if (s == track_name(static_cast<Track>(t))) return static_cast<Track>(t);
  throw std::invalid_argument("unknown track: " + s);
}

// ---- spec serialization ----
//
// Specs round-trip through JSON with their struct field names. Parsing is
// strict: an unknown key is an error, so a typo in a config fails loudly
// instead of silently running defaults.

namespace harness_detail {

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

template <typename T>
inline void take(const nlohmann::json& j, std::vector<std::string>& seen, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  out = it->get<T>();
  seen.push_back(key);
}

inline void check_no_stray_keys(const nlohmann::json& j, const std::vector<std::string>& seen,
                                const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(seen.begin(), seen.end(), it.key()) == seen.end())
      throw std::invalid_argument(what + ": unknown key \"" + it.key() + "\"");
}

}  // namespace harness_detail

inline nlohmann::ordered_json attack_spec_to_json(const AttackSpec& sp) {
  nlohmann::ordered_json j;
  j["kind"] = attack_kind_name(sp.kind);
  j["surrogate_backbone"] = backbone_name(sp.surrogate_backbone);
  j["surrogate_hidden"] = sp.surrogate_hidden;
  j["epochs"] = sp.epochs;
  j["lr"] = sp.lr;
  j["weight_decay"] = sp.weight_decay;
  j["dropout"] = sp.dropout;
  j["knn_k"] = sp.knn_k;
  j["er_edge_prob"] = sp.er_edge_prob;
  j["cega_rounds"] = sp.cega_rounds;
  j["cega_lambda"] = sp.cega_lambda;
  j["adv_step"] = sp.adv_step;
  j["edge_model_epochs"] = sp.edge_model_epochs;
  j["consistency_weight"] = sp.consistency_weight;
  return j;
}

inline AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  using harness_detail::take;
  AttackSpec sp;
  sp.kind = parse_attack_kind(j.at("kind").get<std::string>());
  std::vector<std::string> seen = {"kind"};
  std::string bb;
  take(j, seen, "surrogate_backbone", bb);
  if (!bb.empty()) sp.surrogate_backbone = parse_backbone(bb);
  take(j, seen, "surrogate_hidden", sp.surrogate_hidden);
  take(j, seen, "epochs", sp.epochs);
  take(j, seen, "lr", sp.lr);
  take(j, seen, "weight_decay", sp.weight_decay);
  take(j, seen, "dropout", sp.dropout);
  take(j, seen, "knn_k", sp.knn_k);
  take(j, seen, "er_edge_prob", sp.er_edge_prob);
  take(j, seen, "cega_rounds", sp.cega_rounds);
  take(j, seen, "cega_lambda", sp.cega_lambda);
  take(j, seen, "adv_step", sp.adv_step);
  take(j, seen, "edge_model_epochs", sp.edge_model_epochs);
  take(j, seen, "consistency_weight", sp.consistency_weight);
  harness_detail::check_no_stray_keys(j, seen, "attack spec");
  check_attack_spec(sp);
  return sp;
}

inline nlohmann::ordered_json defense_spec_to_json(const DefenseSpec& sp) {
  nlohmann::ordered_json j;
  j["kind"] = defense_kind_name(sp.kind);
  j["trigger_rate"] = sp.trigger_rate;
  j["trigger_dims"] = sp.trigger_dims;
  j["trigger_value"] = sp.trigger_value;
  j["joint_alpha"] = sp.joint_alpha;
  j["wm_node_ratio"] = sp.wm_node_ratio;
  j["wm_node_count"] = sp.wm_node_count;
  j["wm_strength"] = sp.wm_strength;
  j["snnl_alpha"] = sp.snnl_alpha;
  j["key_ratio"] = sp.key_ratio;
  j["t_opt"] = sp.t_opt;
  j["epsilon"] = sp.epsilon;
  j["fingerprint_count"] = sp.fingerprint_count;
  j["sigma"] = sp.sigma;
  j["bits"] = sp.bits;
  j["prada_window"] = sp.prada_window;
  j["prada_threshold"] = sp.prada_threshold;
  j["misinfo_threshold"] = sp.misinfo_threshold;
  j["redirect_strength"] = sp.redirect_strength;
  j["epochs"] = sp.train.epochs;
  j["lr"] = sp.train.lr;
  j["weight_decay"] = sp.train.weight_decay;
  j["dropout"] = sp.train.dropout;
  return j;
}

inline DefenseSpec defense_spec_from_json(const nlohmann::json& j,
                                          const std::vector<std::string>& extra_ok = {}) {
  using harness_detail::take;
  DefenseKind kind = parse_defense_kind(j.at("kind").get<std::string>());
  DefenseSpec sp = default_defense(kind);
  std::vector<std::string> seen = {"kind"};
  for (const auto& k : extra_ok) seen.push_back(k);
  take(j, seen, "trigger_rate", sp.trigger_rate);
  take(j, seen, "trigger_dims", sp.trigger_dims);
  take(j, seen, "trigger_value", sp.trigger_value);
  take(j, seen, "joint_alpha", sp.joint_alpha);
  take(j, seen, "wm_node_ratio", sp.wm_node_ratio);
  take(j, seen, "wm_node_count", sp.wm_node_count);
  take(j, seen, "wm_strength", sp.wm_strength);
  take(j, seen, "snnl_alpha", sp.snnl_alpha);
  take(j, seen, "key_ratio", sp.key_ratio);
  take(j, seen, "t_opt", sp.t_opt);
  take(j, seen, "epsilon", sp.epsilon);
  take(j, seen, "fingerprint_count", sp.fingerprint_count);
  take(j, seen, "sigma", sp.sigma);
  take(j, seen, "bits", sp.bits);
  take(j, seen, "prada_window", sp.prada_window);
  take(j, seen, "prada_threshold", sp.prada_threshold);
  take(j, seen, "misinfo_threshold", sp.misinfo_threshold);
  take(j, seen, "redirect_strength", sp.redirect_strength);
  take(j, seen, "epochs", sp.train.epochs);
  take(j, seen, "lr", sp.train.lr);
  take(j, seen, "weight_decay", sp.train.weight_decay);
  take(j, seen, "dropout", sp.train.dropout);
  harness_detail::check_no_stray_keys(j, seen, "defense spec");
  return sp;
}

// Assign one named numeric parameter; the sweep machinery drives this.
inline void set_defense_param(DefenseSpec& sp, const std::string& name, double value) {
  auto as_int = [&] { return static_cast<int>(std::llround(value)); };
  if (name == "trigger_rate") sp.trigger_rate = value;
  else if (name == "trigger_dims") sp.trigger_dims = as_int();
  else if (name == "trigger_value") sp.trigger_value = value;
  else if (name == "joint_alpha") sp.joint_alpha = value;
  else if (name == "wm_node_ratio") sp.wm_node_ratio = value;
  else if (name == "wm_node_count") sp.wm_node_count = as_int();
  else if (name == "wm_strength") sp.wm_strength = value;
  else if (name == "snnl_alpha") sp.snnl_alpha = value;
  else if (name == "key_ratio") sp.key_ratio = value;
  else if (name == "t_opt") sp.t_opt = value;
  else if (name == "epsilon") sp.epsilon = value;
  else if (name == "fingerprint_count") sp.fingerprint_count = as_int();
  else if (name == "sigma") sp.sigma = value;
  else if (name == "bits") sp.bits = as_int();
  else if (name == "prada_window") sp.prada_window = as_int();
  else if (name == "prada_threshold") sp.prada_threshold = value;
  else if (name == "misinfo_threshold") sp.misinfo_threshold = value;
  else if (name == "redirect_strength") sp.redirect_strength = value;
  else if (name == "epochs") sp.train.epochs = as_int();
  else if (name == "lr") sp.train.lr = value;
  else throw std::invalid_argument("sweep: unknown defense parameter \"" + name + "\"");
}

// ---- configuration ----

struct DatasetSpec {
  std::string name;
  std::string bundle_dir;  // non-empty: load from disk, sbm ignored
  SbmParams sbm;
  SplitFractions split_fractions;  // generated datasets only; bundles ship explicit splits
  bool from_bundle() const { return !bundle_dir.empty(); }
};

// One sweep axis: a base defense and named parameter value lists, expanded
// as a cartesian product in declaration order (first parameter slowest).
struct SweepEntry {
  DefenseSpec base;
  std::vector<std::pair<std::string, std::vector<double>>> params;
};

struct ExperimentConfig {
  Track track = Track::Extraction;
  std::vector<DatasetSpec> datasets;
  std::vector<AttackSpec> attacks;
  std::vector<DefenseSpec> defenses;
  std::vector<SweepEntry> sweeps;
  std::vector<double> budgets = {0.05, 0.10, 0.25, 0.50, 1.00};
  std::vector<Regime> regimes = {Regime::both()};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ResponseMode response_mode = ResponseMode::SoftProbs;
  Backbone target_backbone = Backbone::GCN;
  int target_hidden = 16;
  TrainConfig target_train;
  double joint_budget = 0.25;
  std::uint64_t root_seed = 0;
  int workers = 1;
  std::string output_dir;
};

inline void check_config(const ExperimentConfig& cfg) {
  if (cfg.datasets.empty()) throw std::invalid_argument("config: no datasets");
  for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
    if (cfg.datasets[i].name.empty()) throw std::invalid_argument("config: dataset without a name");
    for (std::size_t k = i + 1; k < cfg.datasets.size(); ++k)
      if (cfg.datasets[i].name == cfg.datasets[k].name)
        throw std::invalid_argument("config: duplicate dataset name " + cfg.datasets[i].name);
  }
  if (cfg.seeds.empty()) throw std::invalid_argument("config: no seeds");
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    for (std::size_t k = i + 1; k < cfg.seeds.size(); ++k)
      if (cfg.seeds[i] == cfg.seeds[k]) throw std::invalid_argument("config: seeds must be distinct");
  if (cfg.regimes.empty()) throw std::invalid_argument("config: no regimes");
  bool needs_attacks = cfg.track == Track::Extraction || cfg.track == Track::Joint;
  if (needs_attacks && cfg.attacks.empty()) throw std::invalid_argument("config: no attacks");
  if (cfg.track == Track::Extraction && cfg.budgets.empty())
    throw std::invalid_argument("config: no budgets");
  if ((cfg.track == Track::Ownership || cfg.track == Track::Joint) && cfg.defenses.empty())
    throw std::invalid_argument("config: no defenses");
  if (cfg.track == Track::Sweep && cfg.sweeps.empty())
    throw std::invalid_argument("config: sweep track without sweep entries");
  for (const auto& s : cfg.sweeps) {
    if (s.params.empty()) throw std::invalid_argument("config: sweep entry without parameters");
    for (const auto& [name, values] : s.params)
      if (values.empty())
        throw std::invalid_argument("config: sweep parameter \"" + name + "\" has no values");
  }
  if (cfg.joint_budget <= 0.0) throw std::invalid_argument("config: joint budget must be > 0");
  if (cfg.workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  for (const auto& a : cfg.attacks) check_attack_spec(a);
}

inline ExperimentConfig config_from_json(const nlohmann::ordered_json& j) {
  using harness_detail::take;
  ExperimentConfig cfg;
  cfg.track = parse_track(j.at("track").get<std::string>());
  std::vector<std::string> seen = {"track", "datasets", "attacks", "defenses", "sweeps",
                                   "budgets", "regimes", "seeds", "response_mode",
                                   "target_backbone", "target_hidden", "target_train",
                                   "joint_budget", "root_seed", "workers", "output_dir"};
  for (const auto& dj : j.at("datasets")) {
    DatasetSpec d;
    d.name = dj.at("name").get<std::string>();
    harness_detail::check_no_stray_keys(dj, {"name", "bundle", "sbm", "splits"}, "dataset " + d.name);
    if (dj.contains("splits")) {
      if (dj.contains("bundle"))
        throw std::invalid_argument("dataset " + d.name +
                                    ": \"splits\" conflicts with \"bundle\" (bundles ship their own)");
      const auto& fj = dj.at("splits");
      std::vector<std::string> fseen;
      take(fj, fseen, "train", d.split_fractions.train);
      take(fj, fseen, "val", d.split_fractions.val);
      take(fj, fseen, "test", d.split_fractions.test);
      take(fj, fseen, "query", d.split_fractions.query);
      harness_detail::check_no_stray_keys(fj, fseen, "dataset " + d.name + " splits");
    }
    if (dj.contains("bundle")) {
      d.bundle_dir = dj.at("bundle").get<std::string>();
    } else if (dj.contains("sbm")) {
      const auto& sj = dj.at("sbm");
      std::vector<std::string> sseen;
      take(sj, sseen, "num_nodes", d.sbm.num_nodes);
      take(sj, sseen, "num_classes", d.sbm.num_classes);
      take(sj, sseen, "p_in", d.sbm.p_in);
      take(sj, sseen, "p_out", d.sbm.p_out);
      take(sj, sseen, "feat_dim", d.sbm.feat_dim);
      take(sj, sseen, "feat_signal", d.sbm.feat_signal);
      harness_detail::check_no_stray_keys(sj, sseen, "sbm spec");
      d.sbm.name = d.name;
    } else {
      throw std::invalid_argument("dataset " + d.name + ": needs \"bundle\" or \"sbm\"");
    }
    cfg.datasets.push_back(std::move(d));
  }
  if (j.contains("attacks")) {
    cfg.attacks.clear();
    for (const auto& aj : j.at("attacks")) cfg.attacks.push_back(attack_spec_from_json(aj));
  }
  if (j.contains("defenses")) {
    cfg.defenses.clear();
    for (const auto& dj : j.at("defenses")) cfg.defenses.push_back(defense_spec_from_json(dj));
  }
  if (j.contains("sweeps")) {
    for (const auto& sj : j.at("sweeps")) {
      SweepEntry e;
      e.base = defense_spec_from_json(sj, {"param_grid"});
      for (auto it = sj.at("param_grid").begin(); it != sj.at("param_grid").end(); ++it)
        e.params.emplace_back(it.key(), it.value().get<std::vector<double>>());
      cfg.sweeps.push_back(std::move(e));
    }
  }
  if (j.contains("budgets")) cfg.budgets = j.at("budgets").get<std::vector<double>>();
  if (j.contains("regimes")) {
    cfg.regimes.clear();
    for (const auto& rj : j.at("regimes")) {
      if (rj.is_string()) {
        cfg.regimes.push_back(parse_regime(rj.get<std::string>()));
      } else {
        Regime r = parse_regime(rj.at("kind").get<std::string>());
        if (rj.contains("x_ratio")) r.x_ratio = rj.at("x_ratio").get<double>();
        if (rj.contains("a_ratio")) r.a_ratio = rj.at("a_ratio").get<double>();
        cfg.regimes.push_back(r);
      }
    }
  }
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("response_mode"))
    cfg.response_mode = parse_response_mode(j.at("response_mode").get<std::string>());
  if (j.contains("target_backbone"))
    cfg.target_backbone = parse_backbone(j.at("target_backbone").get<std::string>());
  if (j.contains("target_hidden")) cfg.target_hidden = j.at("target_hidden").get<int>();
  if (j.contains("target_train")) {
    const auto& tj = j.at("target_train");
    std::vector<std::string> tseen;
    take(tj, tseen, "epochs", cfg.target_train.epochs);
    take(tj, tseen, "lr", cfg.target_train.lr);
    take(tj, tseen, "weight_decay", cfg.target_train.weight_decay);
    take(tj, tseen, "dropout", cfg.target_train.dropout);
    harness_detail::check_no_stray_keys(tj, tseen, "target_train");
  }
  if (j.contains("joint_budget")) cfg.joint_budget = j.at("joint_budget").get<double>();
  if (j.contains("root_seed")) cfg.root_seed = j.at("root_seed").get<std::uint64_t>();
  if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  harness_detail::check_no_stray_keys(j, seen, "config");
  check_config(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(is);
  return config_from_json(j);
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["track"] = track_name(cfg.track);
  j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& d : cfg.datasets) {
    nlohmann::ordered_json dj;
    dj["name"] = d.name;
    if (d.from_bundle()) {
      dj["bundle"] = d.bundle_dir;
    } else {
      dj["sbm"] = {{"num_nodes", d.sbm.num_nodes}, {"num_classes", d.sbm.num_classes},
                   {"p_in", d.sbm.p_in},           {"p_out", d.sbm.p_out},
                   {"feat_dim", d.sbm.feat_dim},   {"feat_signal", d.sbm.feat_signal}};
      dj["splits"] = {{"train", d.split_fractions.train},
                      {"val", d.split_fractions.val},
                      {"test", d.split_fractions.test},
                      {"query", d.split_fractions.query}};
    }
    j["datasets"].push_back(dj);
  }
  j["attacks"] = nlohmann::ordered_json::array();
  for (const auto& a : cfg.attacks) j["attacks"].push_back(attack_spec_to_json(a));
  j["defenses"] = nlohmann::ordered_json::array();
  for (const auto& d : cfg.defenses) j["defenses"].push_back(defense_spec_to_json(d));
  j["sweeps"] = nlohmann::ordered_json::array();
  for (const auto& s : cfg.sweeps) {
    nlohmann::ordered_json sj = defense_spec_to_json(s.base);
    nlohmann::ordered_json pg;
    for (const auto& [name, values] : s.params) pg[name] = values;
    sj["param_grid"] = pg;
    j["sweeps"].push_back(sj);
  }
  j["budgets"] = cfg.budgets;
  j["regimes"] = nlohmann::ordered_json::array();
  for (const auto& r : cfg.regimes) {
    nlohmann::ordered_json rj;
    rj["kind"] = regime_name(r.kind);
    rj["x_ratio"] = r.x_ratio;
    rj["a_ratio"] = r.a_ratio;
    j["regimes"].push_back(rj);
  }
  j["seeds"] = cfg.seeds;
  j["response_mode"] = response_mode_name(cfg.response_mode);
  j["target_backbone"] = backbone_name(cfg.target_backbone);
  j["target_hidden"] = cfg.target_hidden;
  j["target_train"] = {{"epochs", cfg.target_train.epochs},
                       {"lr", cfg.target_train.lr},
                       {"weight_decay", cfg.target_train.weight_decay},
                       {"dropout", cfg.target_train.dropout}};
  j["joint_budget"] = cfg.joint_budget;
  j["root_seed"] = cfg.root_seed;
  j["workers"] = cfg.workers;
  j["output_dir"] = cfg.output_dir;
  return j;
}

// Expand sweep entries into a flat defense list; the cartesian product of
// each entry's parameter lists, first declared parameter slowest.
inline std::vector<DefenseSpec> expand_sweeps(const std::vector<SweepEntry>& sweeps) {
  std::vector<DefenseSpec> out;
  for (const auto& e : sweeps) {
    std::size_t total = 1;
    for (const auto& [name, values] : e.params) total *= values.size();
    for (std::size_t i = 0; i < total; ++i) {
      DefenseSpec sp = e.base;
      std::size_t rem = i;
      for (auto it = e.params.rbegin(); it != e.params.rend(); ++it) {
        set_defense_param(sp, it->first, it->second[rem % it->second.size()]);
        rem /= it->second.size();
      }
      out.push_back(sp);
    }
  }
  return out;
}

// ---- prepared state, shared read-only by all workers ----

namespace harness_detail {

struct PreparedTarget {
  GnnModel model;
  std::vector<int> hard;
  double train_time_s = 0.0;
  std::string error;
};

struct PreparedDefense {
  DefendedModel dm;
  std::vector<int> hard;           // defended model predictions, full graph
  double on_target_verification = 0.0;
  double train_time_s = 0.0;
  bool is_training = false;
  std::string error;
};

struct PreparedDataset {
  std::string name;
  Graph graph;
  SplitSpec splits;
  GraphInputs gi;
  std::string error;
  std::vector<PreparedTarget> targets;                    // [seed index]
  std::vector<std::vector<RegimeView>> views;             // [regime][seed]
  std::vector<std::vector<std::uint32_t>> probes;         // [seed]
  std::vector<std::vector<PreparedDefense>> defended;     // [defense cfg][seed]
};

inline std::string regime_label(const Regime& r) {
  return std::string(regime_name(r.kind)) + "@" + fmt_g(r.x_ratio) + "," + fmt_g(r.a_ratio);
}

struct Cell {
  int di = 0;   // dataset
  int ai = -1;  // attack
  int ci = -1;  // defense config (-1 = undefended baseline)
  int bi = -1;  // budget
  int ri = 0;   // regime
  int si = 0;   // seed
};

}  // namespace harness_detail

// A fully expanded run plan: the defense list already includes sweep
// expansion, and `cells` is the record order.
struct RunPlan {
  ExperimentConfig cfg;
  std::vector<DefenseSpec> defenses;  // effective list for this track
  std::vector<harness_detail::Cell> cells;
};

inline RunPlan make_plan(ExperimentConfig cfg) {
  check_config(cfg);
  if (const char* env = std::getenv("BENCH_ROOT_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw std::invalid_argument("BENCH_ROOT_SEED is not an unsigned integer");
    cfg.root_seed = v;
  }
  RunPlan plan;
  plan.defenses = cfg.track == Track::Sweep ? expand_sweeps(cfg.sweeps) : cfg.defenses;
  using harness_detail::Cell;
  auto& cells = plan.cells;
  int nd = static_cast<int>(cfg.datasets.size());
  int na = static_cast<int>(cfg.attacks.size());
  int nc = static_cast<int>(plan.defenses.size());
  int nb = static_cast<int>(cfg.budgets.size());
  int nr = static_cast<int>(cfg.regimes.size());
  int ns = static_cast<int>(cfg.seeds.size());
  switch (cfg.track) {
    case Track::Extraction:
      for (int di = 0; di < nd; ++di)
        for (int ai = 0; ai < na; ++ai)
          for (int bi = 0; bi < nb; ++bi)
            for (int ri = 0; ri < nr; ++ri)
              for (int si = 0; si < ns; ++si) cells.push_back({di, ai, -1, bi, ri, si});
      break;
    case Track::Ownership:
    case Track::Sweep:
      for (int di = 0; di < nd; ++di)
        for (int ci = -1; ci < nc; ++ci)
          for (int si = 0; si < ns; ++si) cells.push_back({di, -1, ci, -1, 0, si});
      break;
    case Track::Joint:
      for (int di = 0; di < nd; ++di)
        for (int ci = 0; ci < nc; ++ci)
          for (int ai = 0; ai < na; ++ai)
            for (int ri = 0; ri < nr; ++ri)
              for (int si = 0; si < ns; ++si) cells.push_back({di, ai, ci, -1, ri, si});
      break;
  }
  plan.cfg = std::move(cfg);
  return plan;
}

inline std::size_t expected_record_count(const ExperimentConfig& cfg) {
  return make_plan(cfg).cells.size();
}

namespace harness_detail {

inline PreparedDataset prepare_dataset(const ExperimentConfig& cfg, const RunPlan& plan,
                                       const DatasetSpec& ds, const SeedTree& root) {
  PreparedDataset pd;
  pd.name = ds.name;
  try {
    SeedTree dtree = root.child("dataset/" + ds.name);
    if (ds.from_bundle()) {
      BundleLoadReport rep = load_graph_bundle(ds.bundle_dir);
      pd.graph = std::move(rep.graph);
      pd.splits = std::move(rep.splits);
    } else {
      pd.graph = generate_sbm(ds.sbm, dtree.rng("gen"));
      pd.splits = make_splits(pd.graph, ds.split_fractions, dtree.rng("splits"));
    }
    pd.gi = build_inputs(pd.graph.edges, pd.graph.num_nodes);
  } catch (const std::exception& e) {
    pd.error = e.what();
    return pd;
  }

  int ns = static_cast<int>(cfg.seeds.size());
  pd.targets.resize(ns);
  for (int si = 0; si < ns; ++si) {
    auto& t = pd.targets[si];
    try {
      SeedTree ttree = root.child("target/" + ds.name).child("seed", cfg.seeds[si]);
      t.model = init_model(cfg.target_backbone, pd.graph.feat_dim, cfg.target_hidden,
                           pd.graph.num_classes, ttree.child("init").seed());
      Supervision sup;
      sup.hard = &pd.graph.labels;
      auto t0 = std::chrono::steady_clock::now();
      train(t.model, pd.gi, pd.graph.features, sup, pd.splits.train, cfg.target_train,
            ttree.rng("train"));
      t.train_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      t.hard = predict(t.model, pd.gi, pd.graph.features).hard;
    } catch (const std::exception& e) {
      t.error = e.what();
    }
  }

  bool needs_views = cfg.track == Track::Extraction || cfg.track == Track::Joint;
  if (needs_views) {
    pd.views.resize(cfg.regimes.size());
    for (std::size_t ri = 0; ri < cfg.regimes.size(); ++ri) {
      pd.views[ri].reserve(ns);
      SeedTree rtree = root.child("regime/" + ds.name + "/" + regime_label(cfg.regimes[ri]));
      for (int si = 0; si < ns; ++si)
        pd.views[ri].push_back(
            apply_regime(pd.graph, cfg.regimes[ri], rtree.child("seed", cfg.seeds[si]).rng("mask")));
    }
  }

  bool needs_probes = cfg.track == Track::Ownership || cfg.track == Track::Sweep;
  if (needs_probes) {
    pd.probes.resize(ns);
    std::size_t count = std::min<std::size_t>(100, pd.splits.test.size());
    SeedTree ptree = root.child("probes/" + ds.name);
    for (int si = 0; si < ns; ++si) {
      Rng rng = ptree.child("seed", cfg.seeds[si]).rng("sample");
      auto picks = rng.sample_without_replacement(pd.splits.test.size(), count);
      auto& probes = pd.probes[si];
      probes.resize(picks.size());
      for (std::size_t i = 0; i < picks.size(); ++i) probes[i] = pd.splits.test[picks[i]];
      std::sort(probes.begin(), probes.end());
    }
  }

  if (cfg.track != Track::Extraction) {
    pd.defended.resize(plan.defenses.size());
    for (std::size_t ci = 0; ci < plan.defenses.size(); ++ci) {
      const DefenseSpec& sp = plan.defenses[ci];
      pd.defended[ci].resize(ns);
      if (!is_training_defense(sp.kind)) continue;  // wrapped per cell, nothing to train
      for (int si = 0; si < ns; ++si) {
        auto& d = pd.defended[ci][si];
        d.is_training = true;
        try {
          SeedTree dtree = root
                               .child("defense/" + ds.name + "/" +
                                      defense_kind_name(sp.kind) + "/" + std::to_string(ci))
                               .child("seed", cfg.seeds[si]);
          auto t0 = std::chrono::steady_clock::now();
          d.dm = train_defended(sp, pd.graph, pd.splits, dtree.child("train").seed(),
                                cfg.target_backbone, cfg.target_hidden);
          d.train_time_s =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          d.hard = predict(d.dm.model, pd.gi, pd.graph.features).hard;
          d.on_target_verification = verify_model(d.dm.artifact, d.dm.model, pd.graph).rate;
        } catch (const std::exception& e) {
          d.error = e.what();
        }
      }
    }
  }
  return pd;
}

// Attacks in this engine query each budget node at most once.
constexpr std::size_t kQueryMultiplicity = 1;

inline RunRecord run_cell(const ExperimentConfig& cfg, const RunPlan& plan,
                          const std::vector<PreparedDataset>& prep, const SeedTree& root,
                          const Cell& c) {
  auto t0 = std::chrono::steady_clock::now();
  const PreparedDataset& pd = prep[c.di];
  const DefenseSpec* dsp = c.ci >= 0 ? &plan.defenses[c.ci] : nullptr;
  const AttackSpec* asp = c.ai >= 0 ? &cfg.attacks[c.ai] : nullptr;
  std::uint64_t seed = cfg.seeds[c.si];

  RunRecord rec;
  rec.track = track_name(cfg.track);
  rec.dataset = pd.name;
  rec.attack = asp ? attack_kind_name(asp->kind) : "none";
  rec.defense = dsp ? defense_kind_name(dsp->kind) : "none";
  rec.seed = seed;
  rec.regime = regime_name(cfg.regimes[c.ri].kind);
  rec.x_ratio = cfg.regimes[c.ri].x_ratio;
  rec.a_ratio = cfg.regimes[c.ri].a_ratio;
  switch (cfg.track) {
    case Track::Extraction: rec.config_index = c.ai; break;
    case Track::Ownership:
    case Track::Sweep: rec.config_index = c.ci; break;
    case Track::Joint:
      rec.config_index = c.ai * static_cast<int>(plan.defenses.size()) + c.ci;
      break;
  }

  auto finish = [&](const char* err) {
    if (err) rec.error = err;
    rec.total_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  };

  try {
    if (!pd.error.empty()) return finish(pd.error.c_str());
    const PreparedTarget& tgt = pd.targets[c.si];
    if (!tgt.error.empty()) return finish(tgt.error.c_str());
    const auto& test = pd.splits.test;
    int C = pd.graph.num_classes;

    std::string cell_label = std::string(track_name(cfg.track)) + "/" + pd.name + "/" +
                             rec.attack + "/" + rec.defense + "/cfg" +
                             std::to_string(rec.config_index) + "/" +
                             regime_label(cfg.regimes[c.ri]) + "/s" + std::to_string(seed);
    SeedTree cell = root.child(cell_label);

    if (cfg.track == Track::Extraction || cfg.track == Track::Joint) {
      double mult = cfg.track == Track::Joint ? cfg.joint_budget : cfg.budgets[c.bi];
      rec.budget_multiplier = mult;

      const PreparedDefense* def = nullptr;
      if (dsp && is_training_defense(dsp->kind)) {
        def = &pd.defended[c.ci][c.si];
        if (!def->error.empty()) return finish(def->error.c_str());
      }
      const GnnModel& endpoint = def ? def->dm.model : tgt.model;
      const std::vector<int>& endpoint_hard = def ? def->hard : tgt.hard;
      rec.target_train_time_s = def ? def->train_time_s : tgt.train_time_s;

      BudgetSpec b = make_budget(pd.splits, mult, pd.graph.num_nodes);
      rec.realized_nodes = b.realized_nodes;
      rec.realized_node_fraction = b.realized_fraction;
      Rng brng = root.child("budget/" + pd.name + "/" + fmt_g(mult))
                     .child("seed", seed)
                     .rng("sample");
      auto nodes = sample_budget_nodes(pd.splits, b, brng);

      std::vector<std::unique_ptr<InferenceTransform>> chain;
      if (dsp && !is_training_defense(dsp->kind)) chain = make_chain({*dsp});
      QueryOracle oracle(endpoint, pd.graph, cfg.response_mode, std::move(chain),
                         b.realized_nodes, cell.child("noise").seed());

      auto res = run_attack(*asp, oracle, pd.views[c.ri][c.si], nodes,
                            cell.child("attack").seed());
      rec.queries_used = res.queries_used;
      rec.query_time_s = oracle.service_seconds();
      rec.surrogate_train_time_s = std::max(0.0, res.wall_time - rec.query_time_s);
      if (res.queries_used != oracle.queries_used())
        return finish("query accounting mismatch between attack and oracle");
      if (res.queries_used > b.realized_nodes * kQueryMultiplicity)
        return finish("budget accounting violation");

      Predictions pred = predict(res.surrogate, pd.gi, pd.graph.features);
      rec.accuracy = accuracy(pred.hard, pd.graph.labels, test);
      MacroScores ms = macro_scores(pred.hard, pd.graph.labels, test, C);
      rec.macro_f1 = ms.f1;
      rec.precision_macro = ms.precision;
      rec.recall_macro = ms.recall;
      rec.fidelity = fidelity(pred.hard, endpoint_hard, test);
      if (def) {
        rec.verification_rate = def->on_target_verification;
        rec.survival_rate = verify_model(def->dm.artifact, res.surrogate, pd.graph).rate;
      }
      return finish(nullptr);
    }

    // ownership / sweep
    rec.target_train_time_s = tgt.train_time_s;
    if (!dsp) {  // undefended baseline row
      rec.accuracy = accuracy(tgt.hard, pd.graph.labels, test);
      MacroScores ms = macro_scores(tgt.hard, pd.graph.labels, test, C);
      rec.macro_f1 = ms.f1;
      rec.precision_macro = ms.precision;
      rec.recall_macro = ms.recall;
      rec.fidelity = fidelity(tgt.hard, tgt.hard, test);
      return finish(nullptr);
    }

    if (is_training_defense(dsp->kind)) {
      const PreparedDefense& def = pd.defended[c.ci][c.si];
      if (!def.error.empty()) return finish(def.error.c_str());
      rec.target_train_time_s = def.train_time_s;
      rec.accuracy = accuracy(def.hard, pd.graph.labels, test);
      MacroScores ms = macro_scores(def.hard, pd.graph.labels, test, C);
      rec.macro_f1 = ms.f1;
      rec.precision_macro = ms.precision;
      rec.recall_macro = ms.recall;
      rec.fidelity = fidelity(def.hard, tgt.hard, test);
      rec.verification_rate = def.on_target_verification;
      return finish(nullptr);
    }

    // inference-time defense: measure what the wrapped endpoint serves on
    // the test split, then the marker proxy on the fixed probe set
    const auto& probes = pd.probes[c.si];
    QueryOracle oracle(tgt.model, pd.graph, cfg.response_mode, make_chain({*dsp}),
                       test.size() + probes.size(), cell.child("noise").seed());
    QueryResponse served = oracle.query(test);
    std::vector<int> served_full(pd.graph.num_nodes, -1);
    for (std::size_t i = 0; i < test.size(); ++i) served_full[test[i]] = served.labels[i];
    rec.accuracy = accuracy(served_full, pd.graph.labels, test);
    MacroScores ms = macro_scores(served_full, pd.graph.labels, test, C);
    rec.macro_f1 = ms.f1;
    rec.precision_macro = ms.precision;
    rec.recall_macro = ms.recall;
    rec.fidelity = fidelity(served_full, tgt.hard, test);
    rec.verification_rate = marker_accuracy(oracle, tgt.hard, probes).rate;
    rec.queries_used = oracle.queries_used();
    rec.realized_nodes = test.size() + probes.size();
    rec.realized_node_fraction =
        static_cast<double>(rec.realized_nodes) / static_cast<double>(pd.graph.num_nodes);
    rec.query_time_s = oracle.service_seconds();
    return finish(nullptr);
  } catch (const std::exception& e) {
    return finish(e.what());
  }
}

}  // namespace harness_detail

struct ExperimentResult {
  std::vector<RunRecord> records;
  std::uint64_t root_seed = 0;  // after any BENCH_ROOT_SEED override
};

// A plan plus all shared read-only state: loaded graphs, trained targets,
// regime views, probe sets, and trained defended models.
struct PreparedExperiment {
  RunPlan plan;
  std::vector<harness_detail::PreparedDataset> prep;
};

inline PreparedExperiment prepare_experiment(ExperimentConfig cfg) {
  PreparedExperiment pe;
  pe.plan = make_plan(std::move(cfg));
  SeedTree root(pe.plan.cfg.root_seed);
  pe.prep.reserve(pe.plan.cfg.datasets.size());
  for (const auto& ds : pe.plan.cfg.datasets)
    pe.prep.push_back(harness_detail::prepare_dataset(pe.plan.cfg, pe.plan, ds, root));
  return pe;
}

// Execute the cells of a prepared experiment on `workers` threads.
// Records land in grid order; if `sink` is non-null each record is streamed
// to it as soon as all earlier cells have finished.
inline ExperimentResult run_prepared(const PreparedExperiment& pe, std::ostream* sink = nullptr) {
  using harness_detail::Cell;
  const RunPlan& plan = pe.plan;
  const ExperimentConfig& cfg = plan.cfg;
  SeedTree root(cfg.root_seed);
  const auto& prep = pe.prep;

  ExperimentResult result;
  result.root_seed = cfg.root_seed;
  result.records.resize(plan.cells.size());
  std::vector<char> done(plan.cells.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::condition_variable cv;

  auto work = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= plan.cells.size()) break;
      RunRecord rec = harness_detail::run_cell(cfg, plan, prep, root, plan.cells[i]);
      {
        std::lock_guard<std::mutex> lk(mu);
        result.records[i] = std::move(rec);
        done[i] = 1;
      }
      cv.notify_one();
    }
  };

  int workers = std::min<int>(cfg.workers, static_cast<int>(std::max<std::size_t>(plan.cells.size(), 1)));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);

  std::size_t cursor = 0;
  while (cursor < plan.cells.size()) {
    std::unique_lock<std::mutex> lk(mu);
    cv.wait(lk, [&] { return done[cursor] != 0; });
    while (cursor < plan.cells.size() && done[cursor]) {
      if (sink) append_record(*sink, result.records[cursor]);
      ++cursor;
    }
  }
  for (auto& t : pool) t.join();
  return result;
}

inline ExperimentResult run_plan(const RunPlan& plan, std::ostream* sink = nullptr) {
  PreparedExperiment pe;
  pe.plan = plan;
  SeedTree root(plan.cfg.root_seed);
  pe.prep.reserve(plan.cfg.datasets.size());
  for (const auto& ds : plan.cfg.datasets)
    pe.prep.push_back(harness_detail::prepare_dataset(plan.cfg, plan, ds, root));
  return run_prepared(pe, sink);
}

// Full experiment entry point. With an output directory set, writes
// records.jsonl, the resolved config, and protocol.json (probe sets and
// seeding notes) into it.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  PreparedExperiment pe = prepare_experiment(cfg);
  namespace fs = std::filesystem;

  if (pe.plan.cfg.output_dir.empty()) return run_prepared(pe);

  fs::path dir(pe.plan.cfg.output_dir);
  fs::create_directories(dir);
  std::ofstream records_os(dir / "records.jsonl", std::ios::binary);
  if (!records_os) throw std::runtime_error("cannot write records in " + dir.string());
  ExperimentResult result = run_prepared(pe, &records_os);
  records_os.close();

  {
    std::ofstream os(dir / "config.json", std::ios::binary);
    os << config_to_json(pe.plan.cfg).dump(2) << '\n';
  }
  {
    // Record the verification probe sets: the protocol fixes them per
    // (dataset, seed) because no standard construction exists upstream.
    nlohmann::ordered_json pj;
    pj["root_seed"] = pe.plan.cfg.root_seed;
    pj["root_seed_source"] = std::getenv("BENCH_ROOT_SEED") ? "env" : "config";
    pj["note"] =
        "verification probe sets are fixed per (dataset, seed), sampled from the test split";
    pj["probe_sets"] = nlohmann::ordered_json::object();
    for (const auto& pd : pe.prep) {
      if (!pd.error.empty() || pd.probes.empty()) continue;
      nlohmann::ordered_json per_seed;
      for (std::size_t si = 0; si < pe.plan.cfg.seeds.size(); ++si)
        per_seed[std::to_string(pe.plan.cfg.seeds[si])] = pd.probes[si];
      pj["probe_sets"][pd.name] = per_seed;
    }
    std::ofstream os(dir / "protocol.json", std::ios::binary);
    os << pj.dump(2) << '\n';
  }
  return result;
}

}  // namespace graphbench
