// Command-line front end for the benchmark harness.
//
//   bench run     --config cfg.json --out results/ [--track t] [--seeds 0,1,2] [--workers N]
//   bench sweep   --config cfg.json [--out results/]
//   bench report  --in results/ --kind {leaderboard|curves|survival} --out table.csv
//   bench gen-sbm --out bundle/ [--nodes N --classes C --p-in --p-out ...]
//
// BENCH_ROOT_SEED in the environment overrides the configured root seed.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "graphbench/harness.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    std::string tok = csv.substr(pos, comma - pos);
    if (tok.empty()) throw std::invalid_argument("empty entry in seed list '" + csv + "'");
    std::size_t used = 0;
    std::uint64_t v = std::stoull(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad seed '" + tok + "'");
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

int report_outcome(const graphbench::ExperimentResult& result, const std::string& out_dir) {
  std::size_t errors = 0;
  for (const auto& r : result.records)
    if (r.error.has_value()) ++errors;
  std::printf("wrote %zu records (%zu with errors) to %s/records.jsonl (root seed %llu)\n",
              result.records.size(), errors, out_dir.c_str(),
              static_cast<unsigned long long>(result.root_seed));
  if (errors) {
    for (const auto& r : result.records)
      if (r.error.has_value())
        std::fprintf(stderr, "  error: %s/%s/%s seed=%llu: %s\n", r.dataset.c_str(),
                     r.attack.c_str(), r.defense.c_str(),
                     static_cast<unsigned long long>(r.seed), r.error->c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph model extraction / watermarking benchmark"};
  app.require_subcommand(1);

  // ---- run ----
  std::string run_config, run_track, run_out, run_seeds;
  int run_workers = 0;
  auto* run = app.add_subcommand("run", "execute a benchmark grid from a config file");
  run->add_option("--config", run_config, "JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--track", run_track, "override the track: extraction|ownership|joint");
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--seeds", run_seeds, "comma-separated seed list override");
  run->add_option("--workers", run_workers, "worker thread override")->check(CLI::PositiveNumber);

  // ---- sweep ----
  std::string sweep_config, sweep_out, sweep_seeds;
  int sweep_workers = 0;
  auto* sweep = app.add_subcommand("sweep", "run the defense hyperparameter sweep track");
  sweep->add_option("--config", sweep_config, "JSON experiment config with a sweeps section")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_out, "output directory (default: output_dir from the config)");
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seed list override");
  sweep->add_option("--workers", sweep_workers, "worker thread override")
      ->check(CLI::PositiveNumber);

  // ---- report ----
  std::string rep_in, rep_kind, rep_out;
  auto* rep = app.add_subcommand("report", "summarize a results directory into a CSV table");
  rep->add_option("--in", rep_in, "results directory containing records.jsonl")
      ->required()
      ->check(CLI::ExistingDirectory);
  rep->add_option("--kind", rep_kind, "table kind")
      ->required()
      ->check(CLI::IsMember({"leaderboard", "curves", "survival"}));
  rep->add_option("--out", rep_out, "output CSV path")->required();

  // ---- gen-sbm ----
  std::string gen_out, gen_name = "sbm";
  graphbench::SbmParams gp;
  double f_train = 0.25, f_val = 0.25, f_test = 0.25, f_query = 0.25;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-sbm", "emit a stochastic block model graph bundle");
  gen->add_option("--out", gen_out, "bundle directory to create")->required();
  gen->add_option("--name", gen_name, "dataset name stored in the bundle");
  gen->add_option("--nodes", gp.num_nodes, "node count");
  gen->add_option("--classes", gp.num_classes, "class count");
  gen->add_option("--p-in", gp.p_in, "intra-class edge probability");
  gen->add_option("--p-out", gp.p_out, "inter-class edge probability");
  gen->add_option("--feat-dim", gp.feat_dim, "feature dimension");
  gen->add_option("--feat-signal", gp.feat_signal, "class-mean feature offset");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--train-frac", f_train, "train split fraction");
  gen->add_option("--val-frac", f_val, "validation split fraction");
  gen->add_option("--test-frac", f_test, "test split fraction");
  gen->add_option("--query-frac", f_query, "query pool fraction");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      graphbench::ExperimentConfig cfg = graphbench::load_config(run_config);
      if (!run_track.empty()) cfg.track = graphbench::parse_track(run_track);
      if (!run_seeds.empty()) cfg.seeds = parse_seed_list(run_seeds);
      if (run_workers > 0) cfg.workers = run_workers;
      cfg.output_dir = run_out;
      return report_outcome(graphbench::run_experiment(cfg), run_out);
    }
    if (*sweep) {
      graphbench::ExperimentConfig cfg = graphbench::load_config(sweep_config);
      cfg.track = graphbench::Track::Sweep;
      if (!sweep_seeds.empty()) cfg.seeds = parse_seed_list(sweep_seeds);
      if (sweep_workers > 0) cfg.workers = sweep_workers;
      if (!sweep_out.empty()) cfg.output_dir = sweep_out;
      if (cfg.output_dir.empty())
        throw std::invalid_argument("sweep needs --out or an output_dir in the config");
      return report_outcome(graphbench::run_experiment(cfg), cfg.output_dir);
    }
    if (*rep) {
      auto records = graphbench::read_jsonl(rep_in + "/records.jsonl");
      std::string table = graphbench::report(records, rep_kind);
      std::ofstream os(rep_out);
      if (!os) throw std::runtime_error("cannot open " + rep_out + " for writing");
      os << table;
      std::printf("wrote %s (%zu source records)\n", rep_out.c_str(), records.size());
      return 0;
    }
    if (*gen) {
      gp.name = gen_name;
      graphbench::SeedTree root(gen_seed);
      auto ds = root.child("dataset/" + gen_name);
      graphbench::Graph g = graphbench::generate_sbm(gp, ds.rng("gen"));
      graphbench::SplitFractions fr{f_train, f_val, f_test, f_query};
      graphbench::SplitSpec splits = graphbench::make_splits(g, fr, ds.rng("splits"));
      graphbench::write_graph_bundle(gen_out, g, splits);
      std::printf("wrote bundle %s: %d nodes, %zu edges, %d classes, homophily %.3f\n",
                  gen_out.c_str(), g.num_nodes, g.edges.size(), g.num_classes,
                  graphbench::edge_homophily(g));
      std::printf("splits: train %zu / val %zu / test %zu / query %zu\n", splits.train.size(),
                  splits.val.size(), splits.test.size(), splits.query.size());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bench: %s\n", e.what());
    return 1;
  }
  return 0;
}
