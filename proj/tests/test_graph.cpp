// Graph container, generators, splits, regimes and bundle round-trip.

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "graphbench/bundle.hpp"
#include "graphbench/graph.hpp"
#include "graphbench/regime.hpp"
#include "graphbench/rng.hpp"
#include "graphbench/sbm.hpp"
#include "graphbench/splits.hpp"

using namespace graphbench;

namespace {

Graph tiny_graph(int n, std::vector<Edge> edges, std::vector<int> labels, int classes, int d = 2) {
  Graph g;
  g.num_nodes = n;
  g.feat_dim = d;
  g.num_classes = classes;
  g.name = "tiny";
  auto norm = normalize_edges(std::move(edges));
  g.edges = norm.edges;
  g.features = Matrix(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) g.features.at(i, j) = 0.1 * i + 0.01 * j;
  g.labels = std::move(labels);
  return g;
}

// Brute-force homophily straight from the definition, for cross-checking.
double homophily_brute(const Graph& g) {
  if (g.edges.empty()) return 0.0;
  int same = 0;
  for (const auto& e : g.edges)
    if (g.labels[e.first] == g.labels[e.second]) ++same;
  return double(same) / double(g.edges.size());
}

}  // namespace

TEST_CASE("rng streams are deterministic and label-separated") {
  SeedTree root(42);
  Rng a = root.rng("alpha");
  Rng b = root.rng("alpha");
  Rng c = root.rng("beta");
  std::uint64_t a1 = a.next_u64();
  REQUIRE(a1 == b.next_u64());
  REQUIRE(a1 != c.next_u64());
  REQUIRE(root.child("x").child("y").seed() == root.child("x").child("y").seed());

  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
  Rng n(8);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) mean += n.normal();
  mean /= 10000.0;
  REQUIRE(std::abs(mean) < 0.05);
}

TEST_CASE("edge normalization drops self loops and duplicates with counts") {
  auto rep = normalize_edges({{1, 0}, {0, 1}, {2, 2}, {1, 2}});
  REQUIRE(rep.edges == std::vector<Edge>{{0, 1}, {1, 2}});
  REQUIRE(rep.dropped_self_loops == 1);
  REQUIRE(rep.dropped_duplicates == 1);
}

TEST_CASE("edge homophily matches hand-enumerated cases") {
  // Path 0-1-2-3 with labels [0,0,1,1]: edges (0,1) and (2,3) match, (1,2)
  // does not, so 2 of 3.
  auto path = tiny_graph(4, {{0, 1}, {1, 2}, {2, 3}}, {0, 0, 1, 1}, 2);
  REQUIRE(edge_homophily(path) == Catch::Approx(2.0 / 3.0).epsilon(1e-12));

  auto uniform = tiny_graph(3, {{0, 1}, {1, 2}}, {0, 0, 0}, 1);
  REQUIRE(edge_homophily(uniform) == 1.0);

  auto empty = tiny_graph(3, {}, {0, 1, 0}, 2);
  REQUIRE(edge_homophily(empty) == 0.0);
}

TEST_CASE("structural stats hand counts") {
  // Star with 5 leaves: avg degree 2*5/6.
  auto star = tiny_graph(6, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}}, {0, 0, 0, 0, 0, 0}, 1);
  auto st = structural_stats(star);
  REQUIRE(st.avg_degree == Catch::Approx(10.0 / 6.0).epsilon(1e-12));
  REQUIRE(st.degree_histogram[5] == 1);
  REQUIRE(st.degree_histogram[1] == 5);

  auto k4 = tiny_graph(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}, {0, 0, 0, 0}, 1);
  auto ks = structural_stats(k4);
  REQUIRE(ks.density == Catch::Approx(1.0));
  REQUIRE(ks.avg_degree == Catch::Approx(3.0));

  auto empty = tiny_graph(5, {}, {0, 0, 0, 0, 0}, 1);
  auto es = structural_stats(empty);
  REQUIRE(es.avg_degree == 0.0);
  REQUIRE(es.density == 0.0);
}

TEST_CASE("homophily equals brute force on random graphs up to 50 nodes") {
  SeedTree root(91);
  for (int trial = 0; trial < 100; ++trial) {
    SbmParams p;
    p.num_nodes = 10 + trial % 41;  // 10..50
    p.num_classes = 2 + trial % 3;
    p.p_in = 0.25;
    p.p_out = 0.15;
    p.feat_dim = 3;
    auto g = generate_sbm(p, root.rng("sbm/" + std::to_string(trial)));
    REQUIRE(edge_homophily(g) == homophily_brute(g));
  }
}

TEST_CASE("normalized adjacency closed forms") {
  // Empty edge set: identity.
  auto id3 = normalized_adjacency({}, 3);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(id3.rows[i].size() == 1);
    REQUIRE(id3.rows[i][0].first == static_cast<std::uint32_t>(i));
    REQUIRE(id3.rows[i][0].second == Catch::Approx(1.0));
  }
  // Single edge on two nodes: all entries 0.5.
  auto s = normalized_adjacency({{0, 1}}, 2);
  for (int i = 0; i < 2; ++i) {
    REQUIRE(s.rows[i].size() == 2);
    for (auto [j, w] : s.rows[i]) REQUIRE(w == Catch::Approx(0.5));
  }
  // Symmetry on a random small graph.
  SbmParams p;
  p.num_nodes = 20;
  p.num_classes = 2;
  p.p_in = 0.3;
  p.p_out = 0.2;
  p.feat_dim = 2;
  auto g = generate_sbm(p, Rng(5));
  auto a = normalized_adjacency(g.edges, g.num_nodes);
  auto at = transpose(a);
  for (int i = 0; i < a.n; ++i) REQUIRE(a.rows[i] == at.rows[i]);

  // Row-normalised operator rows sum to 1, and transpose round-trips.
  auto m = row_normalized_closed({{0, 1}, {1, 2}}, 3);
  for (int i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (auto [j, w] : m.rows[i]) sum += w;
    REQUIRE(sum == Catch::Approx(1.0));
  }
  auto mtt = transpose(transpose(m));
  for (int i = 0; i < 3; ++i) REQUIRE(mtt.rows[i] == m.rows[i]);
}

TEST_CASE("sbm: homophily responds to p_in/p_out and generation is deterministic") {
  SeedTree root(7);
  SbmParams p;
  p.num_nodes = 2000;
  p.num_classes = 2;
  p.feat_dim = 4;

  // Equal probabilities, 2 balanced classes: homophily within 0.05 of 0.5.
  p.p_in = 0.01;
  p.p_out = 0.01;
  auto g_flat = generate_sbm(p, root.rng("flat"));
  REQUIRE(std::abs(edge_homophily(g_flat) - 0.5) < 0.05);

  // p_out = 0 forces homophily exactly 1.
  p.p_in = 0.02;
  p.p_out = 0.0;
  auto g_pure = generate_sbm(p, root.rng("pure"));
  REQUIRE(g_pure.edges.size() > 0);
  REQUIRE(edge_homophily(g_pure) == 1.0);

  auto again = generate_sbm(p, root.rng("pure"));
  REQUIRE(again.edges == g_pure.edges);
  REQUIRE(again.features.a == g_pure.features.a);
  REQUIRE(again.labels == g_pure.labels);

  REQUIRE_THROWS_AS(generate_sbm({2, 3, 0.1, 0.1, 2, 1.0, "bad"}, Rng(0)), std::invalid_argument);
  SbmParams bad;
  bad.p_in = 1.5;
  REQUIRE_THROWS_AS(generate_sbm(bad, Rng(0)), std::invalid_argument);
}

TEST_CASE("splits: exact sizes, stratification, determinism") {
  SeedTree root(13);

  // 100 nodes, 4 balanced classes, quarter fractions: exactly 25 each.
  SbmParams p;
  p.num_nodes = 100;
  p.num_classes = 4;
  p.p_in = 0.1;
  p.p_out = 0.05;
  p.feat_dim = 2;
  auto g = generate_sbm(p, root.rng("g"));
  auto s = make_splits(g, SplitFractions{}, root.rng("s"));
  REQUIRE(s.train.size() == 25);
  REQUIRE(s.val.size() == 25);
  REQUIRE(s.test.size() == 25);
  REQUIRE(s.query.size() == 25);
  REQUIRE(s.stratified);

  // Disjoint.
  std::set<std::uint32_t> all;
  for (int part = 0; part < 4; ++part)
    for (auto id : s.part(part)) REQUIRE(all.insert(id).second);
  REQUIRE(all.size() == 100);

  // Deterministic in seed.
  auto s2 = make_splits(g, SplitFractions{}, root.rng("s"));
  REQUIRE(s2.train == s.train);
  REQUIRE(s2.query == s.query);

  // 10 classes x 10 nodes: every split holds 2 or 3 nodes of each class.
  SbmParams p10;
  p10.num_nodes = 100;
  p10.num_classes = 10;
  p10.p_in = 0.2;
  p10.p_out = 0.05;
  p10.feat_dim = 2;
  auto g10 = generate_sbm(p10, root.rng("g10"));
  auto s10 = make_splits(g10, SplitFractions{}, root.rng("s10"));
  for (int part = 0; part < 4; ++part) {
    std::vector<int> per_class(10, 0);
    for (auto id : s10.part(part)) ++per_class[g10.labels[id]];
    for (int c = 0; c < 10; ++c) {
      REQUIRE(per_class[c] >= 2);
      REQUIRE(per_class[c] <= 3);
    }
  }

  // A class smaller than the 4 split slots triggers the unstratified fallback.
  Graph tiny = tiny_graph(9, {}, {0, 0, 0, 0, 0, 0, 1, 1, 1}, 2);
  auto st = make_splits(tiny, SplitFractions{}, root.rng("tiny"));
  REQUIRE_FALSE(st.stratified);

  SplitFractions badf;
  badf.train = 0.9;
  badf.val = 0.9;
  REQUIRE_THROWS_AS(make_splits(g, badf, root.rng("bad")), std::invalid_argument);
}

TEST_CASE("apply_regime masks rows and edges per the declared ratios") {
  SeedTree root(29);
  SbmParams p;
  p.num_nodes = 10;
  p.num_classes = 2;
  p.p_in = 0.5;
  p.p_out = 0.3;
  p.feat_dim = 3;
  auto g = generate_sbm(p, root.rng("g"));

  // both: view equals the graph.
  auto vb = apply_regime(g, Regime::both(), root.rng("both"));
  REQUIRE(vb.visible_features.a == g.features.a);
  REQUIRE(vb.visible_edges == g.edges);
  for (auto f : vb.row_flags) REQUIRE(f == Provenance::Real);

  // Re-applying both to a view is the identity.
  auto vb2 = apply_regime(vb, Regime::both());
  REQUIRE(vb2.visible_features.a == vb.visible_features.a);
  REQUIRE(vb2.visible_edges == vb.visible_edges);
  REQUIRE(vb2.row_flags == vb.row_flags);

  // x_ratio=0.5 on 10 rows: exactly 5 real-flagged rows, others zeroed.
  Regime half{RegimeKind::XOnly, 0.5, 0.0};
  auto vh = apply_regime(g, half, root.rng("half"));
  int real_rows = 0;
  for (int i = 0; i < 10; ++i) {
    if (vh.row_flags[i] == Provenance::Real) {
      ++real_rows;
    } else {
      for (int j = 0; j < 3; ++j) REQUIRE(vh.visible_features.at(i, j) == 0.0);
    }
  }
  REQUIRE(real_rows == 5);
  REQUIRE(vh.visible_edges.empty());

  // data_free: nothing real.
  auto vd = apply_regime(g, Regime::data_free(), root.rng("df"));
  REQUIRE(vd.visible_edges.empty());
  for (auto f : vd.row_flags) REQUIRE(f != Provenance::Real);
  for (double x : vd.visible_features.a) REQUIRE(x == 0.0);

  // a_only keeps the declared fraction of edges, all flagged real.
  Regime aonly{RegimeKind::AOnly, 0.0, 0.5};
  auto va = apply_regime(g, aonly, root.rng("a"));
  REQUIRE(va.visible_edges.size() == g.edges.size() / 2);
  for (const auto& e : va.visible_edges) {
    REQUIRE(std::binary_search(g.edges.begin(), g.edges.end(), e));
  }

  // Deterministic in seed.
  auto vh2 = apply_regime(g, half, root.rng("half"));
  REQUIRE(vh2.row_flags == vh.row_flags);
}

TEST_CASE("bundle round-trip and loader diagnostics") {
  namespace fs = std::filesystem;
  SeedTree root(37);
  fs::path dir = fs::temp_directory_path() / "gb_bundle_test";
  fs::remove_all(dir);

  // Path graph with 4 nodes: direct read-back.
  auto g = tiny_graph(4, {{0, 1}, {1, 2}, {2, 3}}, {0, 0, 1, 1}, 2, 3);
  g.name = "path4";
  SplitFractions f;
  auto s = make_splits(g, f, root.rng("s"));
  write_graph_bundle(dir, g, s);

  auto rep = load_graph_bundle(dir);
  REQUIRE(rep.graph.num_nodes == 4);
  REQUIRE(rep.graph.edges.size() == 3);
  REQUIRE(rep.graph.name == "path4");
  REQUIRE(rep.graph.features.a == g.features.a);
  REQUIRE(rep.graph.labels == g.labels);
  REQUIRE(rep.splits.train == s.train);
  REQUIRE(rep.splits.query == s.query);
  REQUIRE(rep.dropped_self_loops == 0);
  REQUIRE(rep.dropped_duplicates == 0);

  // Out-of-range edge is reported with file and line.
  {
    std::ofstream out(dir / "edges.tsv");
    out << "0\t1\n5\t1\n";
  }
  try {
    load_graph_bundle(dir);
    FAIL("expected loader error");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("edges.tsv:2") != std::string::npos);
  }

  // Duplicate and self-loop edges are dropped with counts.
  {
    std::ofstream out(dir / "edges.tsv");
    out << "0\t1\n1\t0\n2\t2\n1\t2\n";
  }
  auto rep2 = load_graph_bundle(dir);
  REQUIRE(rep2.graph.edges.size() == 2);
  REQUIRE(rep2.dropped_self_loops == 1);
  REQUIRE(rep2.dropped_duplicates == 1);

  fs::remove_all(dir);
}
