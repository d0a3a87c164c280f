// End-to-end walkthrough of the library: train a small GCN on a synthetic
// community graph, steal it through a black-box query interface at two
// budgets, then watermark the target two different ways and check which
// watermark survives inside the stolen copy.
//
// Everything here is deterministic; rerunning prints identical numbers.

#include <cstdio>

#include "graphbench/attacks.hpp"
#include "graphbench/defenses.hpp"
#include "graphbench/metrics.hpp"
#include "graphbench/nn.hpp"
#include "graphbench/oracle.hpp"
#include "graphbench/regime.hpp"
#include "graphbench/sbm.hpp"
#include "graphbench/splits.hpp"

using namespace graphbench;

namespace {

SurrogateResult steal(const GnnModel& endpoint, const Graph& g, const RegimeView& view,
                      const SplitSpec& splits, double mult, const SeedTree& root,
                      const char* label) {
  AttackSpec atk;
  atk.kind = AttackKind::MEA0;

  BudgetSpec budget = make_budget(splits, mult, g.num_nodes);
  SeedTree st = root.child(std::string("steal/") + label);
  Rng brng = st.rng("budget");
  auto nodes = sample_budget_nodes(splits, budget, brng);

  QueryOracle oracle(endpoint, g, ResponseMode::SoftProbs, {}, budget.realized_nodes,
                     st.child("noise").seed());
  return run_attack(atk, oracle, view, nodes, st.child("attack").seed());
}

}  // namespace

int main() {
  SeedTree root(0);

  // A three-community graph: dense inside communities, sparse across.
  SbmParams params;
  params.num_nodes = 300;
  params.num_classes = 3;
  params.p_in = 0.06;
  params.p_out = 0.005;
  params.feat_dim = 16;
  params.feat_signal = 1.0;
  Graph g = generate_sbm(params, root.child("data").rng("gen"));
  SplitSpec splits = make_splits(g, SplitFractions{}, root.child("data").rng("splits"));
  Rng vrng = root.child("data").rng("view");
  RegimeView view = apply_regime(g, Regime::both(), vrng);
  std::printf("graph: %d nodes, %zu edges, homophily %.3f, splits %zu/%zu/%zu/%zu\n",
              g.num_nodes, g.edges.size(), edge_homophily(g), splits.train.size(),
              splits.val.size(), splits.test.size(), splits.query.size());

  // ---- 1. the victim: a plain two-layer GCN ----
  GraphInputs gi = build_inputs(g.edges, g.num_nodes);
  GnnModel target = init_model(Backbone::GCN, g.feat_dim, 16, g.num_classes,
                               root.child("target/init").seed());
  Supervision sup;
  sup.hard = &g.labels;
  train(target, gi, g.features, sup, splits.train, TrainConfig{}, root.child("target").rng("train"));
  std::vector<int> target_hard = predict(target, gi, g.features).hard;
  std::printf("target GCN test accuracy: %.3f\n\n", accuracy(target_hard, g.labels, splits.test));

  // ---- 2. steal it at a starved and a full query budget ----
  for (double mult : {0.25, 1.0}) {
    char label[32];
    std::snprintf(label, sizeof label, "plain-%.2f", mult);
    SurrogateResult res = steal(target, g, view, splits, mult, root, label);
    std::vector<int> pred = predict(res.surrogate, gi, g.features).hard;
    std::printf("MEA0 at %.2fx budget: %zu queries, fidelity %.3f, accuracy %.3f\n", mult,
                res.queries_used, fidelity(pred, target_hard, splits.test),
                accuracy(pred, g.labels, splits.test));
  }

  // ---- 3. watermark the target, then steal the watermarked model ----
  std::printf("\n");
  for (DefenseKind kind : {DefenseKind::BackdoorWM, DefenseKind::Integrity}) {
    DefenseSpec d = default_defense(kind);
    DefendedModel dm = train_defended(d, g, splits,
                                      root.child(std::string("defend/") + defense_kind_name(kind))
                                          .child("train")
                                          .seed());
    std::vector<int> dm_hard = predict(dm.model, gi, g.features).hard;
    double on_target = verify_model(dm.artifact, dm.model, g).rate;

    SurrogateResult res = steal(dm.model, g, view, splits, 1.0, root, defense_kind_name(kind));
    std::vector<int> pred = predict(res.surrogate, gi, g.features).hard;
    double survival = verify_model(dm.artifact, res.surrogate, g).rate;
    std::printf(
        "%s: utility %.3f, on-target verification %.3f | stolen copy fidelity %.3f, "
        "watermark survival %.3f\n",
        defense_kind_name(kind), accuracy(dm_hard, g.labels, splits.test), on_target,
        fidelity(pred, dm_hard, splits.test), survival);
  }

  // ---- 4. starve the attacker of information instead: hard labels only ----
  {
    AttackSpec atk;
    atk.kind = AttackKind::MEA0;
    BudgetSpec budget = make_budget(splits, 1.0, g.num_nodes);
    SeedTree st = root.child("steal/hard-label");
    Rng brng = st.rng("budget");
    auto nodes = sample_budget_nodes(splits, budget, brng);
    QueryOracle oracle(target, g, ResponseMode::HardLabel, {}, budget.realized_nodes,
                       st.child("noise").seed());
    SurrogateResult res = run_attack(atk, oracle, view, nodes, st.child("attack").seed());
    std::vector<int> pred = predict(res.surrogate, gi, g.features).hard;
    std::printf("\nsame attack against a hard-label endpoint: fidelity %.3f\n",
                fidelity(pred, target_hard, splits.test));
  }
  return 0;
}
