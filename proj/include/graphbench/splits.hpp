#pragma once

// Train / val / test / query node splits. The four sets are disjoint; test
// drives metric evaluation, query is the pool the black-box endpoint serves.
// Splitting is stratified per class with largest-remainder rounding; the
// remainder tie-break rotates with the class index so balanced classes fill
// every split to its exact global size instead of always favouring train.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "graphbench/graph.hpp"
#include "graphbench/rng.hpp"

namespace graphbench {

struct SplitFractions {
  double train = 0.25;
  double val = 0.25;
  double test = 0.25;
  double query = 0.25;
};

struct SplitSpec {
  std::vector<std::uint32_t> train, val, test, query;  // each sorted ascending
  bool stratified = true;  // false = fell back to unstratified (tiny class)

  const std::vector<std::uint32_t>& part(int i) const {
    switch (i) {
      case 0: return train;
      case 1: return val;
      case 2: return test;
      default: return query;
    }
  }
};

namespace detail {

// Split `count` slots over 4 parts proportionally to `frac`, floor first,
// then hand out the remainder by largest fractional part. Exact remainder
// ties are broken by `rotation`, which the caller advances class by class so
// extras spread over all parts instead of always landing on train/val.
// Returns the allocation and the number of extras it handed out.
inline std::pair<std::array<int, 4>, int> largest_remainder(int count,
                                                            const std::array<double, 4>& frac,
                                                            int rotation) {
  std::array<int, 4> alloc{};
  std::array<double, 4> rem{};
  int used = 0;
  double fsum = 0.0;
  for (double f : frac) fsum += f;
  int total = static_cast<int>(std::floor(count * fsum + 1e-9));
  for (int i = 0; i < 4; ++i) {
    double want = count * frac[i];
    alloc[i] = static_cast<int>(std::floor(want + 1e-9));
    rem[i] = want - alloc[i];
    used += alloc[i];
  }
  // Candidate parts in rotated order, stable-sorted by remainder.
  std::array<int, 4> order{};
  for (int i = 0; i < 4; ++i) order[i] = (i + rotation) % 4;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  int extras = 0;
  for (int i = 0; used < total && i < 4; ++i) {
    int part = order[i];
    if (rem[part] > 1e-12) {
      ++alloc[part];
      ++used;
      ++extras;
    }
  }
  return {alloc, extras};
}

}  // namespace detail

// Stratified split. Falls back to unstratified (flagged) when some class has
// fewer nodes than there are split slots. Fractions may sum to less than 1;
// leftover nodes stay unassigned. Test and query must come out non-empty.
inline SplitSpec make_splits(const Graph& g, const SplitFractions& f, Rng rng) {
  for (double x : {f.train, f.val, f.test, f.query})
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("splits: fraction out of [0,1]");
  if (f.train + f.val + f.test + f.query > 1.0 + 1e-9)
    throw std::invalid_argument("splits: fractions sum above 1");

  SplitSpec out;
  std::array<double, 4> frac{f.train, f.val, f.test, f.query};

  std::vector<std::vector<std::uint32_t>> by_class(g.num_classes);
  for (int i = 0; i < g.num_nodes; ++i) by_class[g.labels[i]].push_back(static_cast<std::uint32_t>(i));

  bool tiny_class = false;
  for (const auto& c : by_class)
    if (static_cast<int>(c.size()) < 4) tiny_class = true;

  auto push = [&out](int part, const std::vector<std::uint32_t>& pool, int from, int n) {
    std::vector<std::uint32_t>* dst[4] = {&out.train, &out.val, &out.test, &out.query};
    for (int i = 0; i < n; ++i) dst[part]->push_back(pool[from + i]);
  };

  if (tiny_class) {
    out.stratified = false;
    std::vector<std::uint32_t> pool(g.num_nodes);
    for (int i = 0; i < g.num_nodes; ++i) pool[i] = static_cast<std::uint32_t>(i);
    rng.shuffle(pool);
    auto [alloc, extras] = detail::largest_remainder(g.num_nodes, frac, 0);
    (void)extras;
    int from = 0;
    for (int part = 0; part < 4; ++part) {
      push(part, pool, from, alloc[part]);
      from += alloc[part];
    }
  } else {
    int rotation = 0;
    for (int c = 0; c < g.num_classes; ++c) {
      auto pool = by_class[c];
      rng.shuffle(pool);
      auto [alloc, extras] = detail::largest_remainder(static_cast<int>(pool.size()), frac, rotation);
      rotation = (rotation + extras) % 4;
      int from = 0;
      for (int part = 0; part < 4; ++part) {
        push(part, pool, from, alloc[part]);
        from += alloc[part];
      }
    }
  }

  for (auto* v : {&out.train, &out.val, &out.test, &out.query}) std::sort(v->begin(), v->end());
  if (out.test.empty() || out.query.empty())
    throw std::invalid_argument("splits: test and query splits must be non-empty");
  return out;
}

}  // namespace graphbench
