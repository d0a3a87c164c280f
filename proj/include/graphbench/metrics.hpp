#pragma once

// Evaluation metrics and aggregation.
//
// fidelity      hard-label agreement between two prediction vectors on a mask
// accuracy      agreement with ground truth
// macro F1/precision/recall over all classes; a class with no predictions
//               and no instances in the mask contributes 0, not NaN
// utility drop  clean minus defended accuracy, percentage points
// sample efficiency  smallest budget whose median fidelity reaches 90% of
//               the best median across the curve
// aggregate     median / IQR / mean / std per group; percentiles use the
//               linear-interpolation convention (numpy default, type 7)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphbench {

inline double fidelity(const std::vector<int>& a, const std::vector<int>& b,
                       const std::vector<std::uint32_t>& mask) {
  if (mask.empty()) throw std::invalid_argument("fidelity: empty mask");
  std::size_t same = 0;
  for (auto i : mask)
    if (a[i] == b[i]) ++same;
  return static_cast<double>(same) / static_cast<double>(mask.size());
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                       const std::vector<std::uint32_t>& mask) {
  return fidelity(pred, truth, mask);
}

struct MacroScores {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

inline MacroScores macro_scores(const std::vector<int>& pred, const std::vector<int>& truth,
                                const std::vector<std::uint32_t>& mask, int num_classes) {
  if (mask.empty()) throw std::invalid_argument("macro_scores: empty mask");
  std::vector<long long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (auto i : mask) {
    int p = pred[i], t = truth[i];
    if (p == t)
      ++tp[p];
    else {
      ++fp[p];
      ++fn[t];
    }
  }
  MacroScores s;
  for (int c = 0; c < num_classes; ++c) {
    double prec = (tp[c] + fp[c]) > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
    double rec = (tp[c] + fn[c]) > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
    double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    s.precision += prec;
    s.recall += rec;
    s.f1 += f1;
  }
  s.precision /= num_classes;
  s.recall /= num_classes;
  s.f1 /= num_classes;
  return s;
}

inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                       const std::vector<std::uint32_t>& mask, int num_classes) {
  return macro_scores(pred, truth, mask, num_classes).f1;
}

// Percentage points; positive when the defense costs accuracy.
inline double utility_drop_pp(double clean_acc, double defended_acc) {
  return (clean_acc - defended_acc) * 100.0;
}

// Linear-interpolated percentile of a sorted sample (numpy default).
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile: empty sample");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("percentile: q out of [0,1]");
  double pos = q * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  double w = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

struct SummaryStats {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double median = 0.0;
  double iqr = 0.0;     // p75 - p25
};

inline SummaryStats summarize(std::vector<double> xs) {
  SummaryStats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.n));
  std::sort(xs.begin(), xs.end());
  s.median = percentile_sorted(xs, 0.5);
  s.iqr = percentile_sorted(xs, 0.75) - percentile_sorted(xs, 0.25);
  return s;
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median: empty sample");
  std::sort(xs.begin(), xs.end());
  return percentile_sorted(xs, 0.5);
}

// Budget curve point: a multiplier and the fidelity values observed there.
struct BudgetPoint {
  double multiplier = 0.0;
  std::vector<double> fidelities;
};

// Smallest budget multiplier whose median fidelity reaches `frac` (default
// 0.9) of the best median on the curve. Curve points are sorted by
// multiplier first.
inline double sample_efficiency(std::vector<BudgetPoint> curve, double frac = 0.9) {
  if (curve.empty()) throw std::invalid_argument("sample_efficiency: empty curve");
  std::sort(curve.begin(), curve.end(),
            [](const BudgetPoint& a, const BudgetPoint& b) { return a.multiplier < b.multiplier; });
  std::vector<double> med;
  double best = -1.0;
  for (const auto& p : curve) {
    med.push_back(median_of(p.fidelities));
    best = std::max(best, med.back());
  }
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (med[i] >= frac * best) return curve[i].multiplier;
  return curve.back().multiplier;  // unreachable: best itself qualifies
}

// Grouped aggregation. Keys are pre-rendered strings (the harness composes
// them from record fields); groups come out in key-sorted order so exports
// are deterministic. A warning row (n = 0) is emitted when the input is
// empty so downstream reports show the gap instead of silently omitting it.
struct AggregateRow {
  std::string key;
  SummaryStats stats;
  bool warning = false;
};

inline std::vector<AggregateRow> aggregate(const std::vector<std::pair<std::string, double>>& samples) {
  std::map<std::string, std::vector<double>> groups;
  for (const auto& [k, v] : samples) groups[k].push_back(v);
  std::vector<AggregateRow> rows;
  if (groups.empty()) {
    rows.push_back({"(no data)", {}, true});
    return rows;
  }
  for (auto& [k, vs] : groups) rows.push_back({k, summarize(std::move(vs)), false});
  return rows;
}

}  // namespace graphbench
