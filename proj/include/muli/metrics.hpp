/*
 * Copyright 2026 The muli Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Evaluation for heavily imbalanced detection.
//
// Everything derives from one threshold sweep. An entry is classified positive
// iff score > threshold; candidate thresholds are the midpoints between
// consecutive distinct sorted scores plus one sentinel below the minimum and
// one above the maximum. Tied scores share a single threshold, which makes
// every metric here reproducible by brute-force enumeration:
//
//   - balanced optimal accuracy: max over thresholds of (TPR + TNR) / 2, in %.
//   - AUPRC: average precision with tie groups contributing at their
//     collective position using group-end precision. Step interpolation, not
//     trapezoidal; trapezoids overestimate PR area.
//   - TPR@FPR: best TPR among sweep points with FPR <= cap, no interpolation.
//     At sub-0.1% caps interpolation would fabricate resolution the negatives
//     cannot support.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "muli/detail/bytes.hpp"
#include "muli/error.hpp"

namespace muli {

struct ScoreEntry {
  std::string prompt_id;
  double score = 0.0;
  int label = 0;
};

struct ScoreSeries {
  std::vector<ScoreEntry> entries;

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += (e.label == 1);
    return n;
  }
  std::size_t negatives() const { return entries.size() - positives(); }
};

struct SweepPoint {
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double tpr = 0.0, fpr = 0.0, precision = 1.0, recall = 0.0;
};

namespace detail {

inline void check_series(const ScoreSeries& s, bool need_both_classes) {
  if (s.entries.empty()) {
    throw DataError("empty score series");
  }
  for (const auto& e : s.entries) {
    if (!std::isfinite(e.score)) {
      throw DataError("non-finite score for id '" + e.prompt_id + "'");
    }
  }
  if (need_both_classes) {
    const auto pos = s.positives();
    if (pos == 0 || pos == s.entries.size()) {
      throw DataError("score series must contain both classes");
    }
  }
}

/// Candidate thresholds, descending: sentinel above max, midpoints between
/// consecutive distinct scores, sentinel below min. Midpoints are kept in
/// [lo, hi) so strict-> classification never drops the upper score.
inline std::vector<double> sweep_thresholds(std::vector<double> distinct_sorted) {
  auto& v = distinct_sorted;  // ascending, unique
  std::vector<double> thresholds;
  thresholds.reserve(v.size() + 1);
  double hi_sentinel = v.back() + 1.0;
  if (!(hi_sentinel > v.back())) {
    hi_sentinel = std::nextafter(v.back(), std::numeric_limits<double>::infinity());
  }
  thresholds.push_back(hi_sentinel);
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    double mid = v[i - 1] + (v[i] - v[i - 1]) / 2.0;
    if (!(mid < v[i])) mid = v[i - 1];  // adjacent doubles: lower value still excluded by >
    thresholds.push_back(mid);
  }
  double lo_sentinel = v.front() - 1.0;
  if (!(lo_sentinel < v.front())) {
    lo_sentinel = std::nextafter(v.front(), -std::numeric_limits<double>::infinity());
  }
  thresholds.push_back(lo_sentinel);
  return thresholds;
}

}  // namespace detail

/// Threshold sweep over a two-class series, points ordered by descending
/// threshold (so TPR and FPR are non-decreasing along the list).
inline std::vector<SweepPoint> sweep(const ScoreSeries& s) {
  detail::check_series(s, /*need_both_classes=*/true);

  std::vector<double> scores;
  scores.reserve(s.entries.size());
  for (const auto& e : s.entries) scores.push_back(e.score);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  // Positive/negative counts per distinct score, ascending.
  std::vector<std::size_t> pos_at(scores.size(), 0), neg_at(scores.size(), 0);
  for (const auto& e : s.entries) {
    const auto idx = static_cast<std::size_t>(
        std::lower_bound(scores.begin(), scores.end(), e.score) - scores.begin());
    (e.label == 1 ? pos_at : neg_at)[idx]++;
  }

  const std::size_t total_pos = s.positives();
  const std::size_t total_neg = s.negatives();
  auto thresholds = detail::sweep_thresholds(scores);

  std::vector<SweepPoint> points;
  points.reserve(thresholds.size());
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    if (k > 0) {
      // Dropping the threshold below distinct score i admits that tie group.
      const std::size_t i = scores.size() - k;
      tp += pos_at[i];
      fp += neg_at[i];
    }
    SweepPoint p;
    p.threshold = thresholds[k];
    p.tp = tp;
    p.fp = fp;
    p.fn = total_pos - tp;
    p.tn = total_neg - fp;
    p.tpr = static_cast<double>(p.tp) / static_cast<double>(total_pos);
    p.fpr = static_cast<double>(p.fp) / static_cast<double>(total_neg);
    p.recall = p.tpr;
    p.precision = (p.tp + p.fp) == 0
                      ? 1.0
                      : static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
    points.push_back(p);
  }
  return points;
}

/// Max over thresholds of (TPR + TNR) / 2, as a percentage.
inline double balanced_optimal_accuracy(const ScoreSeries& s) {
  double best = 0.0;
  for (const auto& p : sweep(s)) {
    const double tnr = static_cast<double>(p.tn) / static_cast<double>(p.tn + p.fp);
    best = std::max(best, (p.tpr + tnr) / 2.0);
  }
  return best * 100.0;
}

/// Average precision. Ties are grouped: each group of equal scores enters as a
/// block and contributes (delta recall) * (precision after the block). The sum
/// is accumulated in extended precision so small-count series come out at the
/// correctly rounded double.
inline double auprc(const ScoreSeries& s) {
  detail::check_series(s, /*need_both_classes=*/false);
  const std::size_t total_pos = s.positives();
  if (total_pos == 0) {
    throw DataError("auprc needs at least one positive");
  }

  std::vector<const ScoreEntry*> order;
  order.reserve(s.entries.size());
  for (const auto& e : s.entries) order.push_back(&e);
  std::sort(order.begin(), order.end(),
            [](const ScoreEntry* a, const ScoreEntry* b) { return a->score > b->score; });

  long double ap = 0.0L;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t group_tp = 0;
    while (j < order.size() && order[j]->score == order[i]->score) {
      group_tp += (order[j]->label == 1);
      ++j;
    }
    const std::size_t group_size = j - i;
    tp += group_tp;
    fp += group_size - group_tp;
    if (group_tp > 0) {
      const long double precision =
          static_cast<long double>(tp) / static_cast<long double>(tp + fp);
      ap += precision * static_cast<long double>(group_tp);
    }
    i = j;
  }
  return static_cast<double>(ap / static_cast<long double>(total_pos));
}

struct TprAtFpr {
  double tpr = 0.0;
  double threshold = 0.0;
  double achieved_fpr = 0.0;
};

/// Best TPR subject to FPR <= cap, no interpolation. Among equally good points
/// the highest threshold (lowest FPR) wins, which is the safe calibration pick.
inline TprAtFpr tpr_at_fpr(const ScoreSeries& s, double fpr_cap) {
  if (!(fpr_cap >= 0.0 && fpr_cap < 1.0)) {
    throw DataError("fpr_cap must lie in [0,1)");
  }
  TprAtFpr best;
  bool found = false;
  for (const auto& p : sweep(s)) {
    if (p.fpr <= fpr_cap && (!found || p.tpr > best.tpr)) {
      best = {p.tpr, p.threshold, p.fpr};
      found = true;
    }
  }
  // The sentinel above the max score always satisfies any cap, so `found` holds.
  return best;
}

struct CalibratedThreshold {
  double threshold = 0.0;
  double fpr_cap = 0.0;
  double achieved_fpr = 0.0;
  double achieved_tpr = 0.0;
  bool quantized_to_zero = false;  // fewer negatives than 1/cap: cap means 0 false positives
};

/// Thresholds for a set of named FPR-cap profiles, from the same sweep rule.
inline std::map<std::string, CalibratedThreshold> calibrate_thresholds(
    const ScoreSeries& s, const std::map<std::string, double>& profiles) {
  std::map<std::string, CalibratedThreshold> out;
  const double n_neg = static_cast<double>(s.negatives());
  for (const auto& [name, cap] : profiles) {
    auto r = tpr_at_fpr(s, cap);
    CalibratedThreshold c;
    c.threshold = r.threshold;
    c.fpr_cap = cap;
    c.achieved_fpr = r.achieved_fpr;
    c.achieved_tpr = r.tpr;
    c.quantized_to_zero = cap > 0.0 && n_neg < 1.0 / cap;
    out.emplace(name, c);
  }
  return out;
}

inline std::map<std::string, double> default_fpr_profiles() {
  return {{"fpr_10pct", 0.10},
          {"fpr_1pct", 0.01},
          {"fpr_0.1pct", 0.001},
          {"fpr_0.01pct", 0.0001}};
}

/// Sweep points as CSV, one row per point, exported in ascending-FPR order
/// (descending threshold). Doubles are written in shortest round-trip form.
inline std::string curve_csv(const std::vector<SweepPoint>& points) {
  std::string out = "threshold,fpr,tpr,precision,recall\n";
  for (const auto& p : points) {
    out += detail::format_double(p.threshold);
    out += ',';
    out += detail::format_double(p.fpr);
    out += ',';
    out += detail::format_double(p.tpr);
    out += ',';
    out += detail::format_double(p.precision);
    out += ',';
    out += detail::format_double(p.recall);
    out += '\n';
  }
  return out;
}

inline void export_curves(const ScoreSeries& s, const std::string& path) {
  detail::atomic_write_file(path, curve_csv(sweep(s)));
}

struct MisclassifiedReport {
  // Negatives ranked by descending score, positives by ascending score.
  std::vector<ScoreEntry> top_negatives;
  std::vector<ScoreEntry> top_positives;
  double threshold = 0.0;
};

/// The k most suspicious negatives and the k most missed positives. Ranking,
/// not filtering: entries are listed even when the threshold classifies them
/// correctly. k larger than a class returns the whole class.
inline MisclassifiedReport top_misclassified(const ScoreSeries& s, double threshold,
                                             std::size_t k) {
  MisclassifiedReport rep;
  rep.threshold = threshold;
  for (const auto& e : s.entries) {
    (e.label == 1 ? rep.top_positives : rep.top_negatives).push_back(e);
  }
  std::stable_sort(rep.top_negatives.begin(), rep.top_negatives.end(),
                   [](const ScoreEntry& a, const ScoreEntry& b) { return a.score > b.score; });
  std::stable_sort(rep.top_positives.begin(), rep.top_positives.end(),
                   [](const ScoreEntry& a, const ScoreEntry& b) { return a.score < b.score; });
  if (rep.top_negatives.size() > k) rep.top_negatives.resize(k);
  if (rep.top_positives.size() > k) rep.top_positives.resize(k);
  return rep;
}

}  // namespace muli
