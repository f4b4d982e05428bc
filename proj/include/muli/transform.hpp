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

// Feature maps applied to first-token logit vectors before the linear head.
//
// The preferred map computes per-token log-odds of the softmax probability and
// standardizes each dimension with mean/std frozen from the training set:
//
//   f_star(l) = (log(softmax(l)) - log(1 - softmax(l)) - mean) / std
//
// Ablation variants keep the raw logits, the softmax probabilities, or the
// log-probabilities. All maps are total on finite input: probabilities are
// clamped away from {0,1} before the log-odds, and stds are floored.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muli/error.hpp"

namespace muli {

enum class TransformKind { f_star, logit, prob, logprob };

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::f_star: return "f_star";
    case TransformKind::logit: return "logit";
    case TransformKind::prob: return "prob";
    case TransformKind::logprob: return "logprob";
  }
  return "?";
}

inline TransformKind transform_kind_from_string(const std::string& s) {
  if (s == "f_star") return TransformKind::f_star;
  if (s == "logit") return TransformKind::logit;
  if (s == "prob") return TransformKind::prob;
  if (s == "logprob") return TransformKind::logprob;
  throw DataError("unknown transform kind: '" + s + "'");
}

/// Per-dimension standardization statistics, fitted once on training features
/// and frozen. Stds are floored so constant dimensions stay finite.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  double std_floor = 1e-6;
};

struct TransformSpec {
  TransformKind kind = TransformKind::f_star;
  std::optional<NormStats> norm;  // required for f_star once fitted
  double clamp_eps = 1e-12;
};

/// Dense row-major matrix of transformed features (rows = prompts).
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }
};

/// Numerically stable softmax (max-shifted). Entries are positive and sum to 1.
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) {
    throw DataError("softmax of empty vector");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

/// Stable log-softmax: l - max - log(sum exp(l - max)).
inline std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) {
    throw DataError("log_softmax of empty vector");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// log(p') - log(1 - p') with p' clamped to [eps, 1-eps]. The complement is
/// taken through log1p, which stays accurate for small p.
inline double log_odds_scalar(double p, double clamp_eps) {
  const double c = std::clamp(p, clamp_eps, 1.0 - clamp_eps);
  return std::log(c) - std::log1p(-c);
}

inline std::vector<double> log_odds(std::span<const double> probs, double clamp_eps = 1e-12) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = log_odds_scalar(probs[i], clamp_eps);
  }
  return out;
}

/// Per-dimension mean and population standard deviation over the rows of a
/// feature matrix, with the std floored. Needs at least two rows.
inline NormStats fit_norm(const FeatureMatrix& features, double std_floor = 1e-6) {
  if (features.rows < 2) {
    throw DataError("fit_norm needs at least 2 rows, got " + std::to_string(features.rows));
  }
  NormStats stats;
  stats.std_floor = std_floor;
  stats.mean.assign(features.cols, 0.0);
  stats.std.assign(features.cols, 0.0);
  for (std::size_t r = 0; r < features.rows; ++r) {
    const double* row = features.row(r);
    for (std::size_t c = 0; c < features.cols; ++c) stats.mean[c] += row[c];
  }
  const double inv_n = 1.0 / static_cast<double>(features.rows);
  for (auto& m : stats.mean) m *= inv_n;
  for (std::size_t r = 0; r < features.rows; ++r) {
    const double* row = features.row(r);
    for (std::size_t c = 0; c < features.cols; ++c) {
      const double d = row[c] - stats.mean[c];
      stats.std[c] += d * d;
    }
  }
  for (auto& s : stats.std) s = std::max(std::sqrt(s * inv_n), std_floor);
  return stats;
}

namespace detail {

inline std::vector<double> widen(std::span<const float> l) {
  return std::vector<double>(l.begin(), l.end());
}

}  // namespace detail

/// Unnormalized f_star core: log-odds of the softmax probabilities.
inline std::vector<double> softmax_log_odds(std::span<const double> logits, double clamp_eps) {
  auto p = softmax(logits);
  return log_odds(p, clamp_eps);
}

/// Apply the configured feature map to one logit vector. f_star requires
/// fitted normalization stats whose dimension matches the input.
inline std::vector<double> apply_transform(const TransformSpec& spec,
                                           std::span<const double> logits) {
  switch (spec.kind) {
    case TransformKind::logit:
      return std::vector<double>(logits.begin(), logits.end());
    case TransformKind::prob:
      return softmax(logits);
    case TransformKind::logprob:
      return log_softmax(logits);
    case TransformKind::f_star: {
      if (!spec.norm) {
        throw DataError("f_star transform applied before fitting normalization");
      }
      if (spec.norm->mean.size() != logits.size()) {
        throw DataError("transform dimension mismatch: norm has " +
                        std::to_string(spec.norm->mean.size()) + " dims, input has " +
                        std::to_string(logits.size()));
      }
      auto out = softmax_log_odds(logits, spec.clamp_eps);
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (out[i] - spec.norm->mean[i]) / spec.norm->std[i];
      }
      return out;
    }
  }
  throw DataError("unreachable transform kind");
}

inline std::vector<double> apply_transform(const TransformSpec& spec,
                                           std::span<const float> logits) {
  auto wide = detail::widen(logits);
  return apply_transform(spec, std::span<const double>(wide));
}

/// Transform every row of a raw logit matrix. For f_star the spec must already
/// be fitted; use fit_transform to fit and transform in one pass.
template <typename RowAccess>
FeatureMatrix transform_rows(const TransformSpec& spec, std::size_t rows, std::size_t cols,
                             RowAccess&& row_at) {
  FeatureMatrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto f = apply_transform(spec, row_at(r));
    std::copy(f.begin(), f.end(), out.row(r));
  }
  return out;
}

/// Fit a TransformSpec of the given kind on training rows and return the spec
/// together with the transformed training features. For f_star the unnormalized
/// log-odds features are computed first, normalization is fitted on them, and
/// the returned features are standardized.
template <typename RowAccess>
std::pair<TransformSpec, FeatureMatrix> fit_transform(TransformKind kind, std::size_t rows,
                                                      std::size_t cols, RowAccess&& row_at,
                                                      double clamp_eps = 1e-12) {
  TransformSpec spec;
  spec.kind = kind;
  spec.clamp_eps = clamp_eps;
  if (kind != TransformKind::f_star) {
    return {spec, transform_rows(spec, rows, cols, row_at)};
  }
  FeatureMatrix raw(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = row_at(r);
    std::vector<double> wide(row.begin(), row.end());
    auto lo = softmax_log_odds(std::span<const double>(wide), clamp_eps);
    std::copy(lo.begin(), lo.end(), raw.row(r));
  }
  spec.norm = fit_norm(raw);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = raw.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = (row[c] - spec.norm->mean[c]) / spec.norm->std[c];
    }
  }
  return {spec, std::move(raw)};
}

}  // namespace muli
