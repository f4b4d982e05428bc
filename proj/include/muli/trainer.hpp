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

// Sparse logistic regression head over transformed first-token logits:
//
//   score(x) = w . f(l(x)) + b
//
// trained by seeded mini-batch SGD on mean binary cross-entropy plus a
// regularization term: lambda*||w||_1 (subgradient, sign(0)=0), lambda*||w||_2^2,
// or none. Weights and bias start at zero; the objective is convex, so the
// start only affects the path. Exact sparsity comes from pruning at save time.
// Training is single-threaded and bit-deterministic for a given seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muli/detail/bytes.hpp"
#include "muli/detail/rng.hpp"
#include "muli/error.hpp"
#include "muli/transform.hpp"

namespace muli {

enum class Regularizer { l1, l2, none };

inline const char* to_string(Regularizer r) {
  switch (r) {
    case Regularizer::l1: return "l1";
    case Regularizer::l2: return "l2";
    case Regularizer::none: return "none";
  }
  return "?";
}

inline Regularizer regularizer_from_string(const std::string& s) {
  if (s == "l1") return Regularizer::l1;
  if (s == "l2") return Regularizer::l2;
  if (s == "none") return Regularizer::none;
  throw DataError("unknown regularizer: '" + s + "'");
}

/// Training hyperparameters. The defaults are the reference llama-2-7b recipe.
struct TrainConfig {
  double lambda = 1e-3;
  Regularizer regularizer = Regularizer::l1;
  std::uint32_t epochs = 500;
  double learning_rate = 5e-4;
  std::uint32_t batch_size = 128;
  std::uint64_t seed = 0;
  bool track_epoch_loss = false;
};

struct TrainingMeta {
  std::string dataset;
  TrainConfig config;
  double final_loss = 0.0;
  std::string calibration;  // which data the thresholds came from
};

/// The deployable detector: sparse weights, bias, the fitted feature transform
/// and calibrated thresholds per FPR profile. Immutable once built.
struct DetectorModel {
  std::vector<std::uint32_t> weight_indices;  // strictly increasing, < vocab_size
  std::vector<double> weight_values;
  double bias = 0.0;
  TransformSpec transform;
  std::uint32_t vocab_size = 0;
  std::string backend_fingerprint;
  std::map<std::string, double> thresholds;
  TrainingMeta training_meta;

  std::vector<double> dense_weights() const {
    std::vector<double> w(vocab_size, 0.0);
    for (std::size_t i = 0; i < weight_indices.size(); ++i) {
      w[weight_indices[i]] = weight_values[i];
    }
    return w;
  }
};

inline constexpr double kPruneEps = 1e-8;
inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Stable BCE(sigmoid(z), y) = max(z,0) - y*z + log(1 + exp(-|z|)).
inline double bce_with_logit(double z, double y) {
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double reg_value(Regularizer reg, double lambda, std::span<const double> w) {
  switch (reg) {
    case Regularizer::l1: {
      double s = 0.0;
      for (double v : w) s += std::abs(v);
      return lambda * s;
    }
    case Regularizer::l2: {
      double s = 0.0;
      for (double v : w) s += v * v;
      return lambda * s;
    }
    case Regularizer::none:
      return 0.0;
  }
  return 0.0;
}

inline double reg_grad(Regularizer reg, double lambda, double w) {
  switch (reg) {
    case Regularizer::l1: return lambda * sign0(w);
    case Regularizer::l2: return 2.0 * lambda * w;
    case Regularizer::none: return 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// Full-dataset objective: mean BCE over all rows plus the regularization
/// term. This is the quantity recorded as final_loss and the one the analytic
/// gradient below differentiates.
inline double full_loss(const FeatureMatrix& x, std::span<const int> labels,
                        std::span<const double> w, double b, const TrainConfig& cfg) {
  double sum = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    double z = b;
    for (std::size_t c = 0; c < x.cols; ++c) z += w[c] * row[c];
    sum += detail::bce_with_logit(z, static_cast<double>(labels[r]));
  }
  return sum / static_cast<double>(x.rows) + detail::reg_value(cfg.regularizer, cfg.lambda, w);
}

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad_w;
  double grad_b = 0.0;
};

/// Analytic gradient of full_loss at (w, b). For l1 the subgradient uses
/// sign(0) = 0.
inline LossGradient loss_and_gradient(const FeatureMatrix& x, std::span<const int> labels,
                                      std::span<const double> w, double b,
                                      const TrainConfig& cfg) {
  LossGradient out;
  out.grad_w.assign(x.cols, 0.0);
  double loss_sum = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    double z = b;
    for (std::size_t c = 0; c < x.cols; ++c) z += w[c] * row[c];
    const double y = static_cast<double>(labels[r]);
    loss_sum += detail::bce_with_logit(z, y);
    const double err = detail::sigmoid(z) - y;
    for (std::size_t c = 0; c < x.cols; ++c) out.grad_w[c] += err * row[c];
    out.grad_b += err;
  }
  const double inv_n = 1.0 / static_cast<double>(x.rows);
  out.loss = loss_sum * inv_n + detail::reg_value(cfg.regularizer, cfg.lambda, w);
  for (std::size_t c = 0; c < x.cols; ++c) {
    out.grad_w[c] = out.grad_w[c] * inv_n + detail::reg_grad(cfg.regularizer, cfg.lambda, w[c]);
  }
  out.grad_b *= inv_n;
  return out;
}

struct FitResult {
  std::vector<double> weights;  // dense, x.cols entries
  double bias = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;  // filled when cfg.track_epoch_loss
};

/// Mini-batch SGD fit. Rows are reshuffled every epoch with the seeded
/// generator; each step uses mean BCE over the batch plus the regularizer.
/// Deterministic: identical data and config give bit-identical results.
inline FitResult fit_slr(const FeatureMatrix& x, std::span<const int> labels,
                         const TrainConfig& cfg) {
  if (x.rows == 0 || x.rows != labels.size()) {
    throw DataError("feature/label row mismatch");
  }
  bool has_pos = false, has_neg = false;
  for (int y : labels) (y == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    throw DataError("training needs at least one example of each class");
  }
  for (double v : x.data) {
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) ||
      cfg.lambda < 0.0) {
    throw DataError("invalid training config");
  }

  FitResult res;
  res.weights.assign(x.cols, 0.0);
  res.bias = 0.0;
  std::vector<double>& w = res.weights;

  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(cfg.seed);
  std::vector<double> grad(x.cols);

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    muli::detail::deterministic_shuffle(order, gen);
    for (std::size_t start = 0; start < x.rows; start += cfg.batch_size) {
      const std::size_t stop = std::min(x.rows, start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double grad_b = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const double* row = x.row(order[k]);
        double z = res.bias;
        for (std::size_t c = 0; c < x.cols; ++c) z += w[c] * row[c];
        const double err = detail::sigmoid(z) - static_cast<double>(labels[order[k]]);
        for (std::size_t c = 0; c < x.cols; ++c) grad[c] += err * row[c];
        grad_b += err;
      }
      for (std::size_t c = 0; c < x.cols; ++c) {
        const double g = grad[c] * inv_b + detail::reg_grad(cfg.regularizer, cfg.lambda, w[c]);
        w[c] -= cfg.learning_rate * g;
      }
      res.bias -= cfg.learning_rate * grad_b * inv_b;
    }
    if (cfg.track_epoch_loss) {
      res.epoch_losses.push_back(full_loss(x, labels, w, res.bias, cfg));
    }
  }

  res.final_loss = full_loss(x, labels, w, res.bias, cfg);
  if (!std::isfinite(res.final_loss)) {
    throw DataError("training diverged: non-finite loss (lr " +
                    muli::detail::format_double(cfg.learning_rate) + ", lambda " +
                    muli::detail::format_double(cfg.lambda) + ")");
  }
  return res;
}

/// Assemble a detector from a fit. Weights below prune_eps in magnitude are
/// dropped; they are far below anything that moves a score at feature scale.
inline DetectorModel make_detector(const FitResult& fit, TransformSpec transform,
                                   std::uint32_t vocab_size, std::string fingerprint,
                                   TrainingMeta meta, double prune_eps = kPruneEps) {
  DetectorModel m;
  m.transform = std::move(transform);
  m.vocab_size = vocab_size;
  m.backend_fingerprint = std::move(fingerprint);
  m.bias = fit.bias;
  m.training_meta = std::move(meta);
  m.training_meta.final_loss = fit.final_loss;
  for (std::size_t i = 0; i < fit.weights.size(); ++i) {
    if (std::abs(fit.weights[i]) >= prune_eps) {
      m.weight_indices.push_back(static_cast<std::uint32_t>(i));
      m.weight_values.push_back(fit.weights[i]);
    }
  }
  return m;
}

/// Score one raw logit vector: w . f(l) + b under the model's transform.
inline double slr_score(const DetectorModel& m, std::span<const float> logits) {
  if (logits.size() != m.vocab_size) {
    throw DataError("logit vector length " + std::to_string(logits.size()) +
                    " does not match model vocab_size " + std::to_string(m.vocab_size));
  }
  auto f = apply_transform(m.transform, logits);
  double z = m.bias;
  for (std::size_t i = 0; i < m.weight_indices.size(); ++i) {
    z += m.weight_values[i] * f[m.weight_indices[i]];
  }
  return z;
}

inline double slr_score(const DetectorModel& m, std::span<const double> logits) {
  std::vector<float> narrow(logits.begin(), logits.end());
  return slr_score(m, std::span<const float>(narrow));
}

/// Rank of each requested token's weight within the full dense weight vector:
/// rank(w) = |{v in W : v > w}| / |W|. Pruned entries count as zero.
inline std::map<std::uint32_t, double> weight_ranks(const DetectorModel& m,
                                                    std::span<const std::uint32_t> token_ids) {
  for (auto t : token_ids) {
    if (t >= m.vocab_size) {
      throw DataError("token id " + std::to_string(t) + " out of range [0, " +
                      std::to_string(m.vocab_size) + ")");
    }
  }
  auto dense = m.dense_weights();
  std::vector<double> sorted = dense;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::map<std::uint32_t, double> out;
  for (auto t : token_ids) {
    const auto greater = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), dense[t]);
    out[t] = static_cast<double>(greater) / n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file: JSON, format_version 1
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const DetectorModel& m) {
  nlohmann::json transform{{"kind", to_string(m.transform.kind)},
                           {"clamp_eps", m.transform.clamp_eps}};
  if (m.transform.norm) {
    transform["mean"] = m.transform.norm->mean;
    transform["std"] = m.transform.norm->std;
    transform["std_floor"] = m.transform.norm->std_floor;
  }
  nlohmann::json meta{{"dataset", m.training_meta.dataset},
                      {"final_loss", m.training_meta.final_loss},
                      {"calibration", m.training_meta.calibration},
                      {"config",
                       {{"lambda", m.training_meta.config.lambda},
                        {"regularizer", to_string(m.training_meta.config.regularizer)},
                        {"epochs", m.training_meta.config.epochs},
                        {"learning_rate", m.training_meta.config.learning_rate},
                        {"batch_size", m.training_meta.config.batch_size},
                        {"seed", m.training_meta.config.seed}}}};
  return nlohmann::json{{"format_version", kModelFormatVersion},
                        {"transform", transform},
                        {"vocab_size", m.vocab_size},
                        {"backend_fingerprint", m.backend_fingerprint},
                        {"weights", {{"indices", m.weight_indices}, {"values", m.weight_values}}},
                        {"bias", m.bias},
                        {"thresholds", m.thresholds},
                        {"training_meta", meta}};
}

inline DetectorModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
    throw ParseError("model file missing format_version");
  }
  if (j["format_version"].get<std::uint32_t>() != kModelFormatVersion) {
    throw ParseError("unsupported model format_version " +
                     std::to_string(j["format_version"].get<std::uint32_t>()) + " (expected " +
                     std::to_string(kModelFormatVersion) + ")");
  }
  DetectorModel m;
  const auto& t = j.at("transform");
  m.transform.kind = transform_kind_from_string(t.at("kind").get<std::string>());
  m.transform.clamp_eps = t.at("clamp_eps").get<double>();
  if (t.contains("mean")) {
    NormStats norm;
    norm.mean = t.at("mean").get<std::vector<double>>();
    norm.std = t.at("std").get<std::vector<double>>();
    norm.std_floor = t.value("std_floor", 1e-6);
    if (norm.mean.size() != norm.std.size()) {
      throw ParseError("model norm mean/std length mismatch");
    }
    m.transform.norm = std::move(norm);
  }
  m.vocab_size = j.at("vocab_size").get<std::uint32_t>();
  m.backend_fingerprint = j.at("backend_fingerprint").get<std::string>();
  m.weight_indices = j.at("weights").at("indices").get<std::vector<std::uint32_t>>();
  m.weight_values = j.at("weights").at("values").get<std::vector<double>>();
  if (m.weight_indices.size() != m.weight_values.size()) {
    throw ParseError("model weight indices/values length mismatch");
  }
  for (std::size_t i = 0; i < m.weight_indices.size(); ++i) {
    if (m.weight_indices[i] >= m.vocab_size ||
        (i > 0 && m.weight_indices[i] <= m.weight_indices[i - 1])) {
      throw ParseError("model weight indices must be strictly increasing and in range");
    }
  }
  m.bias = j.at("bias").get<double>();
  if (j.contains("thresholds")) {
    for (const auto& [name, v] : j.at("thresholds").items()) {
      const double thr = v.get<double>();
      if (!std::isfinite(thr)) throw ParseError("non-finite threshold for profile " + name);
      m.thresholds[name] = thr;
    }
  }
  if (j.contains("training_meta")) {
    const auto& meta = j["training_meta"];
    m.training_meta.dataset = meta.value("dataset", std::string{});
    m.training_meta.final_loss = meta.value("final_loss", 0.0);
    m.training_meta.calibration = meta.value("calibration", std::string{});
    if (meta.contains("config")) {
      const auto& c = meta["config"];
      m.training_meta.config.lambda = c.value("lambda", 1e-3);
      m.training_meta.config.regularizer =
          regularizer_from_string(c.value("regularizer", std::string{"l1"}));
      m.training_meta.config.epochs = c.value("epochs", 500u);
      m.training_meta.config.learning_rate = c.value("learning_rate", 5e-4);
      m.training_meta.config.batch_size = c.value("batch_size", 128u);
      m.training_meta.config.seed = c.value("seed", std::uint64_t{0});
    }
  }
  return m;
}

inline void save_model(const DetectorModel& m, const std::string& path) {
  DetectorModel pruned = m;
  pruned.weight_indices.clear();
  pruned.weight_values.clear();
  for (std::size_t i = 0; i < m.weight_indices.size(); ++i) {
    if (std::abs(m.weight_values[i]) >= kPruneEps) {
      pruned.weight_indices.push_back(m.weight_indices[i]);
      pruned.weight_values.push_back(m.weight_values[i]);
    }
  }
  detail::atomic_write_file(path, to_json(pruned).dump(2) + "\n");
}

inline DetectorModel load_model(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

/// Stable short identifier for a model: digest of its serialized form.
inline std::string model_id(const DetectorModel& m) {
  return detail::sha256_hex(to_json(m).dump()).substr(0, 16);
}

}  // namespace muli
