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

// Toy detectors that motivate the logit-head approach:
//
//   PoR  - probability of refusal, estimated as the fraction of k sampled
//          responses that start with a refusal keyword. Accurate but needs k
//          generations per prompt.
//   PoRT - mass on designated refusal tokens in the first-token distribution,
//          either summed probabilities or summed raw logits. One forward pass.
//
// compare_detectors reproduces the agreement analysis between two detectors
// under per-detector median thresholds.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "muli/detail/bytes.hpp"
#include "muli/error.hpp"
#include "muli/metrics.hpp"
#include "muli/transform.hpp"

namespace muli {

/// Response prefixes that signal refusal. Keywords must be prefix-free after
/// case folding so a response can never match two of them ambiguously.
struct RefusalLexicon {
  std::vector<std::string> keywords;
  bool case_sensitive = false;
};

namespace detail {

inline std::string fold_case(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

inline void validate_lexicon(const RefusalLexicon& lex) {
  if (lex.keywords.empty()) {
    throw DataError("refusal lexicon must not be empty");
  }
  std::vector<std::string> folded;
  for (const auto& k : lex.keywords) {
    if (k.empty()) throw DataError("refusal lexicon contains an empty keyword");
    folded.push_back(lex.case_sensitive ? k : detail::fold_case(k));
  }
  for (std::size_t i = 0; i < folded.size(); ++i) {
    for (std::size_t j = 0; j < folded.size(); ++j) {
      if (i != j && folded[j].starts_with(folded[i])) {
        throw DataError("refusal lexicon keyword '" + lex.keywords[i] + "' is a prefix of '" +
                        lex.keywords[j] + "'");
      }
    }
  }
}

/// A reasonable default keyword list; deployments should curate their own for
/// the target model. Loadable from file via load_lexicon.
inline RefusalLexicon default_refusal_lexicon() {
  return RefusalLexicon{{"I'm sorry", "Sorry", "I am sorry", "I apologize", "As an AI",
                         "I cannot", "I can't", "I'm not able", "I am not able",
                         "It is not appropriate", "Unable"},
                        false};
}

/// Lexicon file: one keyword per line, UTF-8, '#' starts a comment.
inline RefusalLexicon load_lexicon(const std::string& path, bool case_sensitive = false) {
  RefusalLexicon lex;
  lex.case_sensitive = case_sensitive;
  std::istringstream in(detail::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
      line.pop_back();
    }
    std::size_t start = 0;
    while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) {
      ++start;
    }
    line.erase(0, start);
    if (!line.empty()) lex.keywords.push_back(line);
  }
  validate_lexicon(lex);
  return lex;
}

/// True iff the response, after stripping leading whitespace, begins with one
/// of the lexicon keywords under the configured case rule.
inline bool is_refusal(std::string_view response, const RefusalLexicon& lex) {
  std::size_t start = 0;
  while (start < response.size() &&
         std::isspace(static_cast<unsigned char>(response[start]))) {
    ++start;
  }
  const std::string_view body = response.substr(start);
  for (const auto& k : lex.keywords) {
    if (k.size() > body.size()) continue;
    if (lex.case_sensitive) {
      if (body.substr(0, k.size()) == k) return true;
    } else {
      bool match = true;
      for (std::size_t i = 0; i < k.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(body[i])) !=
            std::tolower(static_cast<unsigned char>(k[i]))) {
          match = false;
          break;
        }
      }
      if (match) return true;
    }
  }
  return false;
}

/// Point estimate of the probability of refusal: refusals / k.
inline double estimate_por(std::span<const std::string> responses, const RefusalLexicon& lex) {
  if (responses.empty()) {
    throw DataError("estimate_por needs at least one response");
  }
  std::size_t refusals = 0;
  for (const auto& r : responses) refusals += is_refusal(r, lex);
  return static_cast<double>(refusals) / static_cast<double>(responses.size());
}

/// Designated refusal-indicating token ids with display strings. Ids are
/// tokenizer-specific and must be rebuilt per backend.
struct RefusalTokenSet {
  std::set<std::uint32_t> token_ids;
  std::map<std::uint32_t, std::string> labels;
};

enum class PortBasis { prob, logit };

inline PortBasis port_basis_from_string(const std::string& s) {
  if (s == "prob") return PortBasis::prob;
  if (s == "logit") return PortBasis::logit;
  throw DataError("unknown port basis: '" + s + "'");
}

/// First-token distribution as captured from a backend: either the full logit
/// vector or a partial map of top logprobs with a fill value for the rest.
struct FirstTokenDistribution {
  enum class Basis { full_logits, partial_logprobs };
  Basis basis = Basis::full_logits;
  std::vector<float> logits;                                  // full basis
  std::vector<std::pair<std::uint32_t, double>> logprobs;     // partial basis
  std::optional<double> fill_value;                           // partial basis
};

/// Total first-token mass on the refusal tokens. prob sums softmax
/// probabilities (exp(logprob) on a partial basis, which is already
/// normalized); logit sums the raw values, which works better in practice.
inline double port_score(const FirstTokenDistribution& dist, const RefusalTokenSet& tokens,
                         PortBasis basis) {
  if (tokens.token_ids.empty()) {
    throw DataError("refusal token set is empty");
  }
  if (dist.basis == FirstTokenDistribution::Basis::full_logits) {
    for (auto t : tokens.token_ids) {
      if (t >= dist.logits.size()) {
        throw DataError("refusal token id " + std::to_string(t) + " out of range");
      }
    }
    if (basis == PortBasis::logit) {
      double s = 0.0;
      for (auto t : tokens.token_ids) s += dist.logits[t];
      return s;
    }
    std::vector<double> wide(dist.logits.begin(), dist.logits.end());
    auto p = softmax(std::span<const double>(wide));
    double s = 0.0;
    for (auto t : tokens.token_ids) s += p[t];
    return s;
  }

  double s = 0.0;
  for (auto t : tokens.token_ids) {
    auto it = std::find_if(dist.logprobs.begin(), dist.logprobs.end(),
                           [t](const auto& kv) { return kv.first == t; });
    double lp;
    if (it != dist.logprobs.end()) {
      lp = it->second;
    } else if (dist.fill_value) {
      lp = *dist.fill_value;
    } else {
      throw DataError("token id " + std::to_string(t) +
                      " missing from partial distribution and no fill value set");
    }
    s += basis == PortBasis::prob ? std::exp(lp) : lp;
  }
  return s;
}

/// 2x2 agreement matrix between two detectors, each thresholded at its own
/// median score, cells as percentages of the common example count.
struct DetectorAgreement {
  // [a prediction][b prediction], 0 = negative, 1 = positive
  double pct[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  std::size_t count[2][2] = {{0, 0}, {0, 0}};
  double median_a = 0.0;
  double median_b = 0.0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace detail

inline DetectorAgreement compare_detectors(const ScoreSeries& a, const ScoreSeries& b) {
  if (a.entries.empty() || a.entries.size() != b.entries.size()) {
    throw DataError("compare_detectors needs two non-empty series over the same prompts");
  }
  std::map<std::string, double> b_by_id;
  for (const auto& e : b.entries) b_by_id[e.prompt_id] = e.score;

  std::vector<double> scores_a, scores_b;
  for (const auto& e : a.entries) {
    auto it = b_by_id.find(e.prompt_id);
    if (it == b_by_id.end()) {
      throw DataError("prompt id '" + e.prompt_id + "' missing from the second series");
    }
    scores_a.push_back(e.score);
    scores_b.push_back(it->second);
  }
  if (b_by_id.size() != a.entries.size()) {
    throw DataError("series do not cover the same prompt ids");
  }

  DetectorAgreement out;
  out.median_a = detail::median(scores_a);
  out.median_b = detail::median(scores_b);
  for (std::size_t i = 0; i < scores_a.size(); ++i) {
    const int pa = scores_a[i] > out.median_a ? 1 : 0;
    const int pb = scores_b[i] > out.median_b ? 1 : 0;
    out.count[pa][pb]++;
  }
  const double total = static_cast<double>(scores_a.size());
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      out.pct[i][j] = 100.0 * static_cast<double>(out.count[i][j]) / total;
    }
  }
  return out;
}

}  // namespace muli
