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

// Shared domain types: labeled prompts, datasets, first-token logit records and
// the descriptor binding logits to the backend that produced them. Everything
// here is immutable after construction and safe to share across threads.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "muli/detail/rng.hpp"
#include "muli/detail/sha256.hpp"
#include "muli/error.hpp"

namespace muli {

/// One prompt with its binary toxicity label. `group` ties near-duplicate
/// prompts together so splits never separate them; empty means singleton.
struct LabeledPrompt {
  std::string id;
  std::string text;
  int label = 0;  // 0 = benign, 1 = toxic
  std::string group;
  bool jailbreak = false;  // optional sub-tag, carried but never a third class
};

struct Dataset {
  std::string name;
  std::vector<LabeledPrompt> items;
};

/// First-response-token logits for one prompt, over the backend's full vocabulary.
struct LogitRecord {
  std::string prompt_id;
  std::vector<float> logits;
  int label = 0;
  std::string backend_fingerprint;
  std::string text_sha256;  // digest of the prompt text; joins dumps back to datasets
  bool partial = false;     // true when reconstructed from a top-k logprob fallback
};

/// Identity of an inference backend. `vocab_hash` fingerprints the
/// token-id-to-string table so logit vectors cannot be mixed across models.
struct BackendDescriptor {
  std::string endpoint;
  std::string model_name;
  std::string chat_template_id;
  std::uint32_t vocab_size = 0;
  std::string vocab_hash;
};

/// Digest binding a logit vector to (model, template, vocabulary).
inline std::string backend_fingerprint(const BackendDescriptor& b) {
  return detail::sha256_hex(b.model_name + "\n" + b.chat_template_id + "\n" + b.vocab_hash);
}

struct ValidationReport {
  bool accepted = false;
  std::vector<std::string> duplicate_ids;
  std::vector<std::string> empty_text_ids;
  std::size_t benign_count = 0;
  std::size_t toxic_count = 0;
};

/// Report-only integrity check. A dataset is accepted iff every id is unique
/// and no prompt text is empty.
inline ValidationReport validate_dataset(const Dataset& d) {
  ValidationReport report;
  std::unordered_set<std::string> seen;
  std::unordered_set<std::string> reported_dups;
  for (const auto& item : d.items) {
    if (!seen.insert(item.id).second && reported_dups.insert(item.id).second) {
      report.duplicate_ids.push_back(item.id);
    }
    if (item.text.empty()) {
      report.empty_text_ids.push_back(item.id);
    }
    if (item.label == 1) {
      ++report.toxic_count;
    } else {
      ++report.benign_count;
    }
  }
  report.accepted = report.duplicate_ids.empty() && report.empty_text_ids.empty();
  return report;
}

/// Group-atomic train/test split. Items sharing a group key always land on the
/// same side; items without a group form singleton groups. Deterministic for a
/// given seed; the train side receives round(train_fraction * #groups) groups.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction,
                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("train_fraction must lie strictly inside (0,1)");
  }

  // Group keys in order of first appearance; singletons keyed by item index so
  // they can never collide with a caller-provided group name.
  std::vector<std::size_t> group_of_item(d.items.size());
  std::vector<std::string> group_order;
  std::unordered_map<std::string, std::size_t> group_index;
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    const auto& g = d.items[i].group;
    if (g.empty()) {
      group_of_item[i] = group_order.size();
      group_order.push_back("");
      continue;
    }
    auto [it, inserted] = group_index.try_emplace(g, group_order.size());
    if (inserted) {
      group_order.push_back(g);
    }
    group_of_item[i] = it->second;
  }

  const std::size_t n_groups = group_order.size();
  std::vector<std::size_t> order(n_groups);
  for (std::size_t i = 0; i < n_groups; ++i) order[i] = i;
  std::mt19937_64 gen(seed);
  detail::deterministic_shuffle(order, gen);

  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(n_groups)));
  std::vector<char> in_train(n_groups, 0);
  for (std::size_t i = 0; i < n_train && i < n_groups; ++i) {
    in_train[order[i]] = 1;
  }

  Dataset train{d.name + "-train", {}};
  Dataset test{d.name + "-test", {}};
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    (in_train[group_of_item[i]] ? train : test).items.push_back(d.items[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace muli
