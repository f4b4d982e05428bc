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

// Dataset and score-file ingestion plus the binary logit-dump format.
//
// Logit dump layout (all integers little-endian):
//   magic "MULI" (4 bytes) | version u32 | n_rows u64 | n_cols u32 |
//   fingerprint_len u16 | fingerprint bytes | row-major f32 payload
// A sidecar manifest at <path>.manifest.jsonl carries one JSON object per row:
//   {"prompt_id", "label", "row", "text_sha256"} (plus "partial" when the row
// was reconstructed from a top-k logprob fallback). The matrix file stays
// mmap-friendly; the manifest stays human-inspectable.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muli/detail/bytes.hpp"
#include "muli/detail/sha256.hpp"
#include "muli/error.hpp"
#include "muli/types.hpp"

namespace muli {

inline constexpr char kDumpMagic[4] = {'M', 'U', 'L', 'I'};
inline constexpr std::uint32_t kDumpVersion = 1;

struct ManifestEntry {
  std::string prompt_id;
  int label = 0;
  std::uint64_t row = 0;
  std::string text_sha256;
  bool partial = false;
};

/// In-memory logit dump: header fields, row manifest and the f32 matrix.
struct LogitDump {
  std::uint64_t n_rows = 0;
  std::uint32_t n_cols = 0;
  std::string backend_fingerprint;
  std::vector<ManifestEntry> manifest;
  std::vector<float> matrix;  // row-major, n_rows * n_cols

  std::span<const float> row(std::size_t i) const {
    return {matrix.data() + i * n_cols, n_cols};
  }
};

namespace detail {

inline std::string manifest_path(const std::string& dump_path) {
  return dump_path + ".manifest.jsonl";
}

inline int parse_label_json(const nlohmann::json& v, std::size_t line_no) {
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_number_integer()) {
    const auto i = v.get<long long>();
    if (i == 0 || i == 1) return static_cast<int>(i);
  }
  throw ParseError("line " + std::to_string(line_no) + ": label must be 0, 1 or a boolean");
}

inline int parse_label_text(std::string s, std::size_t line_no) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "0" || s == "false") return 0;
  if (s == "1" || s == "true") return 1;
  throw ParseError("line " + std::to_string(line_no) + ": unknown label value '" + s + "'");
}

// RFC 4180 style: quoted fields, doubled quotes, commas and newlines inside
// quotes. Returns rows of raw fields; trailing CR of CRLF lines is dropped.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && !field_started && field.empty()) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
    ++i;
  }
  if (in_quotes) {
    throw ParseError("csv: unterminated quoted field");
  }
  if (!field.empty() || !row.empty()) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    end_row();
  }
  return rows;
}

}  // namespace detail

enum class PromptFormat { jsonl, csv };

inline PromptFormat prompt_format_from_string(const std::string& s) {
  if (s == "jsonl") return PromptFormat::jsonl;
  if (s == "csv") return PromptFormat::csv;
  throw DataError("unknown prompt format '" + s + "' (expected jsonl or csv)");
}

/// Guess the format from the file extension; .csv means csv, anything else jsonl.
inline PromptFormat guess_prompt_format(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  return ext == ".csv" ? PromptFormat::csv : PromptFormat::jsonl;
}

/// Parse a prompt file into a validated dataset. Records need `text` and
/// `label` (0/1 or boolean); `id` and `group` are optional. Missing ids are
/// assigned as the decimal row number. Rejects duplicate ids and empty texts.
inline Dataset parse_prompts(const std::string& path, PromptFormat format) {
  const std::string raw = detail::read_file(path);
  Dataset d;
  d.name = std::filesystem::path(path).stem().string();

  if (format == PromptFormat::jsonl) {
    std::istringstream in(raw);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
      }
      if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
        throw ParseError("line " + std::to_string(line_no) + ": missing string field 'text'");
      }
      if (!j.contains("label")) {
        throw ParseError("line " + std::to_string(line_no) + ": missing field 'label'");
      }
      LabeledPrompt p;
      p.text = j["text"].get<std::string>();
      p.label = detail::parse_label_json(j["label"], line_no);
      p.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                     : std::to_string(line_no);
      if (j.contains("group") && j["group"].is_string()) p.group = j["group"].get<std::string>();
      if (j.contains("jailbreak") && j["jailbreak"].is_boolean()) {
        p.jailbreak = j["jailbreak"].get<bool>();
      }
      d.items.push_back(std::move(p));
    }
  } else {
    auto rows = detail::parse_csv(raw);
    if (rows.empty()) {
      throw ParseError("csv: empty file");
    }
    auto& header = rows.front();
    if (!header.empty() && header[0].size() >= 3 &&
        static_cast<unsigned char>(header[0][0]) == 0xEF) {
      header[0].erase(0, 3);  // UTF-8 BOM
    }
    std::map<std::string, std::size_t> col;
    for (std::size_t c = 0; c < header.size(); ++c) col[header[c]] = c;
    if (!col.count("text") || !col.count("label")) {
      throw ParseError("csv: header must contain 'text' and 'label' columns");
    }
    auto cell = [&](const std::vector<std::string>& r, const std::string& name,
                    std::string fallback) {
      auto it = col.find(name);
      if (it == col.end() || it->second >= r.size()) return fallback;
      return r[it->second];
    };
    for (std::size_t rix = 1; rix < rows.size(); ++rix) {
      const auto& r = rows[rix];
      if (r.size() == 1 && r[0].empty()) continue;  // blank line
      const std::size_t line_no = rix + 1;          // header is line 1
      if (col.at("text") >= r.size() || col.at("label") >= r.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": too few columns");
      }
      LabeledPrompt p;
      p.text = r[col.at("text")];
      p.label = detail::parse_label_text(r[col.at("label")], line_no);
      p.id = cell(r, "id", "");
      if (p.id.empty()) p.id = std::to_string(rix);  // data-row number
      p.group = cell(r, "group", "");
      d.items.push_back(std::move(p));
    }
  }

  auto report = validate_dataset(d);
  if (!report.accepted) {
    std::string msg = "dataset rejected:";
    for (const auto& id : report.duplicate_ids) msg += " duplicate id '" + id + "'";
    for (const auto& id : report.empty_text_ids) msg += " empty text for id '" + id + "'";
    throw DataError(msg);
  }
  return d;
}

inline Dataset parse_prompts(const std::string& path) {
  return parse_prompts(path, guess_prompt_format(path));
}

/// Serialize a dataset as prompt JSONL (the inverse of parse_prompts).
inline std::string prompts_to_jsonl(const Dataset& d) {
  std::string out;
  for (const auto& p : d.items) {
    nlohmann::json j{{"id", p.id}, {"text", p.text}, {"label", p.label}};
    if (!p.group.empty()) j["group"] = p.group;
    if (p.jailbreak) j["jailbreak"] = true;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_prompts_jsonl(const Dataset& d, const std::string& path) {
  detail::atomic_write_file(path, prompts_to_jsonl(d));
}

/// Persist logit records as a binary dump plus manifest sidecar. All records
/// must share one backend fingerprint and one vector length. Writes are atomic.
inline LogitDump write_logit_dump(const std::vector<LogitRecord>& records,
                                  const std::string& path) {
  LogitDump dump;
  if (!records.empty()) {
    dump.backend_fingerprint = records.front().backend_fingerprint;
    dump.n_cols = static_cast<std::uint32_t>(records.front().logits.size());
  }
  dump.n_rows = records.size();
  dump.matrix.reserve(static_cast<std::size_t>(dump.n_rows) * dump.n_cols);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.backend_fingerprint != dump.backend_fingerprint) {
      throw DataError("record '" + r.prompt_id + "' has a different backend fingerprint");
    }
    if (r.logits.size() != dump.n_cols) {
      throw DataError("record '" + r.prompt_id + "' has vector length " +
                      std::to_string(r.logits.size()) + ", expected " +
                      std::to_string(dump.n_cols));
    }
    ManifestEntry m;
    m.prompt_id = r.prompt_id;
    m.label = r.label;
    m.row = i;
    m.text_sha256 = r.text_sha256;
    m.partial = r.partial;
    dump.manifest.push_back(std::move(m));
    dump.matrix.insert(dump.matrix.end(), r.logits.begin(), r.logits.end());
  }

  std::string buf;
  buf.reserve(32 + dump.matrix.size() * 4);
  buf.append(kDumpMagic, 4);
  detail::append_le(buf, kDumpVersion);
  detail::append_le(buf, dump.n_rows);
  detail::append_le(buf, dump.n_cols);
  detail::append_le(buf, static_cast<std::uint16_t>(dump.backend_fingerprint.size()));
  buf += dump.backend_fingerprint;
  for (float v : dump.matrix) detail::append_f32_le(buf, v);
  detail::atomic_write_file(path, buf);

  std::string manifest;
  for (const auto& m : dump.manifest) {
    nlohmann::json j{{"prompt_id", m.prompt_id},
                     {"label", m.label},
                     {"row", m.row},
                     {"text_sha256", m.text_sha256}};
    if (m.partial) j["partial"] = true;
    manifest += j.dump();
    manifest += '\n';
  }
  detail::atomic_write_file(detail::manifest_path(path), manifest);
  return dump;
}

inline LogitDump read_logit_dump(const std::string& path) {
  const std::string raw = detail::read_file(path);
  detail::ByteReader reader(raw.data(), raw.size());
  const std::string magic = reader.read_bytes(4);
  if (magic != std::string(kDumpMagic, 4)) {
    throw IoError("not a logit dump (bad magic): " + path);
  }
  const auto version = reader.read_le<std::uint32_t>();
  if (version != kDumpVersion) {
    throw IoError("unsupported dump version " + std::to_string(version) + " (expected " +
                  std::to_string(kDumpVersion) + ")");
  }
  LogitDump dump;
  dump.n_rows = reader.read_le<std::uint64_t>();
  dump.n_cols = reader.read_le<std::uint32_t>();
  const auto fp_len = reader.read_le<std::uint16_t>();
  dump.backend_fingerprint = reader.read_bytes(fp_len);
  const std::size_t expected = static_cast<std::size_t>(dump.n_rows) * dump.n_cols;
  if (reader.remaining() != expected * 4) {
    throw IoError("dump payload holds " + std::to_string(reader.remaining() / 4) +
                  " floats, header claims " + std::to_string(expected));
  }
  dump.matrix.resize(expected);
  for (auto& v : dump.matrix) v = reader.read_f32_le();

  const std::string mpath = detail::manifest_path(path);
  const std::string mraw = detail::read_file(mpath);
  std::istringstream in(mraw);
  std::string line;
  std::size_t line_no = 0;
  std::vector<char> row_seen(dump.n_rows, 0);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(mpath + " line " + std::to_string(line_no) + ": " + e.what());
    }
    ManifestEntry m;
    m.prompt_id = j.at("prompt_id").get<std::string>();
    m.label = detail::parse_label_json(j.at("label"), line_no);
    m.row = j.at("row").get<std::uint64_t>();
    m.text_sha256 = j.value("text_sha256", std::string{});
    m.partial = j.value("partial", false);
    if (m.row >= dump.n_rows || row_seen[m.row]) {
      throw DataError(mpath + " line " + std::to_string(line_no) +
                      ": row index out of range or duplicated");
    }
    row_seen[m.row] = 1;
    dump.manifest.push_back(std::move(m));
  }
  if (dump.manifest.size() != dump.n_rows) {
    throw DataError("manifest lists " + std::to_string(dump.manifest.size()) +
                    " rows, dump holds " + std::to_string(dump.n_rows));
  }
  std::sort(dump.manifest.begin(), dump.manifest.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.row < b.row; });
  return dump;
}

// ---------------------------------------------------------------------------
// Baseline detector features
// ---------------------------------------------------------------------------

/// Margin between the unsafe and safe verdict logits of a guard model.
inline double llamaguard_feature(double unsafe_logit, double safe_logit) {
  if (!std::isfinite(unsafe_logit) || !std::isfinite(safe_logit)) {
    throw DataError("llamaguard_feature requires finite logits");
  }
  return unsafe_logit - safe_logit;
}

/// Log-odds of the maximum per-category moderation score. Scores are clamped
/// to [eps, 1-eps] first; the raw formula is undefined at exactly 0 or 1 and
/// clamping preserves the ordering.
inline double omod_feature(std::span<const double> category_scores, double eps = 1e-9) {
  if (category_scores.empty()) {
    throw DataError("omod_feature requires at least one category score");
  }
  double c = -std::numeric_limits<double>::infinity();
  for (double s : category_scores) {
    c = std::max(c, std::clamp(s, eps, 1.0 - eps));
  }
  return std::log(c) - std::log1p(-c);
}

struct BaselineScoreRow {
  std::string prompt_id;
  nlohmann::json raw;
  double feature = 0.0;
  std::optional<int> label;
};

/// Parse a baseline score JSONL file. Rows carry either {unsafe_logit,
/// safe_logit} or {category_scores:[...]}; the feature is derived accordingly.
/// An optional per-row label is kept for series construction.
inline std::vector<BaselineScoreRow> parse_baseline_scores(const std::string& path) {
  const std::string raw = detail::read_file(path);
  std::istringstream in(raw);
  std::string line;
  std::size_t line_no = 0;
  std::vector<BaselineScoreRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    BaselineScoreRow row;
    if (!j.contains("prompt_id") || !j["prompt_id"].is_string()) {
      throw ParseError("line " + std::to_string(line_no) + ": missing 'prompt_id'");
    }
    row.prompt_id = j["prompt_id"].get<std::string>();
    if (j.contains("unsafe_logit") && j.contains("safe_logit")) {
      row.feature = llamaguard_feature(j["unsafe_logit"].get<double>(),
                                       j["safe_logit"].get<double>());
    } else if (j.contains("category_scores") && j["category_scores"].is_array()) {
      std::vector<double> scores;
      for (const auto& v : j["category_scores"]) scores.push_back(v.get<double>());
      row.feature = omod_feature(scores);
    } else {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected unsafe_logit/safe_logit or category_scores");
    }
    if (j.contains("label")) {
      row.label = detail::parse_label_json(j["label"], line_no);
    }
    row.raw = std::move(j);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace muli
