#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ce/clustering.hpp"
#include "ce/common.hpp"
#include "ce/domain.hpp"

namespace ce {

struct ParseError : Error {
  using Error::Error;
};
struct UnknownLabel : Error {
  using Error::Error;
};
struct EmptyDataset : Error {
  using Error::Error;
};
struct TooSmall : Error {
  using Error::Error;
};

enum class DatasetFormat { Jsonl, Csv };

enum class SplitName { Train, Val, Test };

struct Dataset {
  std::string name;
  std::vector<Example> examples;
  std::vector<ClassLabel> classes;
  std::string initial_prompt;  // task seed question
  // split marker per example id when the source file provides one
  std::map<std::string, SplitName> canonical_splits;
};

struct SplitSpec {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  bool canonical = false;  // use the file-provided split column
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

namespace detail {

inline int label_id(const std::string& name, const std::vector<ClassLabel>& classes,
                    std::size_t line_no) {
  for (const auto& c : classes) {
    if (c.name == name) return c.id;
  }
  throw UnknownLabel("line " + std::to_string(line_no) + ": unknown label \"" + name + "\"");
}

inline SplitName parse_split_name(const std::string& s, std::size_t line_no) {
  if (s == "train") return SplitName::Train;
  if (s == "val") return SplitName::Val;
  if (s == "test") return SplitName::Test;
  throw ParseError("line " + std::to_string(line_no) + ": unknown split \"" + s + "\"");
}

// Minimal RFC-4180-ish CSV row parser (quoted fields, embedded commas).
inline std::vector<std::string> parse_csv_row(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(cur);
  return out;
}

}  // namespace detail

// JSONL record schema: {"id"?, "text"?, "features"?, "label", "split"?};
// exactly one of text/features. CSV: header row; columns become features
// except the reserved names id/label/split.
inline Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            std::vector<ClassLabel> classes, std::string name = "",
                            std::string initial_prompt = "") {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  Dataset d;
  d.name = name.empty() ? path.stem().string() : std::move(name);
  d.classes = std::move(classes);
  d.initial_prompt = std::move(initial_prompt);

  std::set<std::string> seen_ids;
  auto finish_example = [&](Example e, std::optional<std::string> split, std::size_t line_no) {
    if (e.id.empty()) e.id = "ex" + std::to_string(d.examples.size());
    if (!seen_ids.insert(e.id).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate example id \"" + e.id +
                       "\"");
    }
    if (e.features.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": example has no features");
    }
    if (split) d.canonical_splits[e.id] = detail::parse_split_name(*split, line_no);
    d.examples.push_back(std::move(e));
  };

  std::string line;
  std::size_t line_no = 0;
  if (format == DatasetFormat::Jsonl) {
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        throw ParseError("line " + std::to_string(line_no) + ": invalid JSON record");
      }
      Example e;
      if (j.contains("id")) e.id = j["id"].get<std::string>();
      const bool has_text = j.contains("text");
      const bool has_features = j.contains("features");
      if (has_text == has_features) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": exactly one of \"text\"/\"features\" is required");
      }
      if (has_text) {
        e.features.emplace_back("text", j["text"].get<std::string>());
      } else {
        for (const auto& [k, v] : j["features"].items()) {
          e.features.emplace_back(k, v.get<std::string>());
        }
      }
      if (!j.contains("label")) {
        throw ParseError("line " + std::to_string(line_no) + ": missing \"label\"");
      }
      e.label = detail::label_id(j["label"].get<std::string>(), d.classes, line_no);
      std::optional<std::string> split;
      if (j.contains("split")) split = j["split"].get<std::string>();
      finish_example(std::move(e), split, line_no);
    }
  } else {
    if (!std::getline(in, line)) throw EmptyDataset("CSV file " + path.string() + " is empty");
    ++line_no;
    auto header = detail::parse_csv_row(line, line_no);
    int label_col = -1, id_col = -1, split_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == "label") label_col = static_cast<int>(i);
      if (header[i] == "id") id_col = static_cast<int>(i);
      if (header[i] == "split") split_col = static_cast<int>(i);
    }
    if (label_col < 0) throw ParseError("line 1: CSV header has no \"label\" column");
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      auto row = detail::parse_csv_row(line, line_no);
      if (row.size() != header.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(header.size()) + " columns, got " +
                         std::to_string(row.size()));
      }
      Example e;
      std::optional<std::string> split;
      for (std::size_t i = 0; i < header.size(); ++i) {
        int col = static_cast<int>(i);
        if (col == id_col) {
          e.id = row[i];
        } else if (col == label_col) {
          e.label = detail::label_id(row[i], d.classes, line_no);
        } else if (col == split_col) {
          split = row[i];
        } else {
          e.features.emplace_back(header[i], row[i]);
        }
      }
      finish_example(std::move(e), split, line_no);
    }
  }
  if (d.examples.empty()) throw EmptyDataset("dataset file " + path.string() + " has no records");
  return d;
}

// Deterministic disjoint partition. Sizes are floor(fraction * n) for val and
// test with the remainder going to train. A seeded Fisher-Yates shuffle over
// sorted example ids keeps the partition platform-independent.
inline Splits split(const Dataset& d, const SplitSpec& spec) {
  if (d.examples.empty()) throw EmptyDataset("cannot split an empty dataset");
  Splits out;
  for (Dataset* part : {&out.train, &out.val, &out.test}) {
    part->name = d.name;
    part->classes = d.classes;
    part->initial_prompt = d.initial_prompt;
  }

  std::map<std::string, const Example*> by_id;
  for (const auto& e : d.examples) by_id[e.id] = &e;

  if (spec.canonical) {
    for (const auto& e : d.examples) {
      auto it = d.canonical_splits.find(e.id);
      if (it == d.canonical_splits.end()) {
        throw ParseError("canonical split requested but example \"" + e.id +
                         "\" carries no split field");
      }
      switch (it->second) {
        case SplitName::Train:
          out.train.examples.push_back(e);
          break;
        case SplitName::Val:
          out.val.examples.push_back(e);
          break;
        case SplitName::Test:
          out.test.examples.push_back(e);
          break;
      }
    }
  } else {
    if (spec.train_fraction <= 0 || spec.val_fraction <= 0 || spec.test_fraction <= 0 ||
        std::abs(spec.train_fraction + spec.val_fraction + spec.test_fraction - 1.0) > 1e-9) {
      throw TooSmall("split fractions must be in (0,1) and sum to 1");
    }
    std::vector<std::string> ids;
    ids.reserve(d.examples.size());
    for (const auto& [id, e] : by_id) ids.push_back(id);
    Rng rng(seed_mix(spec.seed, "split"));
    rng.shuffle(ids);

    const std::size_t n = ids.size();
    const std::size_t n_val = static_cast<std::size_t>(spec.val_fraction * static_cast<double>(n));
    const std::size_t n_test =
        static_cast<std::size_t>(spec.test_fraction * static_cast<double>(n));
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t i = 0; i < n; ++i) {
      const Example& e = *by_id.at(ids[i]);
      if (i < n_train) {
        out.train.examples.push_back(e);
      } else if (i < n_train + n_val) {
        out.val.examples.push_back(e);
      } else {
        out.test.examples.push_back(e);
      }
    }
  }
  if (out.train.examples.empty() || out.val.examples.empty() || out.test.examples.empty()) {
    throw TooSmall("dataset of " + std::to_string(d.examples.size()) +
                   " examples leaves an empty split");
  }
  return out;
}

// One dataset per cluster; each example goes to the centroid with maximal
// cosine similarity to its embedding, ties to the lowest cluster index.
inline std::vector<Dataset> partition_by_cluster(
    const Dataset& d, const ClusterModel& model,
    const std::map<std::string, std::vector<double>>& embeddings) {
  std::vector<Dataset> parts(static_cast<std::size_t>(model.k));
  for (auto& p : parts) {
    p.name = d.name;
    p.classes = d.classes;
    p.initial_prompt = d.initial_prompt;
  }
  for (const auto& e : d.examples) {
    auto it = embeddings.find(e.id);
    if (it == embeddings.end()) {
      throw DimensionMismatch("no embedding for example \"" + e.id + "\"");
    }
    std::size_t c = nearest_centroid(it->second, model.centroids);
    parts[c].examples.push_back(e);
  }
  return parts;
}

}  // namespace ce
