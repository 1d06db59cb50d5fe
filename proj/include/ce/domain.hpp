#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ce/common.hpp"

namespace ce {

constexpr std::size_t kMaxPrincipleLength = 1000;

struct MissingClassEntry : Error {
  using Error::Error;
};
struct EmptyPrincipleText : Error {
  using Error::Error;
};
struct OversizedPrinciple : Error {
  using Error::Error;
};
struct IndexOutOfRange : Error {
  using Error::Error;
};

// A class of the task. Ids are contiguous from 0 and double as positions in
// the task's class list.
struct ClassLabel {
  int id = 0;
  std::string name;

  bool operator==(const ClassLabel&) const = default;
};

// Principles grouped under one class of the task. Order is significant: it is
// the render order in the scoring prompt.
struct ClassPrinciples {
  int class_id = 0;
  std::vector<std::string> principles;

  bool operator==(const ClassPrinciples&) const = default;
};

// The learned prompt: an ordered principle list per class plus the task
// question the principles refine.
struct Constitution {
  std::string task_description;
  std::vector<ClassPrinciples> entries;  // one per class, in class-id order

  const ClassPrinciples* entry_for(int class_id) const {
    for (const auto& e : entries) {
      if (e.class_id == class_id) return &e;
    }
    return nullptr;
  }

  ClassPrinciples* entry_for(int class_id) {
    for (auto& e : entries) {
      if (e.class_id == class_id) return &e;
    }
    return nullptr;
  }

  std::size_t principle_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.principles.size();
    return n;
  }

  bool operator==(const Constitution&) const = default;
};

enum class MutationKind { Add, Edit, Delete };

// One structured edit to a constitution: exactly one principle is added,
// replaced, or removed.
struct MutationOp {
  MutationKind kind = MutationKind::Add;
  int class_id = 0;
  int index = -1;        // Edit/Delete only
  std::string new_text;  // Add/Edit only

  bool operator==(const MutationOp&) const = default;
};

struct Example {
  std::string id;
  std::vector<std::pair<std::string, std::string>> features;  // name -> value, ordered
  std::optional<int> label;  // class id; absent at pure inference

  bool operator==(const Example&) const = default;
};

// Feature values joined in order; the text that gets embedded.
inline std::string example_text(const Example& e) {
  std::string out;
  for (const auto& [name, value] : e.features) {
    if (!out.empty()) out += "\n";
    out += value;
  }
  return out;
}

struct BanditConfig {
  int rounds = 0;  // 0 = auto: 20 * |candidates|
  int minibatch_size = 16;
  double exploration = 2.0;
};

struct TrainConfig {
  int n_errors = 3;     // N: errors sampled per iteration
  int m_mutations = 2;  // M: mutations requested per error
  int beam = 3;         // B: beam width / initial candidate count
  int iterations = 5;   // J
  std::vector<int> k_candidates = {2, 3};
  std::uint64_t seed = 0;
  BanditConfig bandit;
  int error_scan_budget = 64;  // examples scored per sample_errors call
  int positive_class = 1;      // class used for F1
  int fallback_class = 0;      // prediction on unparseable scorer output
};

struct Provenance {
  int iterations = 0;
  std::vector<double> f1_trajectory;  // best full-validation F1 per iteration

  bool operator==(const Provenance&) const = default;
};

// A constitution bound to the cluster it was trained on.
struct Expert {
  int cluster_id = 0;
  std::vector<double> centroid;  // unit-normalized
  Constitution constitution;
  Provenance provenance;

  bool operator==(const Expert&) const = default;
};

constexpr int kEnsembleFormatVersion = 1;

struct ExpertEnsemble {
  std::vector<Expert> experts;
  std::string embedding_model_id;
  std::vector<ClassLabel> classes;
  int format_version = kEnsembleFormatVersion;

  bool operator==(const ExpertEnsemble&) const = default;
};

// Checks the constitution against the task's class list. Returns the input
// unchanged when every class has an entry and all principle invariants hold.
inline const Constitution& validate_constitution(const Constitution& c,
                                                 const std::vector<ClassLabel>& classes) {
  for (const auto& cls : classes) {
    const ClassPrinciples* e = c.entry_for(cls.id);
    if (e == nullptr) {
      throw MissingClassEntry("constitution has no entry for class " + std::to_string(cls.id) +
                              " (" + cls.name + ")");
    }
    for (const auto& p : e->principles) {
      if (trim(p).empty()) {
        throw EmptyPrincipleText("empty principle under class " + cls.name);
      }
      if (p.size() > kMaxPrincipleLength) {
        throw OversizedPrinciple("principle under class " + cls.name + " exceeds " +
                                 std::to_string(kMaxPrincipleLength) + " characters");
      }
    }
  }
  return c;
}

// Applies one mutation, returning a new constitution. The input is untouched.
inline Constitution apply_mutation(const Constitution& c, const MutationOp& op) {
  Constitution out = c;
  ClassPrinciples* e = out.entry_for(op.class_id);
  if (e == nullptr) {
    throw IndexOutOfRange("mutation targets unknown class " + std::to_string(op.class_id));
  }
  switch (op.kind) {
    case MutationKind::Add:
      e->principles.push_back(op.new_text);
      break;
    case MutationKind::Edit:
      if (op.index < 0 || static_cast<std::size_t>(op.index) >= e->principles.size()) {
        throw IndexOutOfRange("edit index " + std::to_string(op.index) + " out of range");
      }
      e->principles[static_cast<std::size_t>(op.index)] = op.new_text;
      break;
    case MutationKind::Delete:
      if (op.index < 0 || static_cast<std::size_t>(op.index) >= e->principles.size()) {
        throw IndexOutOfRange("delete index " + std::to_string(op.index) + " out of range");
      }
      e->principles.erase(e->principles.begin() + op.index);
      break;
  }
  return out;
}

}  // namespace ce
