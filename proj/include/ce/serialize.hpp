#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ce/common.hpp"
#include "ce/domain.hpp"
#include "ce/metrics.hpp"
#include "ce/optimizer.hpp"

namespace ce {

struct SchemaVersionMismatch : Error {
  using Error::Error;
};
struct CorruptFile : Error {
  using Error::Error;
};

namespace jsonio {

using nlohmann::json;

inline json to_json(const ClassLabel& c) { return json{{"id", c.id}, {"name", c.name}}; }

inline ClassLabel class_from_json(const json& j) {
  return ClassLabel{j.at("id").get<int>(), j.at("name").get<std::string>()};
}

// Constitution principles serialize as a flat {class_id, text} list in render
// order; classes with no principles are restored from the class list.
inline json to_json(const Constitution& c) {
  json principles = json::array();
  for (const auto& e : c.entries) {
    for (const auto& p : e.principles) {
      principles.push_back(json{{"class_id", e.class_id}, {"text", p}});
    }
  }
  return json{{"task_description", c.task_description}, {"principles", principles}};
}

inline Constitution constitution_from_json(const json& j, const std::vector<ClassLabel>& classes) {
  Constitution c;
  c.task_description = j.at("task_description").get<std::string>();
  for (const auto& cls : classes) c.entries.push_back({cls.id, {}});
  for (const auto& p : j.at("principles")) {
    int class_id = p.at("class_id").get<int>();
    ClassPrinciples* e = c.entry_for(class_id);
    if (e == nullptr) throw CorruptFile("principle references unknown class " +
                                        std::to_string(class_id));
    e->principles.push_back(p.at("text").get<std::string>());
  }
  return c;
}

inline json to_json(const Expert& e) {
  return json{{"cluster_id", e.cluster_id},
              {"centroid", e.centroid},
              {"constitution", to_json(e.constitution)},
              {"provenance",
               json{{"iterations", e.provenance.iterations},
                    {"f1_trajectory", e.provenance.f1_trajectory}}}};
}

inline Expert expert_from_json(const json& j, const std::vector<ClassLabel>& classes) {
  Expert e;
  e.cluster_id = j.at("cluster_id").get<int>();
  e.centroid = j.at("centroid").get<std::vector<double>>();
  e.constitution = constitution_from_json(j.at("constitution"), classes);
  const auto& prov = j.at("provenance");
  e.provenance.iterations = prov.at("iterations").get<int>();
  e.provenance.f1_trajectory = prov.at("f1_trajectory").get<std::vector<double>>();
  return e;
}

inline json to_json(const ExpertEnsemble& ens, const std::string& config_digest) {
  json classes = json::array();
  for (const auto& c : ens.classes) classes.push_back(to_json(c));
  json experts = json::array();
  for (const auto& e : ens.experts) experts.push_back(to_json(e));
  return json{{"format_version", ens.format_version},
              {"embedding_model_id", ens.embedding_model_id},
              {"classes", classes},
              {"experts", experts},
              {"config_digest", config_digest}};
}

inline json to_json(const EvalReport& r) {
  json counts = json::array();
  for (const auto& row : r.confusion.counts) counts.push_back(row);
  return json{{"confusion", counts},
              {"abstentions", r.confusion.abstentions},
              {"precision", r.precision},
              {"recall", r.recall},
              {"f1", r.f1},
              {"n_examples", r.n_examples},
              {"n_parse_failures", r.n_parse_failures}};
}

}  // namespace jsonio

inline std::string ensemble_digest(const ExpertEnsemble& ens,
                                   const std::string& config_digest = "") {
  return hex64(fnv1a64(jsonio::to_json(ens, config_digest).dump()));
}

inline void save_ensemble(const ExpertEnsemble& ens, const std::filesystem::path& path,
                          const std::string& config_digest = "") {
  nlohmann::json j = jsonio::to_json(ens, config_digest);
  j["digest"] = hex64(fnv1a64(j.dump()));
  std::ofstream out(path);
  if (!out) throw Error("cannot write ensemble file " + path.string());
  out << j.dump(2) << "\n";
}

inline ExpertEnsemble load_ensemble(const std::filesystem::path& path,
                                    std::string* config_digest = nullptr) {
  std::ifstream in(path);
  if (!in) throw CorruptFile("cannot open ensemble file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw CorruptFile("ensemble file " + path.string() + " is not valid JSON");
  }
  if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != kEnsembleFormatVersion) {
    throw SchemaVersionMismatch("ensemble file " + path.string() +
                                " has unsupported format_version");
  }
  if (!j.contains("digest")) throw CorruptFile("ensemble file lacks digest");
  const std::string stored = j["digest"].get<std::string>();
  nlohmann::json body = j;
  body.erase("digest");
  if (hex64(fnv1a64(body.dump())) != stored) {
    throw CorruptFile("ensemble file " + path.string() + " failed its digest check");
  }

  ExpertEnsemble ens;
  ens.format_version = j["format_version"].get<int>();
  ens.embedding_model_id = j.at("embedding_model_id").get<std::string>();
  for (const auto& c : j.at("classes")) ens.classes.push_back(jsonio::class_from_json(c));
  for (const auto& e : j.at("experts")) {
    ens.experts.push_back(jsonio::expert_from_json(e, ens.classes));
  }
  if (ens.experts.empty()) throw CorruptFile("ensemble file has no experts");
  if (config_digest) *config_digest = j.value("config_digest", "");
  return ens;
}

// Per-cluster training checkpoint, written after each iteration.
inline void save_checkpoint(const ExpertTrainState& state, const std::vector<ClassLabel>& classes,
                            std::uint64_t seed, const std::filesystem::path& path) {
  nlohmann::json beam = nlohmann::json::array();
  for (const auto& c : state.beam) beam.push_back(jsonio::to_json(c));
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : state.last_stats) {
    stats.push_back(nlohmann::json{{"pulls", s.pulls}, {"scored", s.scored},
                                   {"correct", s.correct}});
  }
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) cls.push_back(jsonio::to_json(c));
  nlohmann::json j{{"format_version", kEnsembleFormatVersion},
                   {"cluster_id", state.cluster_id},
                   {"iteration", state.iteration},
                   {"beam", beam},
                   {"f1_trajectory", state.f1_trajectory},
                   {"bandit_stats", stats},
                   {"classes", cls},
                   {"rng_state_digest", hex64(seed_mix(seed, "ckpt",
                                                       static_cast<std::uint64_t>(state.iteration)))}};
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

inline ExpertTrainState load_checkpoint(const std::filesystem::path& path,
                                        const std::vector<ClassLabel>& classes) {
  std::ifstream in(path);
  if (!in) throw CorruptFile("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw CorruptFile("checkpoint " + path.string() + " is not valid JSON");
  if (j.value("format_version", -1) != kEnsembleFormatVersion) {
    throw SchemaVersionMismatch("checkpoint " + path.string() + " has unsupported version");
  }
  ExpertTrainState state;
  state.cluster_id = j.at("cluster_id").get<int>();
  state.iteration = j.at("iteration").get<int>();
  for (const auto& c : j.at("beam")) {
    state.beam.push_back(jsonio::constitution_from_json(c, classes));
  }
  state.f1_trajectory = j.at("f1_trajectory").get<std::vector<double>>();
  for (const auto& s : j.at("bandit_stats")) {
    state.last_stats.push_back(ArmStats{s.at("pulls").get<long>(), s.at("scored").get<long>(),
                                        s.at("correct").get<long>()});
  }
  return state;
}

}  // namespace ce
