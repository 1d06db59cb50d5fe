#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ce/common.hpp"
#include "ce/data.hpp"
#include "ce/domain.hpp"
#include "ce/http_gateway.hpp"
#include "ce/metrics.hpp"
#include "ce/mock.hpp"
#include "ce/optimizer.hpp"
#include "ce/serialize.hpp"

namespace ce {

struct ConfigError : Error {
  using Error::Error;
};

// Everything one run needs, loaded from a single JSON config file. Flags
// override file values; the API key itself never lives in the config, only
// the name of the environment variable carrying it.
struct RunConfig {
  std::filesystem::path dataset_path;
  DatasetFormat dataset_format = DatasetFormat::Jsonl;
  std::string dataset_name;
  std::vector<ClassLabel> classes;
  std::string initial_prompt;
  SplitSpec split_spec;
  TrainConfig train;
  MockSpec mock;
  ProviderAdapter score_adapter;
  ProviderAdapter optimize_adapter;
  ProviderAdapter embed_adapter;
  std::filesystem::path cache_dir;
  std::filesystem::path out_dir = ".";
  std::string config_digest;
};

namespace detail {

inline ProviderAdapter adapter_from_json(const nlohmann::json& j) {
  ProviderAdapter a;
  a.name = j.value("name", "adapter");
  a.endpoint = j.value("endpoint", "");
  a.model_id = j.value("model", "");
  a.body_template = j.value("body_template", "");
  a.response_path = j.value("response_path", "");
  a.auth_header = j.value("auth_header", "");
  a.auth_env = j.value("auth_env", "");
  a.max_attempts = j.value("max_attempts", 3);
  a.backoff_ms = j.value("backoff_ms", 200);
  a.timeout_seconds = j.value("timeout_seconds", 60);
  return a;
}

}  // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("config file " + path.string() + " is not valid JSON");
  }
  RunConfig cfg;
  cfg.config_digest = hex64(fnv1a64(buf.str()));

  const auto& ds = j.at("dataset");
  cfg.dataset_path = ds.at("path").get<std::string>();
  std::string fmt = ds.value("format", "jsonl");
  if (fmt == "jsonl") {
    cfg.dataset_format = DatasetFormat::Jsonl;
  } else if (fmt == "csv") {
    cfg.dataset_format = DatasetFormat::Csv;
  } else {
    throw ConfigError("unknown dataset format \"" + fmt + "\"");
  }
  cfg.dataset_name = ds.value("name", "");
  int next_id = 0;
  for (const auto& c : ds.at("classes")) {
    cfg.classes.push_back({next_id++, c.get<std::string>()});
  }
  cfg.initial_prompt = ds.value("initial_prompt", "");
  cfg.train.positive_class = ds.value("positive_class", 1);

  if (j.contains("split")) {
    const auto& sp = j["split"];
    cfg.split_spec.train_fraction = sp.value("train", 0.6);
    cfg.split_spec.val_fraction = sp.value("val", 0.2);
    cfg.split_spec.test_fraction = sp.value("test", 0.2);
    cfg.split_spec.canonical = sp.value("canonical", false);
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.n_errors = t.value("n_errors", 3);
    cfg.train.m_mutations = t.value("m_mutations", 2);
    cfg.train.beam = t.value("beam", 3);
    cfg.train.iterations = t.value("iterations", 5);
    if (t.contains("k_candidates")) {
      cfg.train.k_candidates = t["k_candidates"].get<std::vector<int>>();
    }
    cfg.train.error_scan_budget = t.value("error_scan_budget", 64);
    cfg.train.fallback_class = t.value("fallback_class", 0);
    if (t.contains("bandit")) {
      const auto& b = t["bandit"];
      cfg.train.bandit.rounds = b.value("rounds", 0);
      cfg.train.bandit.minibatch_size = b.value("minibatch_size", 16);
      cfg.train.bandit.exploration = b.value("exploration", 2.0);
    }
  }

  if (!j.contains("seed")) throw ConfigError("config requires an explicit \"seed\"");
  cfg.train.seed = j["seed"].get<std::uint64_t>();
  cfg.split_spec.seed = cfg.train.seed;

  if (j.contains("mock")) {
    const auto& m = j["mock"];
    if (m.contains("keywords")) {
      for (const auto& [kw, cls] : m["keywords"].items()) {
        cfg.mock.keywords.emplace_back(kw, cls.get<int>());
      }
    }
    cfg.mock.embed_dim = m.value("embed_dim", 16);
    cfg.mock.seed = cfg.train.seed;
  }

  if (j.contains("adapters")) {
    const auto& a = j["adapters"];
    if (a.contains("score")) cfg.score_adapter = detail::adapter_from_json(a["score"]);
    if (a.contains("optimize")) cfg.optimize_adapter = detail::adapter_from_json(a["optimize"]);
    if (a.contains("embed")) cfg.embed_adapter = detail::adapter_from_json(a["embed"]);
  }
  if (j.contains("cache_dir")) cfg.cache_dir = j["cache_dir"].get<std::string>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  return cfg;
}

inline std::unique_ptr<Gateway> make_gateway(const RunConfig& cfg, bool mock) {
  std::unique_ptr<Gateway> gw;
  if (mock) {
    MockSpec spec = cfg.mock;
    spec.seed = cfg.train.seed;
    gw = std::make_unique<MockGateway>(spec);
  } else {
    if (cfg.score_adapter.endpoint.empty()) {
      throw ConfigError("no score adapter configured; use --mock for offline runs");
    }
    gw = std::make_unique<HttpGateway>(cfg.score_adapter, cfg.optimize_adapter,
                                       cfg.embed_adapter);
  }
  if (!cfg.cache_dir.empty()) {
    std::filesystem::create_directories(cfg.cache_dir);
    gw->set_embedding_cache_file(cfg.cache_dir / "embeddings.jsonl");
  }
  return gw;
}

namespace detail {

inline void write_jsonl_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  for (const auto& e : d.examples) {
    nlohmann::json j;
    j["id"] = e.id;
    if (e.features.size() == 1 && e.features.front().first == "text") {
      j["text"] = e.features.front().second;
    } else {
      nlohmann::json f = nlohmann::json::object();
      for (const auto& [k, v] : e.features) f[k] = v;
      j["features"] = f;
    }
    if (e.label) j["label"] = d.classes.at(static_cast<std::size_t>(*e.label)).name;
    out << j.dump() << "\n";
  }
}

inline Dataset load_split_file(const RunConfig& cfg, const std::string& split_name) {
  return load_dataset(cfg.out_dir / (split_name + ".jsonl"), DatasetFormat::Jsonl, cfg.classes,
                      cfg.dataset_name, cfg.initial_prompt);
}

}  // namespace detail

inline int cmd_split(const RunConfig& cfg, std::ostream& os = std::cout) {
  Dataset d = load_dataset(cfg.dataset_path, cfg.dataset_format, cfg.classes, cfg.dataset_name,
                           cfg.initial_prompt);
  Splits s = split(d, cfg.split_spec);
  std::filesystem::create_directories(cfg.out_dir);
  detail::write_jsonl_dataset(s.train, cfg.out_dir / "train.jsonl");
  detail::write_jsonl_dataset(s.val, cfg.out_dir / "val.jsonl");
  detail::write_jsonl_dataset(s.test, cfg.out_dir / "test.jsonl");
  os << "split " << d.examples.size() << " examples into train=" << s.train.examples.size()
     << " val=" << s.val.examples.size() << " test=" << s.test.examples.size() << "\n";
  return 0;
}

inline int cmd_cluster(const RunConfig& cfg, Gateway& gw, std::ostream& os = std::cout) {
  Dataset train = detail::load_split_file(cfg, "train");
  EmbeddingMatrix m = embed_examples(train.examples, gw);
  for (auto& v : m.vectors) v = normalized(std::move(v));
  ClusterModel model = select_k(m, cfg.train.k_candidates, cfg.train.seed);
  nlohmann::json j{{"k", model.k},
                   {"silhouette", model.silhouette},
                   {"inertia", model.inertia},
                   {"centroids", model.centroids},
                   {"assignments", model.assignments}};
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream out(cfg.out_dir / "clusters.json");
  out << j.dump(2) << "\n";
  os << "selected k=" << model.k << " silhouette=" << model.silhouette << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, Gateway& gw, bool resume = false,
                     std::ostream& os = std::cout) {
  Dataset train = detail::load_split_file(cfg, "train");
  Dataset val = detail::load_split_file(cfg, "val");
  std::filesystem::create_directories(cfg.out_dir);
  gw.set_transcript(cfg.out_dir / "transcript.jsonl");

  auto ckpt_path = [&](int cluster_id) {
    return cfg.out_dir / ("checkpoint_cluster" + std::to_string(cluster_id) + ".json");
  };
  CheckpointSink sink = [&](const ExpertTrainState& state) {
    save_checkpoint(state, cfg.classes, cfg.train.seed, ckpt_path(state.cluster_id));
  };
  std::map<int, ExpertTrainState> resume_states;
  if (resume) {
    for (int c = 0; c < 16; ++c) {
      if (std::filesystem::exists(ckpt_path(c))) {
        resume_states[c] = load_checkpoint(ckpt_path(c), cfg.classes);
      }
    }
  }

  ExpertEnsemble ens = train_ensemble(train, val, cfg.train, gw, {}, sink,
                                      resume_states.empty() ? nullptr : &resume_states);
  save_ensemble(ens, cfg.out_dir / "ensemble.json", cfg.config_digest);
  os << "trained " << ens.experts.size() << " experts (k=" << ens.experts.size() << ")\n";
  for (const auto& e : ens.experts) {
    os << "  expert " << e.cluster_id << ": final validation F1 = "
       << (e.provenance.f1_trajectory.empty() ? 0.0 : e.provenance.f1_trajectory.back()) << "\n";
  }
  os << "ensemble written to " << (cfg.out_dir / "ensemble.json").string() << "\n";
  return 0;
}

inline int cmd_eval(const std::filesystem::path& ensemble_path,
                    const std::filesystem::path& data_path, Gateway& gw, int positive_class = 1,
                    const std::filesystem::path& report_path = {}, std::ostream& os = std::cout) {
  ExpertEnsemble ens = load_ensemble(ensemble_path);
  Dataset data = load_dataset(data_path, DatasetFormat::Jsonl, ens.classes);
  std::vector<std::optional<int>> preds;
  std::vector<int> golds;
  for (const auto& e : data.examples) {
    Prediction p = predict_detailed(ens, e, gw);
    preds.push_back(p.label);
    golds.push_back(*e.label);
  }
  EvalReport report =
      f1_binary(confusion(preds, golds, static_cast<int>(ens.classes.size())), positive_class);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << jsonio::to_json(report).dump(2) << "\n";
  }
  char line[160];
  os << "dataset               n     precision  recall     F1\n";
  std::snprintf(line, sizeof(line), "%-20s %5ld  %9.4f  %6.4f  %6.4f\n", data.name.c_str(),
                report.n_examples, report.precision, report.recall, report.f1);
  os << line;
  if (report.n_parse_failures > 0) {
    os << "warning: " << report.n_parse_failures << " abstentions counted as errors\n";
  }
  return 0;
}

inline int cmd_predict(const std::filesystem::path& ensemble_path,
                       const std::filesystem::path& input_path,
                       const std::filesystem::path& output_path, Gateway& gw,
                       int fallback_class = 0, std::ostream& os = std::cout) {
  ExpertEnsemble ens = load_ensemble(ensemble_path);
  std::ifstream in(input_path);
  if (!in) throw ParseError("cannot open input file " + input_path.string());
  std::ofstream out(output_path);
  std::string line;
  std::size_t line_no = 0, rows = 0, errors = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ParseError("line " + std::to_string(line_no) + ": invalid JSON record");
    }
    Example e;
    e.id = j.value("id", "row" + std::to_string(line_no));
    if (j.contains("text")) {
      e.features.emplace_back("text", j["text"].get<std::string>());
    } else if (j.contains("features")) {
      for (const auto& [k, v] : j["features"].items()) {
        e.features.emplace_back(k, v.get<std::string>());
      }
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": record has no text/features");
    }
    nlohmann::json row;
    row["id"] = e.id;
    try {
      Prediction p = predict_detailed(ens, e, gw);
      int label = p.label ? *p.label : fallback_class;
      row["label"] = ens.classes.at(static_cast<std::size_t>(label)).name;
      row["expert_id"] = p.expert_id;
      row["similarity"] = p.similarity;
    } catch (const ZeroVector& ex) {
      row["error"] = ex.what();
      ++errors;
    } catch (const DimensionMismatch& ex) {
      row["error"] = ex.what();
      ++errors;
    }
    out << row.dump() << "\n";
    ++rows;
  }
  if (rows == 0) os << "warning: input file " << input_path.string() << " is empty\n";
  os << "predicted " << rows << " rows, " << errors << " errors\n";
  return 0;
}

// Pretty-prints a constitution per expert, principles grouped under their
// class headings.
inline int cmd_inspect(const std::filesystem::path& ensemble_path, std::ostream& os = std::cout) {
  ExpertEnsemble ens = load_ensemble(ensemble_path);
  os << "ensemble: " << ens.experts.size() << " expert(s), embedding model "
     << ens.embedding_model_id << "\n";
  for (const auto& e : ens.experts) {
    os << "\n[Expert " << e.cluster_id << "]";
    if (!e.provenance.f1_trajectory.empty()) {
      os << " (" << e.provenance.f1_trajectory.back() << " F1)";
    }
    os << " " << e.constitution.task_description << "\n";
    for (const auto& cls : ens.classes) {
      const ClassPrinciples* entry = e.constitution.entry_for(cls.id);
      os << "  " << cls.name << ":\n";
      if (entry != nullptr) {
        for (const auto& p : entry->principles) os << "    - " << p << "\n";
      }
    }
  }
  return 0;
}

}  // namespace ce
