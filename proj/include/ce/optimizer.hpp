#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ce/clustering.hpp"
#include "ce/common.hpp"
#include "ce/data.hpp"
#include "ce/domain.hpp"
#include "ce/gateway.hpp"
#include "ce/metrics.hpp"
#include "ce/prompts.hpp"

namespace ce {

struct EmptyCandidates : Error {
  using Error::Error;
};
struct EmptyValidation : Error {
  using Error::Error;
};

// Scores one example with the constitution; nullopt = abstention.
inline std::optional<int> classify(const Constitution& c, const Example& e,
                                   const std::vector<ClassLabel>& classes, Gateway& gw,
                                   const MetapromptSet& = {}) {
  RenderedPrompt prompt = render_scoring_prompt(c, e, classes);
  std::string completion = gw.complete(LlmRole::Score, prompt.text);
  auto parsed = parse_answer(completion, classes);
  if (!parsed) return std::nullopt;
  return parsed->id;
}

// Scans a seeded permutation of the training set until n misclassifications
// are found or the scan budget runs out. Abstentions count as errors.
inline std::vector<std::pair<Example, std::optional<int>>> sample_errors(
    const Constitution& c, const Dataset& train, int n, std::uint64_t seed, Gateway& gw,
    int scan_budget = 64) {
  std::vector<std::pair<Example, std::optional<int>>> errors;
  if (train.examples.empty() || n <= 0) return errors;
  std::vector<std::size_t> order(train.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed_mix(seed, "sample_errors"));
  rng.shuffle(order);

  int scanned = 0;
  for (std::size_t idx : order) {
    if (scanned >= scan_budget || static_cast<int>(errors.size()) >= n) break;
    const Example& e = train.examples[idx];
    ++scanned;
    auto pred = classify(c, e, train.classes, gw);
    if (!pred || *pred != *e.label) {
      errors.emplace_back(e, pred);
    }
  }
  return errors;
}

namespace detail {

inline std::string constitution_key(const Constitution& c) {
  std::uint64_t h = fnv1a64(c.task_description);
  for (const auto& e : c.entries) {
    h = fnv1a64("#" + std::to_string(e.class_id), h);
    for (const auto& p : e.principles) h = fnv1a64("|" + p, h);
  }
  return hex64(h);
}

}  // namespace detail

// One feedback + mutation round per error: explain the mistake, enumerate
// the mutation menu, parse up to m proposed ops, apply each. Unparseable or
// invalid proposals are skipped; duplicates (text-equal constitutions) and
// no-op candidates are dropped.
inline std::vector<Constitution> propose_candidates(const Constitution& c,
                                                    const std::vector<std::pair<Example, std::optional<int>>>& errors,
                                                    int m, const std::vector<ClassLabel>& classes,
                                                    Gateway& gw,
                                                    const MetapromptSet& templates = {}) {
  std::vector<Constitution> out;
  std::set<std::string> seen;
  seen.insert(detail::constitution_key(c));
  for (const auto& [example, predicted] : errors) {
    std::string feedback_prompt = render_feedback_prompt(c, example, predicted, classes, templates);
    std::string explanation = trim(gw.complete(LlmRole::Optimize, feedback_prompt));
    if (explanation.empty()) continue;
    Feedback fb;
    fb.example_id = example.id;
    fb.predicted = predicted;
    fb.gold = *example.label;
    fb.explanation = explanation;

    MutationMenu menu = MutationMenu::for_constitution(c, classes);
    std::string mutation_prompt =
        render_mutation_prompt(c, example, fb, menu, classes, m, templates);
    std::string completion = gw.complete(LlmRole::Optimize, mutation_prompt);

    int taken = 0;
    std::size_t start = 0;
    while (start <= completion.size() && taken < m) {
      std::size_t nl = completion.find('\n', start);
      std::string line = completion.substr(
          start, nl == std::string::npos ? std::string::npos : nl - start);
      start = nl == std::string::npos ? completion.size() + 1 : nl + 1;
      if (trim(line).empty()) continue;
      try {
        MutationOp op = parse_mutation(line, menu);
        Constitution candidate = apply_mutation(c, op);
        validate_constitution(candidate, classes);
        ++taken;
        if (seen.insert(detail::constitution_key(candidate)).second) {
          out.push_back(std::move(candidate));
        }
      } catch (const MutationParseError&) {
        // discarded; the optimizer model gave an unusable line
      } catch (const IndexOutOfRange&) {
      } catch (const OversizedPrinciple&) {
      } catch (const EmptyPrincipleText&) {
      }
    }
  }
  return out;
}

struct ArmStats {
  long pulls = 0;
  long scored = 0;
  long correct = 0;

  double mean() const { return scored == 0 ? 0.0 : static_cast<double>(correct) / scored; }
};

struct UcbResult {
  std::vector<std::size_t> ranking;  // candidate indices, best first
  std::vector<ArmStats> stats;
};

namespace detail {

// Ranking order: higher mean, then fewer principles, then lower index.
inline bool ranks_before(const std::vector<Constitution>& cands,
                         const std::vector<ArmStats>& stats, std::size_t a, std::size_t b) {
  double ma = stats[a].mean(), mb = stats[b].mean();
  if (ma != mb) return ma > mb;
  std::size_t pa = cands[a].principle_count(), pb = cands[b].principle_count();
  if (pa != pb) return pa < pb;
  return a < b;
}

}  // namespace detail

// UCB bandit over candidate constitutions. Each pull scores one seeded random
// minibatch of the validation set; per-round choice maximizes
// mean + c * sqrt(ln(total pulls) / arm pulls), unpulled arms first in index
// order. Returns arms ranked by empirical mean accuracy.
inline UcbResult ucb_select_detailed(const std::vector<Constitution>& candidates,
                                     const Dataset& val, const BanditConfig& cfg,
                                     std::uint64_t seed, Gateway& gw) {
  if (candidates.empty()) throw EmptyCandidates("ucb_select: no candidates");
  if (val.examples.empty()) throw EmptyValidation("ucb_select: empty validation set");

  const int rounds = cfg.rounds > 0 ? cfg.rounds : 20 * static_cast<int>(candidates.size());
  const std::size_t batch =
      std::min(static_cast<std::size_t>(std::max(cfg.minibatch_size, 1)), val.examples.size());
  Rng rng(seed_mix(seed, "ucb"));

  UcbResult r;
  r.stats.assign(candidates.size(), ArmStats{});
  for (int t = 1; t <= rounds; ++t) {
    std::size_t arm = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (r.stats[i].pulls == 0) {
        arm = i;
        break;
      }
    }
    if (arm == candidates.size()) {
      double best = -std::numeric_limits<double>::max();
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        double score = r.stats[i].mean() +
                       cfg.exploration * std::sqrt(std::log(static_cast<double>(t)) /
                                                   static_cast<double>(r.stats[i].pulls));
        if (score > best) {
          best = score;
          arm = i;
        }
      }
    }

    auto batch_idx = rng.sample_indices(val.examples.size(), batch);
    long correct = 0;
    for (std::size_t idx : batch_idx) {
      const Example& e = val.examples[idx];
      auto pred = classify(candidates[arm], e, val.classes, gw);
      if (pred && *pred == *e.label) ++correct;
    }
    r.stats[arm].pulls += 1;
    r.stats[arm].scored += static_cast<long>(batch_idx.size());
    r.stats[arm].correct += correct;
  }

  r.ranking.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) r.ranking[i] = i;
  std::sort(r.ranking.begin(), r.ranking.end(), [&](std::size_t a, std::size_t b) {
    return detail::ranks_before(candidates, r.stats, a, b);
  });
  return r;
}

inline std::vector<Constitution> ucb_select(const std::vector<Constitution>& candidates,
                                            const Dataset& val, const BanditConfig& cfg, int b,
                                            std::uint64_t seed, Gateway& gw) {
  UcbResult r = ucb_select_detailed(candidates, val, cfg, seed, gw);
  std::vector<Constitution> out;
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(b, 0)),
                                                 candidates.size());
  for (std::size_t i = 0; i < keep; ++i) out.push_back(candidates[r.ranking[i]]);
  return out;
}

// Full-validation F1 of one constitution (positive class from cfg).
inline double full_validation_f1(const Constitution& c, const Dataset& val,
                                 const std::vector<ClassLabel>& classes, int positive,
                                 Gateway& gw) {
  std::vector<std::optional<int>> preds;
  std::vector<int> golds;
  preds.reserve(val.examples.size());
  for (const auto& e : val.examples) {
    preds.push_back(classify(c, e, classes, gw));
    golds.push_back(*e.label);
  }
  return f1_binary(confusion(preds, golds, static_cast<int>(classes.size())), positive).f1;
}

// Resumable per-cluster training state: the surviving beam plus bookkeeping.
struct ExpertTrainState {
  int cluster_id = 0;
  int iteration = 0;  // iterations completed so far
  std::vector<Constitution> beam;
  std::vector<double> f1_trajectory;
  std::vector<ArmStats> last_stats;
};

// B initial constitutions: slot 0 turns the seed question into one principle
// per class; further slots use optimizer-paraphrased variants.
inline std::vector<Constitution> initial_beam(const std::string& initial_prompt,
                                              const std::vector<ClassLabel>& classes, int b,
                                              Gateway& gw, const MetapromptSet& templates = {}) {
  std::vector<Constitution> beam;
  for (int slot = 0; slot < b; ++slot) {
    std::string text = initial_prompt;
    if (slot > 0) {
      std::string prompt = render_template(
          templates.paraphrase,
          {{"variant", std::to_string(slot + 1)}, {"question", initial_prompt}});
      std::string completion = trim(gw.complete(LlmRole::Optimize, prompt));
      if (!completion.empty()) text = completion;
    }
    if (text.size() > kMaxPrincipleLength) text.resize(kMaxPrincipleLength);
    Constitution c;
    c.task_description = initial_prompt;
    for (const auto& cls : classes) {
      c.entries.push_back({cls.id, {text}});
    }
    beam.push_back(std::move(c));
  }
  return beam;
}

inline ExpertTrainState init_expert_training(const Dataset& cluster_train, int cluster_id,
                                             const std::string& initial_prompt,
                                             const TrainConfig& cfg, Gateway& gw,
                                             const MetapromptSet& templates = {}) {
  ExpertTrainState state;
  state.cluster_id = cluster_id;
  state.beam = initial_beam(initial_prompt, cluster_train.classes, cfg.beam, gw, templates);
  return state;
}

// One optimization iteration: expand every beam member through feedback and
// mutation, pool parents with children (elitism), keep the bandit's top B.
inline void expert_training_step(ExpertTrainState& state, const Dataset& cluster_train,
                                 const Dataset& cluster_val, const TrainConfig& cfg, Gateway& gw,
                                 const MetapromptSet& templates = {}) {
  const int iter = state.iteration;
  std::vector<Constitution> pool = state.beam;
  std::set<std::string> seen;
  for (const auto& c : pool) seen.insert(detail::constitution_key(c));

  for (std::size_t member = 0; member < state.beam.size(); ++member) {
    const Constitution& parent = state.beam[member];
    auto errors = sample_errors(
        parent, cluster_train, cfg.n_errors,
        seed_mix(cfg.seed, "errors", static_cast<std::uint64_t>(state.cluster_id),
                 static_cast<std::uint64_t>(iter), member),
        gw, cfg.error_scan_budget);
    if (errors.empty()) continue;
    auto children =
        propose_candidates(parent, errors, cfg.m_mutations, cluster_train.classes, gw, templates);
    for (auto& child : children) {
      if (seen.insert(detail::constitution_key(child)).second) {
        pool.push_back(std::move(child));
      }
    }
  }

  UcbResult selection = ucb_select_detailed(
      pool, cluster_val, cfg.bandit,
      seed_mix(cfg.seed, "select", static_cast<std::uint64_t>(state.cluster_id),
               static_cast<std::uint64_t>(iter)),
      gw);
  std::vector<Constitution> survivors;
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.beam), pool.size());
  for (std::size_t i = 0; i < keep; ++i) survivors.push_back(pool[selection.ranking[i]]);
  state.beam = std::move(survivors);
  state.last_stats = std::move(selection.stats);

  double best_f1 = 0.0;
  for (const auto& c : state.beam) {
    best_f1 = std::max(best_f1, full_validation_f1(c, cluster_val, cluster_val.classes,
                                                   cfg.positive_class, gw));
  }
  state.f1_trajectory.push_back(best_f1);
  state.iteration += 1;
}

// Final expert: best beam member by full-validation F1, ties by fewer
// principles then lower index.
inline Expert finish_expert_training(const ExpertTrainState& state, const Dataset& cluster_val,
                                     const TrainConfig& cfg, Gateway& gw) {
  std::size_t best = 0;
  double best_f1 = -1.0;
  for (std::size_t i = 0; i < state.beam.size(); ++i) {
    double f1 = full_validation_f1(state.beam[i], cluster_val, cluster_val.classes,
                                   cfg.positive_class, gw);
    bool better = f1 > best_f1 ||
                  (f1 == best_f1 &&
                   state.beam[i].principle_count() < state.beam[best].principle_count());
    if (i == 0 || better) {
      best = i;
      best_f1 = f1;
    }
  }
  Expert expert;
  expert.cluster_id = state.cluster_id;
  expert.constitution = state.beam[best];
  expert.provenance.iterations = state.iteration;
  expert.provenance.f1_trajectory = state.f1_trajectory;
  return expert;
}

using CheckpointSink = std::function<void(const ExpertTrainState&)>;

inline Expert train_expert(const Dataset& cluster_train, const Dataset& cluster_val,
                           const std::string& initial_prompt, const TrainConfig& cfg, Gateway& gw,
                           int cluster_id = 0, const MetapromptSet& templates = {},
                           const CheckpointSink& checkpoint = {},
                           std::optional<ExpertTrainState> resume_from = std::nullopt) {
  if (cluster_train.examples.empty()) throw EmptyDataset("train_expert: empty training cluster");
  if (cluster_val.examples.empty()) throw EmptyValidation("train_expert: empty validation set");
  ExpertTrainState state =
      resume_from ? std::move(*resume_from)
                  : init_expert_training(cluster_train, cluster_id, initial_prompt, cfg, gw,
                                         templates);
  while (state.iteration < cfg.iterations) {
    expert_training_step(state, cluster_train, cluster_val, cfg, gw, templates);
    if (checkpoint) checkpoint(state);
  }
  return finish_expert_training(state, cluster_val, cfg, gw);
}

// End-to-end training: embed, pick k by silhouette, partition both splits by
// nearest centroid, train one expert per cluster. A cluster whose validation
// partition is empty falls back to the global validation set.
inline ExpertEnsemble train_ensemble(const Dataset& train, const Dataset& val,
                                     const TrainConfig& cfg, Gateway& gw,
                                     const MetapromptSet& templates = {},
                                     const CheckpointSink& checkpoint = {},
                                     const std::map<int, ExpertTrainState>* resume = nullptr) {
  EmbeddingMatrix m = embed_examples(train.examples, gw);
  for (auto& v : m.vectors) v = normalized(std::move(v));

  ClusterModel model = select_k(m, cfg.k_candidates, cfg.seed);

  std::map<std::string, std::vector<double>> train_embeddings;
  for (std::size_t i = 0; i < m.size(); ++i) train_embeddings[m.ids[i]] = m.vectors[i];
  std::vector<Dataset> train_parts = partition_by_cluster(train, model, train_embeddings);

  EmbeddingMatrix mv = embed_examples(val.examples, gw);
  for (auto& v : mv.vectors) v = normalized(std::move(v));
  std::map<std::string, std::vector<double>> val_embeddings;
  for (std::size_t i = 0; i < mv.size(); ++i) val_embeddings[mv.ids[i]] = mv.vectors[i];
  std::vector<Dataset> val_parts = partition_by_cluster(val, model, val_embeddings);

  ExpertEnsemble ens;
  ens.embedding_model_id = m.model_id;
  ens.classes = train.classes;
  for (int c = 0; c < model.k; ++c) {
    const Dataset& cluster_train = train_parts[static_cast<std::size_t>(c)];
    const Dataset& cluster_val = val_parts[static_cast<std::size_t>(c)].examples.empty()
                                     ? val
                                     : val_parts[static_cast<std::size_t>(c)];
    std::optional<ExpertTrainState> resume_state;
    if (resume) {
      auto it = resume->find(c);
      if (it != resume->end()) resume_state = it->second;
    }
    Expert expert = train_expert(cluster_train, cluster_val, train.initial_prompt, cfg, gw, c,
                                 templates, checkpoint, std::move(resume_state));
    expert.centroid = normalized(model.centroids[static_cast<std::size_t>(c)]);
    ens.experts.push_back(std::move(expert));
  }
  return ens;
}

struct Prediction {
  std::optional<int> label;  // abstention preserved; callers map to fallback
  std::size_t expert_id = 0;
  double similarity = 0.0;
};

inline Prediction predict_detailed(const ExpertEnsemble& ens, const Example& e, Gateway& gw) {
  auto vectors = gw.embed({example_text(e)});
  Prediction p;
  p.expert_id = route(vectors[0], ens);
  p.similarity = cosine_similarity(vectors[0], ens.experts[p.expert_id].centroid);
  p.label = classify(ens.experts[p.expert_id].constitution, e, ens.classes, gw);
  return p;
}

// MoE inference: embed, route to nearest centroid, classify with that
// expert's constitution. Abstentions map to the configured fallback class.
inline int predict(const ExpertEnsemble& ens, const Example& e, Gateway& gw,
                   int fallback_class = 0, long* abstention_counter = nullptr) {
  Prediction p = predict_detailed(ens, e, gw);
  if (!p.label) {
    if (abstention_counter) ++*abstention_counter;
    return fallback_class;
  }
  return *p.label;
}

}  // namespace ce
