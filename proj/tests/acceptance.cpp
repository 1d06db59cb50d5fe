// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Everything runs offline against the deterministic mock gateway.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ce/cli.hpp"
#include "ce/clustering.hpp"
#include "ce/metrics.hpp"
#include "ce/mock.hpp"
#include "ce/optimizer.hpp"
#include "ce/prompts.hpp"
#include "ce/serialize.hpp"
#include "toy_task.hpp"

using namespace ce;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& what) {
  std::printf("criterion %d: %s - %s\n", criterion, pass ? "PASS" : "FAIL", what.c_str());
  if (!pass) ++failures;
}

double ensemble_test_f1(const ExpertEnsemble& ens, const Dataset& test, Gateway& gw) {
  std::vector<std::optional<int>> preds;
  std::vector<int> golds;
  for (const auto& e : test.examples) {
    preds.push_back(predict_detailed(ens, e, gw).label);
    golds.push_back(*e.label);
  }
  return f1_binary(confusion(preds, golds, 2), 1).f1;
}

double constitution_f1(const Constitution& c, const Dataset& data, Gateway& gw) {
  std::vector<std::optional<int>> preds;
  std::vector<int> golds;
  for (const auto& e : data.examples) {
    preds.push_back(classify(c, e, data.classes, gw));
    golds.push_back(*e.label);
  }
  return f1_binary(confusion(preds, golds, 2), 1).f1;
}

double exact_accuracy(const Constitution& c, const Dataset& val, Gateway& gw) {
  long correct = 0;
  for (const auto& e : val.examples) {
    auto pred = classify(c, e, val.classes, gw);
    if (pred && *pred == *e.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.examples.size());
}

// 1. Mock end-to-end learning: F1 >= 0.90 from <= 0.60, < 60 s, deterministic.
void criterion_1() {
  Dataset train = toy::make_dataset(10, 101, "train");  // 40
  Dataset val = toy::make_dataset(5, 102, "val");       // 20
  Dataset test = toy::make_dataset(5, 103, "test");     // 20
  TrainConfig cfg;  // defaults: N=3, M=2, B=3, J=5
  cfg.seed = 1;

  auto started = std::chrono::steady_clock::now();
  std::vector<std::string> digests;
  double final_f1 = 0.0, initial_f1 = 1.0;
  for (int run = 0; run < 2; ++run) {
    MockGateway gw(toy::mock_spec());
    auto beam = initial_beam(train.initial_prompt, train.classes, 1, gw);
    initial_f1 = constitution_f1(beam[0], test, gw);
    ExpertEnsemble ens = train_ensemble(train, val, cfg, gw);
    digests.push_back(ensemble_digest(ens));
    final_f1 = ensemble_test_f1(ens, test, gw);
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                       .count();

  bool pass = final_f1 >= 0.90 && initial_f1 <= 0.60 && seconds < 60.0 &&
              digests[0] == digests[1];
  std::ostringstream what;
  what << "end-to-end learning: initial F1 " << initial_f1 << " (<= 0.60), final F1 " << final_f1
       << " (>= 0.90), " << seconds << " s (< 60), digests "
       << (digests[0] == digests[1] ? "identical" : "DIFFER");
  report(1, pass, what.str());
}

// 2. ucb_select with a full-evaluation budget equals the exhaustive ranking.
void criterion_2() {
  const std::vector<std::string> fragments = {
      "The example mentions \"attack\".",  "The text contains the word \"attack\".",
      "The example mentions \"calm\".",    "The text contains the word \"calm\".",
      "The comment is about sports.",      "The comment is about finance.",
  };
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(seed_mix(500, "c2", static_cast<std::uint64_t>(trial)));
    MockGateway gw(toy::mock_spec());
    Dataset val = toy::make_dataset(2 + static_cast<int>(rng.index(11)),
                                    600 + static_cast<std::uint64_t>(trial));  // 8..48 examples
    std::size_t pool_size = 2 + rng.index(4);  // 2..5
    std::vector<Constitution> candidates;
    for (std::size_t i = 0; i < pool_size; ++i) {
      Constitution c;
      c.task_description = val.initial_prompt;
      c.entries = {{0, {val.initial_prompt}}, {1, {val.initial_prompt}}};
      std::size_t extras = rng.index(3);
      for (std::size_t f = 0; f < extras; ++f) {
        int cls = static_cast<int>(rng.index(2));
        c.entries[static_cast<std::size_t>(cls)].principles.push_back(
            fragments[rng.index(fragments.size())]);
      }
      candidates.push_back(std::move(c));
    }

    BanditConfig cfg;
    cfg.minibatch_size = static_cast<int>(val.examples.size());
    cfg.rounds = static_cast<int>(pool_size) * 2;
    int b = 1 + static_cast<int>(rng.index(pool_size));
    auto kept = ucb_select(candidates, val, cfg, b, static_cast<std::uint64_t>(trial), gw);

    // exhaustive oracle: full-validation accuracy, ties by fewer principles
    // then lower index
    std::vector<double> acc;
    for (const auto& c : candidates) acc.push_back(exact_accuracy(c, val, gw));
    std::vector<std::size_t> order(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (acc[x] != acc[y]) return acc[x] > acc[y];
      if (candidates[x].principle_count() != candidates[y].principle_count()) {
        return candidates[x].principle_count() < candidates[y].principle_count();
      }
      return x < y;
    });
    bool match = static_cast<int>(kept.size()) == b;
    for (int i = 0; match && i < b; ++i) {
      match = kept[static_cast<std::size_t>(i)] == candidates[order[static_cast<std::size_t>(i)]];
    }
    if (!match) ++violations;
  }
  report(2, violations == 0,
         "selection-oracle equivalence over 100 randomized trials, " +
             std::to_string(violations) + " violations");
}

// 3. Best beam F1 is non-decreasing over J=5 iterations, 100 seeded runs.
void criterion_3() {
  int violations = 0;
  for (int run = 0; run < 100; ++run) {
    MockGateway gw(toy::mock_spec());
    Dataset train = toy::make_dataset(4, 700 + static_cast<std::uint64_t>(run), "train");
    Dataset val = toy::make_dataset(3, 800 + static_cast<std::uint64_t>(run), "val");
    TrainConfig cfg;
    cfg.iterations = 5;
    cfg.seed = static_cast<std::uint64_t>(run);
    cfg.bandit.minibatch_size = static_cast<int>(val.examples.size());  // full evaluation
    cfg.bandit.rounds = 60;  // >= any pool size (beam 3 + 3*3*2 children)
    Expert expert = train_expert(train, val, train.initial_prompt, cfg, gw);
    const auto& traj = expert.provenance.f1_trajectory;
    if (traj.size() != 5) ++violations;
    for (std::size_t i = 1; i < traj.size(); ++i) {
      if (traj[i] < traj[i - 1]) {
        ++violations;
        break;
      }
    }
  }
  report(3, violations == 0,
         "monotone best-F1 trajectory over J=5 in 100 runs, " + std::to_string(violations) +
             " violations");
}

// 4. select_k recovers the generating blob count; kmeans matches the
// enumeration oracle on the 4-point case.
void criterion_4() {
  int hits = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed_mix(900, "c4", static_cast<std::uint64_t>(trial)));
    int true_k = 2 + static_cast<int>(rng.index(2));
    // blob centers far apart relative to the intra-blob spread, and angularly
    // separated so the cosine silhouette sees them as distinct directions
    const double spread = 0.2;
    std::vector<std::vector<double>> centers = {{10.0, 0.0}, {0.0, 10.0}, {7.07, 7.07}};
    EmbeddingMatrix m;
    m.model_id = "synthetic";
    int id = 0;
    for (int b = 0; b < true_k; ++b) {
      for (int i = 0; i < 10; ++i) {
        m.ids.push_back("p" + std::to_string(id++));
        m.vectors.push_back({centers[static_cast<std::size_t>(b)][0] +
                                 (rng.uniform01() - 0.5) * spread,
                             centers[static_cast<std::size_t>(b)][1] +
                                 (rng.uniform01() - 0.5) * spread});
      }
    }
    ClusterModel model = select_k(m, {2, 3}, static_cast<std::uint64_t>(trial));
    if (model.k == true_k) ++hits;
  }

  // 4-point exhaustive case: enumerate every 2-way partition
  EmbeddingMatrix m4;
  m4.model_id = "synthetic";
  std::vector<std::vector<double>> pts = {{0, 0}, {0, 1}, {10, 10}, {10, 11}};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m4.ids.push_back("q" + std::to_string(i));
    m4.vectors.push_back(pts[i]);
  }
  double best_inertia = 1e300;
  std::vector<int> best_assign;
  for (int mask = 1; mask < 15; ++mask) {  // both clusters non-empty
    std::vector<std::vector<double>> mean(2, std::vector<double>(2, 0.0));
    std::vector<int> cnt(2, 0);
    for (int i = 0; i < 4; ++i) {
      int c = (mask >> i) & 1;
      ++cnt[static_cast<std::size_t>(c)];
      mean[static_cast<std::size_t>(c)][0] += pts[static_cast<std::size_t>(i)][0];
      mean[static_cast<std::size_t>(c)][1] += pts[static_cast<std::size_t>(i)][1];
    }
    for (int c = 0; c < 2; ++c) {
      mean[static_cast<std::size_t>(c)][0] /= cnt[static_cast<std::size_t>(c)];
      mean[static_cast<std::size_t>(c)][1] /= cnt[static_cast<std::size_t>(c)];
    }
    double inertia = 0.0;
    for (int i = 0; i < 4; ++i) {
      int c = (mask >> i) & 1;
      double dx = pts[static_cast<std::size_t>(i)][0] - mean[static_cast<std::size_t>(c)][0];
      double dy = pts[static_cast<std::size_t>(i)][1] - mean[static_cast<std::size_t>(c)][1];
      inertia += dx * dx + dy * dy;
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assign.clear();
      for (int i = 0; i < 4; ++i) best_assign.push_back((mask >> i) & 1);
    }
  }
  ClusterModel four = kmeans(m4, 2, 42);
  bool four_ok = std::abs(four.inertia - best_inertia) < 1e-9;
  for (int i = 0; i < 4 && four_ok; ++i) {
    for (int j = 0; j < 4; ++j) {
      bool same_oracle = best_assign[static_cast<std::size_t>(i)] ==
                         best_assign[static_cast<std::size_t>(j)];
      bool same_model = four.assignments["q" + std::to_string(i)] ==
                        four.assignments["q" + std::to_string(j)];
      if (same_oracle != same_model) four_ok = false;
    }
  }

  report(4, hits >= 95 && four_ok,
         "select_k recovered the generating k in " + std::to_string(hits) +
             "/100 trials (need >= 95); 4-point enumeration oracle " +
             (four_ok ? "matched" : "MISMATCHED"));
}

// 5. route == brute-force cosine argmax, scale-invariant, 1,000 instances.
void criterion_5() {
  int violations = 0;
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t dim = 2 + rng.index(7);
    std::size_t n_centroids = 1 + rng.index(6);
    ExpertEnsemble ens;
    for (std::size_t c = 0; c < n_centroids; ++c) {
      Expert e;
      e.cluster_id = static_cast<int>(c);
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.uniform01() - 0.5;
      if (norm(v) == 0.0) v[0] = 1.0;
      e.centroid = normalized(v);
      ens.experts.push_back(std::move(e));
    }
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.uniform01() - 0.5;
    if (norm(v) == 0.0) v[0] = 1.0;

    std::size_t got = route(v, ens);
    double best = -2.0;
    std::size_t want = 0;
    for (std::size_t c = 0; c < n_centroids; ++c) {
      double sim = cosine_similarity(v, ens.experts[c].centroid);
      if (sim > best) {
        best = sim;
        want = c;
      }
    }
    std::vector<double> scaled = v;
    for (auto& x : scaled) x *= 7.3;
    if (got != want || route(scaled, ens) != got) ++violations;
  }
  report(5, violations == 0,
         "routing matched brute-force cosine argmax (with 7.3x scale checks) on 1000 "
         "instances, " + std::to_string(violations) + " violations");
}

// 6. Metrics oracles: F1 vs hand tally (200 instances); exact Wilcoxon.
void criterion_6() {
  Rng rng(55);
  int f1_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.index(30);
    std::vector<std::optional<int>> preds;
    std::vector<int> golds;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t p = rng.index(3);
      preds.push_back(p == 2 ? std::optional<int>{} : std::optional<int>{static_cast<int>(p)});
      golds.push_back(static_cast<int>(rng.index(2)));
    }
    // independent tally straight from the raw pairs
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (preds[i] && *preds[i] == 1) {
        (golds[i] == 1 ? tp : fp) += 1;
      } else if (golds[i] == 1) {
        fn += 1;  // wrong class or abstention on a positive
      }
    }
    double prec = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    double rec = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
    double want = (prec + rec) == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    EvalReport r = f1_binary(confusion(preds, golds, 2), 1);
    if (r.f1 != want || r.precision != prec || r.recall != rec) ++f1_violations;
  }

  // six all-positive differences: p must be exactly 1/64
  std::vector<std::pair<double, double>> six;
  for (int i = 1; i <= 6; ++i) six.emplace_back(static_cast<double>(i), 0.0);
  WilcoxonResult wsix = wilcoxon_signed_rank(six);
  bool six_ok = wsix.one_sided_p == 1.0 / 64.0;

  // full enumeration oracle for every n <= 12
  int w_violations = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    std::vector<std::pair<double, double>> pairs;
    std::vector<double> diffs;
    for (std::size_t i = 0; i < n; ++i) {
      // small integer differences force plenty of rank ties
      double d = static_cast<double>(1 + rng.index(4)) * (rng.index(2) ? 1.0 : -1.0);
      pairs.emplace_back(d, 0.0);
      diffs.push_back(d);
    }
    // independent oracle: rank by |d| with average ranks, enumerate signs
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(diffs[a]) < std::abs(diffs[b]);
    });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
      for (std::size_t k = i; k <= j; ++k) {
        rank[order[k]] = static_cast<double>(i + j + 2) / 2.0;
      }
      i = j + 1;
    }
    double w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (diffs[i] > 0.0) w_plus += rank[i];
    }
    std::uint64_t at_least = 0;
    const std::uint64_t total = 1ull << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double w = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1ull << i)) w += rank[i];
      }
      if (w >= w_plus - 1e-12) ++at_least;
    }
    double want_p = static_cast<double>(at_least) / static_cast<double>(total);
    WilcoxonResult got = wilcoxon_signed_rank(pairs);
    if (std::abs(got.statistic - w_plus) > 1e-12 || std::abs(got.one_sided_p - want_p) > 1e-12) {
      ++w_violations;
    }
  }

  report(6, f1_violations == 0 && six_ok && w_violations == 0,
         "F1 oracle: " + std::to_string(f1_violations) + "/200 violations; p(6 positives) " +
             std::string(six_ok ? "== 1/64" : "!= 1/64") + "; enumeration oracle n<=12: " +
             std::to_string(w_violations) + " violations");
}

// 7. Every accepted mutation candidate differs from its parent in exactly one
// principle slot.
void criterion_7() {
  auto principle_multiset = [](const Constitution& c) {
    std::multiset<std::pair<int, std::string>> out;
    for (const auto& e : c.entries) {
      for (const auto& p : e.principles) out.emplace(e.class_id, p);
    }
    return out;
  };

  int checked = 0, violations = 0;
  std::uint64_t seed = 0;
  while (checked < 1000) {
    ++seed;
    MockGateway gw(toy::mock_spec());
    Dataset train = toy::make_dataset(3, 2000 + seed);
    Rng rng(seed_mix(seed, "c7"));
    Constitution parent;
    parent.task_description = train.initial_prompt;
    parent.entries = {{0, {train.initial_prompt}}, {1, {train.initial_prompt}}};
    // vary the parent so edits and deletes get exercised too
    for (std::size_t extra = rng.index(3); extra > 0; --extra) {
      parent.entries[rng.index(2)].principles.push_back(
          "Extra rule " + std::to_string(rng.next() % 100) + ".");
    }
    auto errors = sample_errors(parent, train, 3, seed, gw, 1000);
    if (errors.empty()) continue;
    auto children = propose_candidates(parent, errors, 2, train.classes, gw);
    auto parent_set = principle_multiset(parent);
    for (const auto& child : children) {
      auto child_set = principle_multiset(child);
      std::size_t diff = 0;
      for (const auto& p : parent_set) diff += parent_set.count(p) > child_set.count(p) ? 1 : 0;
      for (const auto& p : child_set) diff += child_set.count(p) > parent_set.count(p) ? 1 : 0;
      long count_delta = static_cast<long>(child.principle_count()) -
                         static_cast<long>(parent.principle_count());
      if (diff == 0 || diff > 2 || count_delta < -1 || count_delta > 1 ||
          child.task_description != parent.task_description) {
        ++violations;
      }
      ++checked;
    }
  }
  report(7, violations == 0,
         "mutation locality over " + std::to_string(checked) + " candidates, " +
             std::to_string(violations) + " violations");
}

// 8. Scoring prompt byte-matches the golden template file.
void criterion_8() {
  std::ifstream in(std::string(CE_TEST_DIR) + "/golden/scoring_prompt.txt", std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  Constitution c;
  c.task_description = "Does the example contain toxic speech?";
  c.entries = {{0, {"The comment is not hateful."}}, {1, {"The comment is hateful."}}};
  Example e;
  e.id = "e0";
  e.features.emplace_back("text", "x");
  e.label = 1;
  RenderedPrompt p = render_scoring_prompt(c, e, toy::classes());
  bool pass = in.good() && !buf.str().empty() && p.text == buf.str();
  report(8, pass, std::string("scoring prompt ") +
                      (pass ? "byte-matches" : "does NOT match") + " the golden file");
}

// 9. Persistence: 50 randomized round-trips; checkpoint-resume digest equality.
void criterion_9() {
  namespace fs = std::filesystem;
  Rng rng(77);
  int rt_violations = 0;
  auto path = fs::temp_directory_path() / "ce_accept_ens.json";
  for (int trial = 0; trial < 50; ++trial) {
    ExpertEnsemble ens;
    ens.embedding_model_id = "mock-embed-" + std::to_string(8 + rng.index(24));
    ens.classes = toy::classes();
    std::size_t n_experts = 1 + rng.index(4);
    std::size_t dim = 2 + rng.index(6);
    for (std::size_t c = 0; c < n_experts; ++c) {
      Expert e;
      e.cluster_id = static_cast<int>(c);
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.uniform01() - 0.5;
      if (norm(v) == 0.0) v[0] = 1.0;
      e.centroid = normalized(v);
      e.constitution.task_description = "task " + std::to_string(rng.next() % 1000);
      for (const auto& cls : ens.classes) {
        ClassPrinciples entry{cls.id, {}};
        for (std::size_t p = rng.index(4); p > 0; --p) {
          entry.principles.push_back("principle " + std::to_string(rng.next() % 10000));
        }
        e.constitution.entries.push_back(std::move(entry));
      }
      e.provenance.iterations = static_cast<int>(rng.index(6));
      for (int i = 0; i < e.provenance.iterations; ++i) {
        e.provenance.f1_trajectory.push_back(rng.uniform01());
      }
      ens.experts.push_back(std::move(e));
    }
    save_ensemble(ens, path, hex64(rng.next()));
    if (load_ensemble(path) != ens) ++rt_violations;
  }

  // checkpoint-resume: a run interrupted after 2 iterations, persisted to
  // disk, and resumed must reproduce the uninterrupted run's digest
  Dataset train = toy::make_dataset(6, 51, "train");
  Dataset val = toy::make_dataset(4, 52, "val");
  TrainConfig cfg;
  cfg.seed = 9;
  cfg.iterations = 5;

  std::string straight_digest, resumed_digest;
  {
    MockGateway gw(toy::mock_spec());
    straight_digest = ensemble_digest(train_ensemble(train, val, cfg, gw));
  }
  {
    auto ckpt_dir = fs::temp_directory_path() / "ce_accept_ckpt";
    fs::remove_all(ckpt_dir);
    fs::create_directories(ckpt_dir);
    auto ckpt_path = [&](int cluster) {
      return ckpt_dir / ("cluster" + std::to_string(cluster) + ".json");
    };
    TrainConfig partial = cfg;
    partial.iterations = 2;
    CheckpointSink sink = [&](const ExpertTrainState& s) {
      save_checkpoint(s, train.classes, cfg.seed, ckpt_path(s.cluster_id));
    };
    {
      MockGateway gw(toy::mock_spec());
      train_ensemble(train, val, partial, gw, {}, sink);
    }
    std::map<int, ExpertTrainState> resume;
    for (int c = 0; c < 16; ++c) {
      if (fs::exists(ckpt_path(c))) resume[c] = load_checkpoint(ckpt_path(c), train.classes);
    }
    MockGateway gw(toy::mock_spec());
    resumed_digest = ensemble_digest(train_ensemble(train, val, cfg, gw, {}, {}, &resume));
  }
  bool resume_ok = !straight_digest.empty() && straight_digest == resumed_digest;

  report(9, rt_violations == 0 && resume_ok,
         "round-trip: " + std::to_string(rt_violations) + "/50 violations; resumed digest " +
             (resume_ok ? "matches" : "does NOT match") + " the uninterrupted run");
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
