#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ce/common.hpp"
#include "ce/domain.hpp"
#include "ce/gateway.hpp"

namespace ce {

struct TooFewPoints : Error {
  using Error::Error;
};
struct DegenerateData : Error {
  using Error::Error;
};
struct SingleCluster : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct ZeroVector : Error {
  using Error::Error;
};

struct EmbeddingMatrix {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> vectors;
  std::string model_id;

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

struct ClusterModel {
  int k = 0;
  std::vector<std::vector<double>> centroids;
  std::map<std::string, int> assignments;  // example id -> cluster index
  double silhouette = 0.0;
  double inertia = 0.0;
};

// One embedding per example, in input order. Vectors are whatever the
// provider returns; the training pipeline normalizes before clustering.
inline EmbeddingMatrix embed_examples(const std::vector<Example>& examples, Gateway& gw) {
  if (examples.empty()) throw EmptyInput("embed_examples: no examples");
  std::vector<std::string> texts;
  texts.reserve(examples.size());
  for (const auto& e : examples) texts.push_back(example_text(e));
  EmbeddingMatrix m;
  m.model_id = gw.embed_model_id();
  m.vectors = gw.embed(texts);
  for (const auto& e : examples) m.ids.push_back(e.id);
  for (const auto& v : m.vectors) {
    if (v.size() != m.vectors.front().size()) {
      throw DimensionMismatch("embedding dimensions differ within one batch");
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw ProviderError("embedding contains a non-finite value");
    }
  }
  return m;
}

// Cosine distance used by silhouette; zero vectors sit at distance 1 from
// everything except another zero vector.
inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double na = norm(a), nb = norm(b);
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot(a, b) / (na * nb);
}

namespace detail {

inline double sq_euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct LloydResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assign;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // per Lloyd iteration
};

// Seeded k-means++ initialization followed by Lloyd's iterations. Empty
// clusters are repaired by moving in the point farthest from its centroid.
inline LloydResult lloyd_run(const std::vector<std::vector<double>>& pts, int k, Rng& rng) {
  const std::size_t n = pts.size();
  LloydResult r;
  r.centroids.reserve(static_cast<std::size_t>(k));

  // k-means++ seeding
  r.centroids.push_back(pts[rng.index(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(r.centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : r.centroids) best = std::min(best, sq_euclidean(pts[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.index(n);  // duplicate points; any choice works
    } else {
      double target = rng.uniform01() * total;
      pick = n - 1;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    r.centroids.push_back(pts[pick]);
  }

  r.assign.assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        double d = sq_euclidean(pts[i], r.centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (r.assign[i] != best) {
        r.assign[i] = best;
        changed = true;
      }
    }

    // repair empty clusters with the globally farthest point
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : r.assign) ++counts[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t farthest = 0;
      double worst = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(r.assign[i])] <= 1) continue;
        double d = sq_euclidean(pts[i], r.centroids[static_cast<std::size_t>(r.assign[i])]);
        if (d > worst) {
          worst = d;
          farthest = i;
        }
      }
      --counts[static_cast<std::size_t>(r.assign[farthest])];
      r.assign[farthest] = c;
      ++counts[static_cast<std::size_t>(c)];
      changed = true;
    }

    // recompute centroids as arithmetic means
    const std::size_t dim = pts.front().size();
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) sums[static_cast<std::size_t>(r.assign[i])][j] += pts[i][j];
    }
    for (int c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < dim; ++j) {
        sums[static_cast<std::size_t>(c)][j] /= counts[static_cast<std::size_t>(c)];
      }
    }
    r.centroids = std::move(sums);

    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inertia += sq_euclidean(pts[i], r.centroids[static_cast<std::size_t>(r.assign[i])]);
    }
    r.inertia_trace.push_back(inertia);
    r.inertia = inertia;
    if (!changed) break;
  }
  return r;
}

}  // namespace detail

// Mean silhouette over points with cosine distance: a = mean intra-cluster
// distance, b = min over other clusters of mean distance, s = (b-a)/max(a,b).
// Singleton points and a = b = 0 score 0.
inline double silhouette_score(const EmbeddingMatrix& m,
                               const std::map<std::string, int>& assignments) {
  int k = 0;
  for (const auto& [id, c] : assignments) k = std::max(k, c + 1);
  if (k < 2) throw SingleCluster("silhouette requires at least 2 clusters");
  std::vector<int> assign(m.size());
  std::vector<std::size_t> cluster_size(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto it = assignments.find(m.ids[i]);
    if (it == assignments.end()) throw SingleCluster("assignment missing for id " + m.ids[i]);
    assign[i] = it->second;
    ++cluster_size[static_cast<std::size_t>(it->second)];
  }
  for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
    if (cluster_size[c] == 0) throw SingleCluster("empty cluster " + std::to_string(c));
  }

  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (cluster_size[static_cast<std::size_t>(assign[i])] == 1) continue;  // scores 0
    std::vector<double> dist_sum(static_cast<std::size_t>(k), 0.0);
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i == j) continue;
      dist_sum[static_cast<std::size_t>(assign[j])] += cosine_distance(m.vectors[i], m.vectors[j]);
    }
    const std::size_t own = static_cast<std::size_t>(assign[i]);
    double a = dist_sum[own] / static_cast<double>(cluster_size[own] - 1);
    double b = std::numeric_limits<double>::max();
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (c == own) continue;
      b = std::min(b, dist_sum[c] / static_cast<double>(cluster_size[c]));
    }
    double denom = std::max(a, b);
    total += denom == 0.0 ? 0.0 : (b - a) / denom;
  }
  return total / static_cast<double>(m.size());
}

// Lloyd's k-means with seeded k-means++ starts, 10 restarts, best inertia
// kept. Deterministic given (m, k, seed).
inline ClusterModel kmeans(const EmbeddingMatrix& m, int k, std::uint64_t seed) {
  if (k < 1) throw TooFewPoints("k must be >= 1");
  if (m.size() < static_cast<std::size_t>(k)) {
    throw TooFewPoints("kmeans: " + std::to_string(m.size()) + " points for k=" +
                       std::to_string(k));
  }
  if (k >= 2) {
    bool all_same = true;
    for (std::size_t i = 1; i < m.size() && all_same; ++i) {
      all_same = (m.vectors[i] == m.vectors[0]);
    }
    if (all_same) throw DegenerateData("all points identical");
  }

  Rng rng(seed_mix(seed, "kmeans", static_cast<std::uint64_t>(k)));
  detail::LloydResult best;
  best.inertia = std::numeric_limits<double>::max();
  for (int restart = 0; restart < 10; ++restart) {
    auto r = detail::lloyd_run(m.vectors, k, rng);
    if (r.inertia < best.inertia) best = std::move(r);
  }

  ClusterModel model;
  model.k = k;
  model.centroids = best.centroids;
  model.inertia = best.inertia;
  for (std::size_t i = 0; i < m.size(); ++i) {
    model.assignments[m.ids[i]] = best.assign[i];
  }
  model.silhouette = k >= 2 ? silhouette_score(m, model.assignments) : 0.0;
  return model;
}

// Runs kmeans per candidate k and keeps the highest silhouette; ties go to
// the smaller k.
inline ClusterModel select_k(const EmbeddingMatrix& m, const std::vector<int>& candidates,
                             std::uint64_t seed) {
  if (candidates.empty()) throw TooFewPoints("select_k: no candidate k values");
  std::vector<int> ks = candidates;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  ClusterModel best;
  bool have = false;
  for (int k : ks) {
    ClusterModel model = kmeans(m, k, seed);
    if (!have || model.silhouette > best.silhouette) {
      best = std::move(model);
      have = true;
    }
  }
  return best;
}

// Index of the centroid with maximal cosine similarity; ties go to the
// lowest index.
inline std::size_t nearest_centroid(const std::vector<double>& v,
                                    const std::vector<std::vector<double>>& centroids) {
  if (centroids.empty()) throw DimensionMismatch("no centroids");
  if (norm(v) == 0.0) throw ZeroVector("cannot route a zero embedding");
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    if (centroids[i].size() != v.size()) {
      throw DimensionMismatch("embedding dim " + std::to_string(v.size()) +
                              " vs centroid dim " + std::to_string(centroids[i].size()));
    }
    double sim = cosine_similarity(v, centroids[i]);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return best;
}

inline std::size_t route(const std::vector<double>& test_embedding, const ExpertEnsemble& ens) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(ens.experts.size());
  for (const auto& e : ens.experts) centroids.push_back(e.centroid);
  return nearest_centroid(test_embedding, centroids);
}

}  // namespace ce
