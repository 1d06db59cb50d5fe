#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ce/common.hpp"
#include "ce/domain.hpp"

namespace ce {

struct LengthMismatch : Error {
  using Error::Error;
};
struct AllTies : Error {
  using Error::Error;
};

// Per-(gold, predicted) counts plus a dedicated abstention row for
// predictions that could not be parsed.
struct Confusion {
  int n_classes = 0;
  std::vector<std::vector<long>> counts;       // [gold][predicted]
  std::vector<long> abstentions;               // [gold]

  long total() const {
    long n = 0;
    for (const auto& row : counts) {
      for (long c : row) n += c;
    }
    for (long c : abstentions) n += c;
    return n;
  }

  long abstention_total() const {
    long n = 0;
    for (long c : abstentions) n += c;
    return n;
  }
};

struct EvalReport {
  Confusion confusion;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long n_examples = 0;
  long n_parse_failures = 0;
};

inline Confusion confusion(const std::vector<std::optional<int>>& preds,
                           const std::vector<int>& golds, int n_classes) {
  if (preds.size() != golds.size()) {
    throw LengthMismatch(std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
  }
  Confusion c;
  c.n_classes = n_classes;
  c.counts.assign(static_cast<std::size_t>(n_classes),
                  std::vector<long>(static_cast<std::size_t>(n_classes), 0));
  c.abstentions.assign(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto g = static_cast<std::size_t>(golds[i]);
    if (preds[i]) {
      ++c.counts[g][static_cast<std::size_t>(*preds[i])];
    } else {
      ++c.abstentions[g];
    }
  }
  return c;
}

// Positive-class F1 with 0/0 conventions mapping to 0. Abstentions count as
// wrong: they can contribute FN but never TP or FP.
inline EvalReport f1_binary(const Confusion& c, int positive) {
  const auto p = static_cast<std::size_t>(positive);
  long tp = c.counts[p][p];
  long fp = 0, fn = c.abstentions[p];
  for (std::size_t g = 0; g < c.counts.size(); ++g) {
    if (g != p) fp += c.counts[g][p];
  }
  for (std::size_t pr = 0; pr < c.counts[p].size(); ++pr) {
    if (pr != p) fn += c.counts[p][pr];
  }
  EvalReport r;
  r.confusion = c;
  r.n_examples = c.total();
  r.n_parse_failures = c.abstention_total();
  r.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.f1 = (r.precision + r.recall) == 0.0 ? 0.0
                                         : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

struct WilcoxonResult {
  double statistic = 0.0;  // W+: rank sum of positive differences
  double one_sided_p = 1.0;
};

// Exact one-sided Wilcoxon signed-rank test by full enumeration of the 2^n
// sign assignments. Ties (zero differences) are dropped; equal |differences|
// share their average rank. Desk-scale: n <= 20 after dropping ties.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<double> diffs;
  for (const auto& [a, b] : pairs) {
    double d = a - b;
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw AllTies("all differences are zero");
  const std::size_t n = diffs.size();
  if (n > 20) throw Error("exact wilcoxon limited to 20 non-zero differences, got " +
                          std::to_string(n));

  // average ranks over |differences|
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double w_plus = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (diffs[k] > 0.0) w_plus += rank[k];
  }

  // p = fraction of sign assignments with W+ >= observed
  const std::uint64_t total = 1ull << n;
  std::uint64_t at_least = 0;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (mask & (1ull << k)) w += rank[k];
    }
    if (w >= w_plus - 1e-12) ++at_least;
  }
  WilcoxonResult r;
  r.statistic = w_plus;
  r.one_sided_p = static_cast<double>(at_least) / static_cast<double>(total);
  return r;
}

}  // namespace ce
