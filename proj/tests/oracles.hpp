#pragma once
// Brute-force reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ncp/localizer.hpp"
#include "ncp/quantile.hpp"
#include "ncp/random.hpp"

namespace oracle {

// Try every observed support score as t; keep the smallest one whose mass
// reaches the target. No sorting, no running sums.
inline double weighted_quantile(std::span<const double> scores, const ncp::WeightVector& w, double alpha_tilde) {
  const double need = ncp::required_mass(alpha_tilde, w.total());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& candidate : w.entries) {
    const double t = scores[candidate.index];
    double mass = 0.0;
    for (const auto& e : w.entries) {
      if (scores[e.index] <= t) mass += e.weight;
    }
    if (mass >= need && t < best) best = t;
  }
  return best;
}

// ceil((1 - alpha)(n + 1))-th order statistic by full sort.
inline double cp_quantile(std::vector<double> scores, double alpha) {
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  const auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * (n + 1.0) - 1e-9));
  if (rank > scores.size()) return std::numeric_limits<double>::infinity();
  return scores[std::max<std::size_t>(rank, 1) - 1];
}

// All-pairs sort by (distance, index).
inline std::vector<ncp::Neighbor> knn(const std::vector<std::vector<double>>& points, std::span<const double> q,
                                      std::size_t k, std::ptrdiff_t exclude = -1) {
  std::vector<ncp::Neighbor> all;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (static_cast<std::ptrdiff_t>(i) == exclude) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += (points[i][j] - q[j]) * (points[i][j] - q[j]);
    all.push_back({i, std::sqrt(s)});
  }
  std::sort(all.begin(), all.end(), [](const ncp::Neighbor& a, const ncp::Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// O(n^2) silhouette over every point, singletons scored 0.
inline double silhouette(const std::vector<std::vector<double>>& x, std::span<const std::size_t> labels) {
  const std::size_t n = x.size();
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(classes, 0.0);
    std::vector<std::size_t> count(classes, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[j]] += ncp::euclidean(x[i], x[j]);
      ++count[labels[j]];
    }
    if (count[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / static_cast<double>(count[labels[i]]);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      if (c != labels[i] && count[c] > 0) b = std::min(b, sum[c] / static_cast<double>(count[c]));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

// Linear scan of the alpha_tilde grid from the top.
inline double alpha_search(std::span<const double> scores, std::span<const ncp::WeightVector> anchors, double alpha) {
  const std::size_t n = scores.size();
  for (std::size_t j = n; j-- > 0;) {
    const double at = static_cast<double>(j) / static_cast<double>(n);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (scores[i] <= oracle::weighted_quantile(scores, anchors[i], at)) ++hit;
    }
    if (static_cast<double>(hit) / static_cast<double>(n) >= 1.0 - alpha - 1e-12) return at;
  }
  return 0.0;
}

inline ncp::WeightVector random_weights(ncp::Rng& rng, std::size_t n, std::size_t support) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx.begin(), idx.end());
  ncp::WeightVector w;
  double total = 0.0;
  for (std::size_t i = 0; i < support; ++i) {
    const double v = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.01, 1.0);
    w.entries.push_back({idx[i], v});
    total += v;
  }
  if (total == 0.0) {
    w.entries.front().weight = 1.0;
    total = 1.0;
  }
  for (auto& e : w.entries) e.weight /= total;
  return w;
}

}  // namespace oracle
