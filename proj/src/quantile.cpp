#include "ncp/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ncp {

namespace {

constexpr double kMassSlack = 1e-12;

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
}

void check_alpha_tilde(double alpha_tilde) {
  if (!(alpha_tilde >= 0.0 && alpha_tilde < 1.0)) throw InvalidInput("alpha_tilde must lie in [0, 1)");
}

void check_weights(const WeightVector& weights, std::size_t n) {
  if (weights.entries.empty()) throw InvalidInput("weighted quantile over an empty support");
  for (const auto& e : weights.entries) {
    if (e.index >= n) throw InvalidInput("weight index outside the score vector");
    if (!(e.weight >= 0.0)) throw InvalidInput("negative weight");
  }
  if (std::abs(weights.total() - 1.0) > kWeightTolerance) throw InvalidInput("weights do not sum to 1");
}

}  // namespace

bool QuantileResult::infinite() const { return std::isinf(threshold); }

double required_mass(double alpha_tilde, double total_weight) {
  return std::min(1.0 - alpha_tilde, total_weight) - kMassSlack;
}

QuantileResult cp_quantile(std::span<const double> scores, double alpha) {
  check_alpha(alpha);
  if (scores.empty()) throw InvalidInput("CP quantile of an empty score vector");
  const std::size_t n = scores.size();
  // The small offset keeps products such as 0.9 * 10 from rounding up a rank.
  const auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n + 1) - 1e-9));
  QuantileResult result;
  if (rank > n) {
    result.threshold = INFINITY;
    result.attained_mass = 1.0;
    return result;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto nth = order.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(order.begin(), nth, order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] < scores[b] : a < b;
  });
  result.threshold = scores[*nth];
  result.source_index = *nth;
  const auto covered = std::count_if(scores.begin(), scores.end(), [&](double v) { return v <= result.threshold; });
  result.attained_mass = static_cast<double>(covered) / static_cast<double>(n);
  return result;
}

QuantileResult weighted_quantile(std::span<const double> scores, const WeightVector& weights, double alpha_tilde) {
  check_alpha_tilde(alpha_tilde);
  check_weights(weights, scores.size());
  auto entries = weights.entries;
  std::sort(entries.begin(), entries.end(), [&](const auto& a, const auto& b) {
    return scores[a.index] != scores[b.index] ? scores[a.index] < scores[b.index] : a.index < b.index;
  });
  const double target = required_mass(alpha_tilde, weights.total());
  double cumulative = 0.0;
  std::size_t pick = entries.size() - 1;
  for (std::size_t r = 0; r < entries.size(); ++r) {
    cumulative += entries[r].weight;
    if (cumulative >= target) {
      pick = r;
      break;
    }
  }
  QuantileResult result;
  result.threshold = scores[entries[pick].index];
  result.source_index = entries[pick].index;
  // Mass at the threshold includes every tied support score.
  double mass = 0.0;
  for (const auto& e : entries) {
    if (scores[e.index] <= result.threshold) mass += e.weight;
  }
  result.attained_mass = mass;
  return result;
}

SortedWeights::SortedWeights(std::span<const double> scores, const WeightVector& weights) {
  check_weights(weights, scores.size());
  std::vector<std::pair<double, double>> items;
  items.reserve(weights.entries.size());
  for (const auto& e : weights.entries) items.emplace_back(scores[e.index], e.weight);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  sorted_scores_.reserve(items.size());
  cumulative_.reserve(items.size());
  double running = 0.0;
  for (const auto& [score, weight] : items) {
    running += weight;
    sorted_scores_.push_back(score);
    cumulative_.push_back(running);
  }
}

SortedWeights SortedWeights::from_sorted(std::vector<double> sorted_scores, std::vector<double> cumulative) {
  if (sorted_scores.empty() || sorted_scores.size() != cumulative.size()) {
    throw InvalidInput("sorted weights need matching, non-empty arrays");
  }
  SortedWeights out;
  out.sorted_scores_ = std::move(sorted_scores);
  out.cumulative_ = std::move(cumulative);
  return out;
}

double SortedWeights::threshold(double alpha_tilde) const {
  const double target = required_mass(alpha_tilde, cumulative_.back());
  auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), target);
  if (it == cumulative_.end()) --it;
  return sorted_scores_[static_cast<std::size_t>(it - cumulative_.begin())];
}

double ncp_coverage(std::span<const double> scores, std::span<const SortedWeights> anchors, double alpha_tilde) {
  if (anchors.size() != scores.size()) throw InvalidInput("one weight vector per calibration example required");
  if (scores.empty()) throw InvalidInput("empty calibration scores");
  std::size_t covered = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] <= anchors[i].threshold(alpha_tilde)) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(scores.size());
}

double ncp_coverage(std::span<const double> scores, std::span<const WeightVector> anchors, double alpha_tilde) {
  if (anchors.size() != scores.size()) throw InvalidInput("one weight vector per calibration example required");
  std::vector<SortedWeights> prepared;
  prepared.reserve(anchors.size());
  for (const auto& w : anchors) prepared.emplace_back(scores, w);
  return ncp_coverage(scores, prepared, alpha_tilde);
}

AlphaSearchResult ncp_alpha_search(std::span<const double> scores, std::span<const SortedWeights> anchors,
                                   double alpha) {
  check_alpha(alpha);
  if (anchors.size() != scores.size()) throw InvalidInput("one weight vector per calibration example required");
  if (scores.empty()) throw InvalidInput("empty calibration scores");
  const std::size_t n = scores.size();
  const double grid = static_cast<double>(n);
  auto meets = [&](double coverage) { return coverage >= 1.0 - alpha - kMassSlack; };

  AlphaSearchResult result;
  double coverage = ncp_coverage(scores, anchors, 0.0);
  result.iterations = 1;
  if (!meets(coverage)) {
    result.alpha_tilde = 0.0;
    result.empirical_coverage = coverage;
    return result;
  }
  // Invariant: grid point lo qualifies, every point above hi fails.
  std::size_t lo = 0;
  std::size_t hi = n - 1;
  double lo_coverage = coverage;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    const double c = ncp_coverage(scores, anchors, static_cast<double>(mid) / grid);
    ++result.iterations;
    if (meets(c)) {
      lo = mid;
      lo_coverage = c;
    } else {
      hi = mid - 1;
    }
  }
  result.alpha_tilde = static_cast<double>(lo) / grid;
  result.empirical_coverage = lo_coverage;
  return result;
}

AlphaSearchResult ncp_alpha_search(std::span<const double> scores, std::span<const WeightVector> anchors,
                                   double alpha) {
  if (anchors.size() != scores.size()) throw InvalidInput("one weight vector per calibration example required");
  std::vector<SortedWeights> prepared;
  prepared.reserve(anchors.size());
  for (const auto& w : anchors) prepared.emplace_back(scores, w);
  return ncp_alpha_search(scores, prepared, alpha);
}

}  // namespace ncp
