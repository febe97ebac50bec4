#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ncp/types.hpp"

namespace ncp {

struct QuantileResult {
  /// An observed score, or +infinity when the requested rank exceeds n.
  double threshold = 0.0;
  double attained_mass = 0.0;
  std::optional<std::size_t> source_index;

  bool infinite() const;
};

/// Mass a weighted quantile must reach: 1 - alpha_tilde, capped at the total
/// weight and relaxed by 1e-12 so rounding in cumulative sums cannot push the
/// answer past the intended score.
double required_mass(double alpha_tilde, double total_weight);

/// The ceil((1 - alpha)(n + 1))-th smallest score, or +inf if that rank > n.
QuantileResult cp_quantile(std::span<const double> scores, double alpha);

/// Smallest observed support score t with sum_j w_j 1[V_j <= t] >= 1 - alpha_tilde.
QuantileResult weighted_quantile(std::span<const double> scores, const WeightVector& weights, double alpha_tilde);

/// Support of one weight vector sorted by score, with running weight totals;
/// answers repeated weighted-quantile queries in O(log k).
class SortedWeights {
 public:
  SortedWeights() = default;
  SortedWeights(std::span<const double> scores, const WeightVector& weights);
  /// Already sorted support scores and their running weight totals.
  static SortedWeights from_sorted(std::vector<double> sorted_scores, std::vector<double> cumulative);

  double threshold(double alpha_tilde) const;
  std::size_t support_size() const { return sorted_scores_.size(); }

 private:
  std::vector<double> sorted_scores_;
  std::vector<double> cumulative_;
};

struct AlphaSearchResult {
  double alpha_tilde = 0.0;
  double empirical_coverage = 0.0;
  std::size_t iterations = 0;
};

/// Calibration coverage (1/n) sum_i 1[V_i <= Q(alpha_tilde; V, p_i)].
double ncp_coverage(std::span<const double> scores, std::span<const SortedWeights> anchors, double alpha_tilde);
double ncp_coverage(std::span<const double> scores, std::span<const WeightVector> anchors, double alpha_tilde);

/// Largest alpha_tilde on {0, 1/n, ..., (n-1)/n} whose calibration coverage
/// is at least 1 - alpha, found by bisection (coverage is non-increasing in
/// alpha_tilde). Returns 0 when no grid point qualifies.
AlphaSearchResult ncp_alpha_search(std::span<const double> scores, std::span<const WeightVector> anchors, double alpha);
AlphaSearchResult ncp_alpha_search(std::span<const double> scores, std::span<const SortedWeights> anchors, double alpha);

}  // namespace ncp
