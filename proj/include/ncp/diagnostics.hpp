#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ncp/engine.hpp"

namespace ncp {

using Points = std::vector<std::vector<double>>;

/// Mean silhouette (b - a) / max(a, b). Points alone in their class score 0.
/// Above `sample_cap` points, a seeded subsample of that size is scored
/// against itself.
double silhouette(const Points& points, std::span<const std::size_t> labels, std::size_t sample_cap = 2000,
                  std::uint64_t seed = 0);

/// Largest per-class fraction of points lying within 2B of some point of
/// another class.
double estimate_separation(const Points& points, std::span<const std::size_t> labels, double radius);

struct ConcentrationEstimate {
  /// Min over classes of the mean, over robust anchors, of
  /// P(V <= t | within 2B of the anchor) / P(V <= t | class). NaN when no class
  /// had a usable anchor.
  double sigma_hat = 0.0;
  bool valid = false;
  std::size_t classes_used = 0;
};

ConcentrationEstimate estimate_concentration(const Points& points, std::span<const std::size_t> labels,
                                             std::span<const double> scores, double radius, double threshold);

/// Median over points of the distance to the nearest other point.
double median_nn_distance(const Points& points);

struct TheoryDiagnostics {
  double silhouette = 0.0;
  double radius = 0.0;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  bool sigma_valid = false;
  double sigma_threshold = 0.0;
  double p_class_min = 0.0;
  double assumption_lhs = 0.0;
  double assumption_rhs = 0.0;
  double mean_ncp_threshold = 0.0;
  double cp_threshold = 0.0;
  double alpha = 0.0;
  double alpha_tilde = 0.0;

  bool ncp_threshold_smaller() const { return mean_ncp_threshold <= cp_threshold; }
  bool assumption_holds() const { return assumption_lhs >= assumption_rhs; }
};

struct DiagnosticsOptions {
  /// Ball radius B; 0 selects the median nearest-neighbour distance.
  double radius = 0.0;
  /// Threshold t for the concentration estimate; NaN selects the CP threshold.
  double threshold = NAN;
  std::size_t silhouette_cap = 2000;
  std::uint64_t seed = 0;
};

/// Compares the mean test-anchored NCP threshold with the CP threshold and
/// reports the empirical separation and concentration on the calibration data.
TheoryDiagnostics compare_thresholds(const CalibratedModel& cp, const CalibratedModel& ncp, const Slice& calibration,
                                 const Slice& test, const DiagnosticsOptions& options = {});

}  // namespace ncp
