#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ncp/quantile.hpp"
#include "ncp/types.hpp"

namespace ncp {

enum class LocalizerMode { kBall, kKnnExp, kAllExp };
enum class SearchKind { kExact, kLsh };

const char* to_string(LocalizerMode mode);
const char* to_string(SearchKind kind);
LocalizerMode parse_localizer_mode(const std::string& text);
SearchKind parse_search_kind(const std::string& text);

struct LshParams {
  std::size_t tables = 8;
  std::size_t projections = 8;
  /// Bucket width; 0 means a quarter of the median pairwise distance.
  double width = 0.0;
  std::uint64_t seed = 0;
};

struct LocalizerConfig {
  LocalizerMode mode = LocalizerMode::kKnnExp;
  double radius = 1.0;
  /// Neighbour count as a fraction of the calibration size; `k` overrides it.
  double k_frac = 0.1;
  std::size_t k = 0;
  double lambda_l = 100.0;
  SearchKind search = SearchKind::kExact;
  LshParams lsh;

  void validate() const;
  /// Neighbour count for a pool of `n` points: max(1, round(k_frac * n)),
  /// or `k`, capped at n.
  std::size_t resolve_k(std::size_t n) const;
};

struct Neighbor {
  std::size_t index;
  double distance;
};

double euclidean(std::span<const double> a, std::span<const double> b);

/// Calibration embeddings plus an optional LSH structure. Immutable once
/// built; queries are safe from several threads.
class NeighborIndex {
 public:
  NeighborIndex() = default;
  NeighborIndex(const std::vector<std::vector<double>>& points, SearchKind search = SearchKind::kExact,
                const LshParams& lsh = {});

  std::size_t size() const { return n_; }
  std::size_t dim() const { return d_; }
  SearchKind search() const { return search_; }
  std::span<const double> point(std::size_t i) const { return {data_.data() + i * d_, d_}; }
  double lsh_width() const { return width_; }

  /// k nearest, ascending by (distance, index). `exclude` drops one stored
  /// point (leave-one-out anchors). With LSH the search runs over bucket
  /// candidates only and may return fewer than k.
  std::vector<Neighbor> knn(std::span<const double> query, std::size_t k,
                            std::optional<std::size_t> exclude = std::nullopt) const;

  /// Exact k nearest by linear scan regardless of the configured search.
  std::vector<Neighbor> exact_knn(std::span<const double> query, std::size_t k,
                                  std::optional<std::size_t> exclude = std::nullopt) const;

  /// Every stored point with distance <= radius, ascending.
  std::vector<Neighbor> within(std::span<const double> query, double radius,
                               std::optional<std::size_t> exclude = std::nullopt) const;

  /// Number of distinct LSH candidates for a query (0 for exact indexes).
  std::size_t candidate_count(std::span<const double> query) const;

 private:
  void check_query(std::span<const double> query) const;
  std::vector<std::size_t> candidates(std::span<const double> query) const;
  std::uint64_t bucket_key(std::size_t table, std::span<const double> x) const;
  std::vector<Neighbor> top_k(std::span<const double> query, std::span<const std::size_t> pool, std::size_t k,
                              std::optional<std::size_t> exclude) const;

  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> data_;
  SearchKind search_ = SearchKind::kExact;
  LshParams lsh_;
  double width_ = 0.0;
  // Per table: projections (P x d, row-major) and offsets.
  std::vector<std::vector<double>> projections_;
  std::vector<std::vector<double>> offsets_;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets_;
};

/// Median of pairwise distances over a seeded sample of at most `max_pairs` pairs.
double median_pairwise_distance(const std::vector<std::vector<double>>& points, std::uint64_t seed,
                                std::size_t max_pairs = 20000);

/// Normalized exp(-dist / lambda_l) over the given neighbours (shifted by the
/// smallest distance before exponentiation; the shift cancels).
WeightVector exp_weights(std::span<const Neighbor> neighbors, double lambda_l);

/// Uniform weights over the neighbours.
WeightVector uniform_weights(std::span<const Neighbor> neighbors);

/// Exponential weights over the k nearest (KNN_EXP) or every point (ALL_EXP).
WeightVector knn_exp_weights(const NeighborIndex& index, std::span<const double> anchor,
                             const LocalizerConfig& config, std::optional<std::size_t> exclude = std::nullopt);

/// Uniform weights over the points within `config.radius`. Throws
/// EmptyNeighborhood when there are none.
WeightVector ball_weights(const NeighborIndex& index, std::span<const double> anchor, const LocalizerConfig& config,
                          std::optional<std::size_t> exclude = std::nullopt);

struct LocalizeResult {
  WeightVector weights;
  bool fell_back = false;  // empty ball replaced by the nearest neighbour
};

/// Dispatch on `config.mode`; an empty ball falls back to the single nearest point.
LocalizeResult localize(const NeighborIndex& index, std::span<const double> anchor, const LocalizerConfig& config,
                        std::optional<std::size_t> exclude = std::nullopt);

/// Distance-sorted neighbour lists for a fixed set of anchors, reused across
/// localizer settings during tuning. Entries are exact and cover at most
/// `max_k` points per anchor.
class NeighborCache {
 public:
  NeighborCache() = default;
  /// Anchors are the indexed points themselves, each excluding itself when
  /// `leave_one_out` is set.
  static NeighborCache for_index(const NeighborIndex& index, std::size_t max_k, bool leave_one_out);
  static NeighborCache for_queries(const NeighborIndex& index, const std::vector<std::vector<double>>& queries,
                                   std::size_t max_k);

  std::size_t size() const { return lists_.size(); }
  std::span<const Neighbor> neighbors(std::size_t anchor) const { return lists_[anchor]; }
  std::size_t max_k() const { return max_k_; }

  /// For each anchor, positions into its neighbour list ordered by score.
  using ScoreOrder = std::vector<std::vector<std::uint32_t>>;
  ScoreOrder score_order(std::span<const double> scores) const;

  /// Unnormalized kernel values along each neighbour list: exp(-(d - d_0) /
  /// lambda_l), or the ball indicator (nearest point only when the ball is empty).
  using RawWeights = std::vector<std::vector<double>>;
  RawWeights raw_weights(const LocalizerConfig& config, std::size_t* fallbacks = nullptr) const;

  /// Per-anchor sorted weights keeping the first `depth` entries of each list.
  std::vector<SortedWeights> sorted_weights(std::span<const double> scores, const ScoreOrder& order,
                                            const RawWeights& raw, std::size_t depth) const;

  /// Per-anchor sorted weights for a KNN_EXP / ALL_EXP / BALL setting. `pool`
  /// is the number of points the localizer ranges over (sets k via k_frac).
  /// `fallbacks`, if given, receives the number of empty balls.
  std::vector<SortedWeights> sorted_weights(std::span<const double> scores, const ScoreOrder& order,
                                            const LocalizerConfig& config, std::size_t pool,
                                            std::size_t* fallbacks = nullptr) const;

 private:
  std::vector<std::vector<Neighbor>> lists_;
  std::size_t max_k_ = 0;
};

}  // namespace ncp
