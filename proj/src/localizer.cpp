#include "ncp/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncp/random.hpp"

namespace ncp {

const char* to_string(LocalizerMode mode) {
  switch (mode) {
    case LocalizerMode::kBall:
      return "ball";
    case LocalizerMode::kKnnExp:
      return "knn_exp";
    case LocalizerMode::kAllExp:
      return "all_exp";
  }
  return "?";
}

const char* to_string(SearchKind kind) { return kind == SearchKind::kExact ? "exact" : "lsh"; }

LocalizerMode parse_localizer_mode(const std::string& text) {
  if (text == "ball") return LocalizerMode::kBall;
  if (text == "knn_exp" || text == "knn-exp" || text == "knn") return LocalizerMode::kKnnExp;
  if (text == "all_exp" || text == "all-exp" || text == "all") return LocalizerMode::kAllExp;
  throw InvalidInput("unknown localizer '" + text + "' (ball, knn_exp, all_exp)");
}

SearchKind parse_search_kind(const std::string& text) {
  if (text == "exact") return SearchKind::kExact;
  if (text == "lsh") return SearchKind::kLsh;
  throw InvalidInput("unknown search '" + text + "' (exact, lsh)");
}

void LocalizerConfig::validate() const {
  if (mode == LocalizerMode::kBall && !(radius > 0.0)) throw InvalidInput("ball radius must be positive");
  if (mode != LocalizerMode::kBall && !(lambda_l > 0.0)) throw InvalidInput("lambda_L must be positive");
  if (mode == LocalizerMode::kKnnExp && k == 0 && !(k_frac > 0.0 && k_frac <= 1.0)) {
    throw InvalidInput("k_frac must lie in (0, 1]");
  }
  if (search == SearchKind::kLsh && (lsh.tables == 0 || lsh.projections == 0 || !(lsh.width >= 0.0))) {
    throw InvalidInput("LSH needs at least one table and projection and a width >= 0");
  }
}

std::size_t LocalizerConfig::resolve_k(std::size_t n) const {
  if (mode == LocalizerMode::kAllExp) return n;
  std::size_t want = k;
  if (want == 0) want = static_cast<std::size_t>(std::llround(k_frac * static_cast<double>(n)));
  return std::clamp<std::size_t>(want, std::min<std::size_t>(1, n), n);
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double sq = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    sq += diff * diff;
  }
  return std::sqrt(sq);
}

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
}

}  // namespace

NeighborIndex::NeighborIndex(const std::vector<std::vector<double>>& points, SearchKind search,
                             const LshParams& lsh)
    : search_(search), lsh_(lsh) {
  if (points.empty()) throw InvalidInput("neighbour index over an empty point set");
  n_ = points.size();
  d_ = points.front().size();
  data_.reserve(n_ * d_);
  for (const auto& p : points) {
    if (p.size() != d_) throw InvalidInput("embedding dimension mismatch in neighbour index");
    data_.insert(data_.end(), p.begin(), p.end());
  }
  if (search_ != SearchKind::kLsh) return;
  if (lsh_.tables == 0 || lsh_.projections == 0) throw InvalidInput("LSH needs tables and projections");

  width_ = lsh_.width > 0.0 ? lsh_.width : median_pairwise_distance(points, lsh_.seed) / 4.0;
  if (!(width_ > 0.0)) width_ = 1.0;
  projections_.resize(lsh_.tables);
  offsets_.resize(lsh_.tables);
  buckets_.resize(lsh_.tables);
  for (std::size_t t = 0; t < lsh_.tables; ++t) {
    Rng rng(derive_seed(lsh_.seed, Stream::kLsh, t));
    projections_[t].resize(lsh_.projections * d_);
    for (auto& g : projections_[t]) g = rng.normal();
    offsets_[t].resize(lsh_.projections);
    for (auto& b : offsets_[t]) b = rng.uniform(0.0, width_);
    for (std::size_t i = 0; i < n_; ++i) buckets_[t][bucket_key(t, point(i))].push_back(i);
  }
}

std::uint64_t NeighborIndex::bucket_key(std::size_t table, std::span<const double> x) const {
  std::uint64_t key = 0x6a09e667f3bcc909ULL;
  const double* g = projections_[table].data();
  for (std::size_t j = 0; j < lsh_.projections; ++j, g += d_) {
    double dot = offsets_[table][j];
    for (std::size_t c = 0; c < d_; ++c) dot += g[c] * x[c];
    const auto cell = static_cast<std::int64_t>(std::floor(dot / width_));
    key = splitmix64(key ^ static_cast<std::uint64_t>(cell));
  }
  return key;
}

void NeighborIndex::check_query(std::span<const double> query) const {
  if (n_ == 0) throw InvalidInput("query against an empty neighbour index");
  if (query.size() != d_) {
    throw InvalidInput("embedding dimension " + std::to_string(query.size()) + " does not match index dimension " +
                       std::to_string(d_));
  }
}

std::vector<Neighbor> NeighborIndex::top_k(std::span<const double> query, std::span<const std::size_t> pool,
                                           std::size_t k, std::optional<std::size_t> exclude) const {
  std::vector<Neighbor> all;
  all.reserve(pool.size());
  for (std::size_t i : pool) {
    if (exclude && *exclude == i) continue;
    all.push_back({i, euclidean(query, point(i))});
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
  all.resize(k);
  return all;
}

std::vector<Neighbor> NeighborIndex::exact_knn(std::span<const double> query, std::size_t k,
                                               std::optional<std::size_t> exclude) const {
  check_query(query);
  if (k == 0) throw InvalidInput("k must be at least 1");
  std::vector<Neighbor> all;
  all.reserve(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    if (exclude && *exclude == i) continue;
    all.push_back({i, euclidean(query, point(i))});
  }
  k = std::min(k, all.size());
  if (k < all.size()) {
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
    all.resize(k);
  }
  std::sort(all.begin(), all.end(), closer);
  return all;
}

std::vector<std::size_t> NeighborIndex::candidates(std::span<const double> query) const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < buckets_.size(); ++t) {
    const auto it = buckets_[t].find(bucket_key(t, query));
    if (it != buckets_[t].end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Neighbor> NeighborIndex::knn(std::span<const double> query, std::size_t k,
                                         std::optional<std::size_t> exclude) const {
  if (search_ == SearchKind::kExact) return exact_knn(query, k, exclude);
  check_query(query);
  if (k == 0) throw InvalidInput("k must be at least 1");
  const auto pool = candidates(query);
  return top_k(query, pool, k, exclude);
}

std::size_t NeighborIndex::candidate_count(std::span<const double> query) const {
  if (search_ == SearchKind::kExact) return 0;
  check_query(query);
  return candidates(query).size();
}

std::vector<Neighbor> NeighborIndex::within(std::span<const double> query, double radius,
                                            std::optional<std::size_t> exclude) const {
  check_query(query);
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < n_; ++i) {
    if (exclude && *exclude == i) continue;
    const double dist = euclidean(query, point(i));
    if (dist <= radius) out.push_back({i, dist});
  }
  std::sort(out.begin(), out.end(), closer);
  return out;
}

double median_pairwise_distance(const std::vector<std::vector<double>>& points, std::uint64_t seed,
                                std::size_t max_pairs) {
  const std::size_t n = points.size();
  if (n < 2) return 0.0;
  std::vector<double> dists;
  if (n * (n - 1) / 2 <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) dists.push_back(euclidean(points[i], points[j]));
    }
  } else {
    Rng rng(derive_seed(seed, Stream::kLsh, ~std::uint64_t{0}));
    dists.reserve(max_pairs);
    while (dists.size() < max_pairs) {
      const auto i = rng.below(n);
      const auto j = rng.below(n);
      if (i != j) dists.push_back(euclidean(points[i], points[j]));
    }
  }
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid;
}

WeightVector exp_weights(std::span<const Neighbor> neighbors, double lambda_l) {
  if (!(lambda_l > 0.0)) throw InvalidInput("lambda_L must be positive");
  if (neighbors.empty()) throw EmptyNeighborhood("exponential weights over an empty neighbour set");
  double nearest = INFINITY;
  for (const auto& nb : neighbors) nearest = std::min(nearest, nb.distance);
  WeightVector out;
  out.entries.reserve(neighbors.size());
  double total = 0.0;
  for (const auto& nb : neighbors) {
    const double raw = std::exp(-(nb.distance - nearest) / lambda_l);
    out.entries.push_back({nb.index, raw});
    total += raw;
  }
  for (auto& e : out.entries) e.weight /= total;
  return out;
}

WeightVector uniform_weights(std::span<const Neighbor> neighbors) {
  if (neighbors.empty()) throw EmptyNeighborhood("uniform weights over an empty neighbour set");
  WeightVector out;
  const double w = 1.0 / static_cast<double>(neighbors.size());
  for (const auto& nb : neighbors) out.entries.push_back({nb.index, w});
  return out;
}

WeightVector knn_exp_weights(const NeighborIndex& index, std::span<const double> anchor,
                             const LocalizerConfig& config, std::optional<std::size_t> exclude) {
  if (config.mode == LocalizerMode::kBall) throw InvalidInput("knn_exp_weights needs an exponential localizer");
  const std::size_t pool = index.size() - (exclude ? 1 : 0);
  if (pool == 0) throw EmptyNeighborhood("no calibration points left to localize over");
  const std::size_t k = config.resolve_k(pool);
  const auto neighbors =
      config.mode == LocalizerMode::kAllExp ? index.exact_knn(anchor, k, exclude) : index.knn(anchor, k, exclude);
  auto w = exp_weights(neighbors, config.lambda_l);
  w.anchor = exclude;
  return w;
}

WeightVector ball_weights(const NeighborIndex& index, std::span<const double> anchor, const LocalizerConfig& config,
                          std::optional<std::size_t> exclude) {
  if (!(config.radius > 0.0)) throw InvalidInput("ball radius must be positive");
  const auto inside = index.within(anchor, config.radius, exclude);
  if (inside.empty()) throw EmptyNeighborhood("no calibration point within the ball radius");
  auto w = uniform_weights(inside);
  w.anchor = exclude;
  return w;
}

LocalizeResult localize(const NeighborIndex& index, std::span<const double> anchor, const LocalizerConfig& config,
                        std::optional<std::size_t> exclude) {
  LocalizeResult out;
  if (config.mode == LocalizerMode::kBall) {
    const auto inside = index.within(anchor, config.radius, exclude);
    if (!inside.empty()) {
      out.weights = uniform_weights(inside);
    } else {
      out.weights = uniform_weights(index.exact_knn(anchor, 1, exclude));
      out.fell_back = true;
    }
    out.weights.anchor = exclude;
    return out;
  }
  const std::size_t pool = index.size() - (exclude ? 1 : 0);
  if (pool == 0) throw EmptyNeighborhood("no calibration points left to localize over");
  const std::size_t k = config.resolve_k(pool);
  auto neighbors =
      config.mode == LocalizerMode::kAllExp ? index.exact_knn(anchor, k, exclude) : index.knn(anchor, k, exclude);
  if (neighbors.empty()) {
    // LSH found no candidate at all.
    neighbors = index.exact_knn(anchor, k, exclude);
    out.fell_back = true;
  }
  out.weights = exp_weights(neighbors, config.lambda_l);
  out.weights.anchor = exclude;
  return out;
}

NeighborCache NeighborCache::for_index(const NeighborIndex& index, std::size_t max_k, bool leave_one_out) {
  NeighborCache cache;
  cache.max_k_ = max_k;
  cache.lists_.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto exclude = leave_one_out ? std::optional<std::size_t>(i) : std::nullopt;
    if (leave_one_out && index.size() == 1) {
      cache.lists_.emplace_back();
      continue;
    }
    cache.lists_.push_back(index.exact_knn(index.point(i), max_k, exclude));
  }
  return cache;
}

NeighborCache NeighborCache::for_queries(const NeighborIndex& index, const std::vector<std::vector<double>>& queries,
                                         std::size_t max_k) {
  NeighborCache cache;
  cache.max_k_ = max_k;
  cache.lists_.reserve(queries.size());
  for (const auto& q : queries) cache.lists_.push_back(index.exact_knn(q, max_k));
  return cache;
}

NeighborCache::ScoreOrder NeighborCache::score_order(std::span<const double> scores) const {
  ScoreOrder order(lists_.size());
  for (std::size_t a = 0; a < lists_.size(); ++a) {
    const auto& list = lists_[a];
    auto& o = order[a];
    o.resize(list.size());
    std::iota(o.begin(), o.end(), std::uint32_t{0});
    std::sort(o.begin(), o.end(), [&](std::uint32_t x, std::uint32_t y) {
      const double sx = scores[list[x].index];
      const double sy = scores[list[y].index];
      return sx != sy ? sx < sy : x < y;
    });
  }
  return order;
}

NeighborCache::RawWeights NeighborCache::raw_weights(const LocalizerConfig& config, std::size_t* fallbacks) const {
  const bool ball = config.mode == LocalizerMode::kBall;
  if (!ball && !(config.lambda_l > 0.0)) throw InvalidInput("lambda_L must be positive");
  std::size_t empty_balls = 0;
  RawWeights raw(lists_.size());
  for (std::size_t a = 0; a < lists_.size(); ++a) {
    const auto& list = lists_[a];
    if (list.empty()) throw EmptyNeighborhood("anchor without neighbours");
    auto& r = raw[a];
    r.assign(list.size(), 0.0);
    if (ball) {
      bool any = false;
      for (std::size_t p = 0; p < list.size() && list[p].distance <= config.radius; ++p) {
        r[p] = 1.0;
        any = true;
      }
      if (!any) {
        r[0] = 1.0;
        ++empty_balls;
      }
    } else {
      const double nearest = list[0].distance;
      for (std::size_t p = 0; p < list.size(); ++p) r[p] = std::exp(-(list[p].distance - nearest) / config.lambda_l);
    }
  }
  if (fallbacks) *fallbacks = empty_balls;
  return raw;
}

std::vector<SortedWeights> NeighborCache::sorted_weights(std::span<const double> scores, const ScoreOrder& order,
                                                         const RawWeights& raw, std::size_t depth) const {
  std::vector<SortedWeights> out;
  out.reserve(lists_.size());
  for (std::size_t a = 0; a < lists_.size(); ++a) {
    const auto& list = lists_[a];
    const auto& r = raw[a];
    const std::size_t keep = std::min(depth, list.size());
    double total = 0.0;
    for (std::size_t p = 0; p < keep; ++p) total += r[p];
    if (!(total > 0.0)) throw EmptyNeighborhood("anchor without positive weight");
    std::vector<double> sorted;
    std::vector<double> cumulative;
    sorted.reserve(keep);
    cumulative.reserve(keep);
    double running = 0.0;
    for (std::uint32_t p : order[a]) {
      if (p >= keep || r[p] == 0.0) continue;
      running += r[p] / total;
      sorted.push_back(scores[list[p].index]);
      cumulative.push_back(running);
    }
    out.push_back(SortedWeights::from_sorted(std::move(sorted), std::move(cumulative)));
  }
  return out;
}

std::vector<SortedWeights> NeighborCache::sorted_weights(std::span<const double> scores, const ScoreOrder& order,
                                                         const LocalizerConfig& config, std::size_t pool,
                                                         std::size_t* fallbacks) const {
  const std::size_t depth = config.mode == LocalizerMode::kBall ? pool : config.resolve_k(pool);
  if (depth > max_k_) throw InvalidInput("neighbour cache is shallower than the requested localizer");
  return sorted_weights(scores, order, raw_weights(config, fallbacks), depth);
}

}  // namespace ncp
