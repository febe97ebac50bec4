#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ncp/quantile.hpp"
#include "ncp/random.hpp"
#include "oracles.hpp"

using namespace ncp;

namespace {

WeightVector uniform(std::size_t n) {
  WeightVector w;
  for (std::size_t i = 0; i < n; ++i) w.entries.push_back({i, 1.0 / static_cast<double>(n)});
  return w;
}

WeightVector point_mass(std::size_t i) {
  WeightVector w;
  w.entries.push_back({i, 1.0});
  return w;
}

}  // namespace

TEST_CASE("cp_quantile examples") {
  const std::vector<double> nine{5, 3, 9, 1, 2, 8, 4, 7, 6};
  CHECK(cp_quantile(nine, 0.1).threshold == 9.0);
  const std::vector<double> one{0.42};
  CHECK(cp_quantile(one, 0.5).threshold == 0.42);
  const std::vector<double> three{1, 2, 3};
  const auto inf = cp_quantile(three, 0.01);
  CHECK(inf.infinite());
  CHECK(std::isinf(inf.threshold));
  CHECK_THROWS_AS(cp_quantile(std::vector<double>{}, 0.1), InvalidInput);
}

TEST_CASE("cp_quantile matches a full sort") {
  Rng rng(101);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(1 + rng.below(60));
    for (auto& v : s) v = std::floor(rng.uniform() * 20.0) / 4.0;
    const double alpha = rng.uniform(0.01, 0.99);
    CHECK(cp_quantile(s, alpha).threshold == oracle::cp_quantile(s, alpha));
  }
}

TEST_CASE("weighted_quantile examples") {
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(weighted_quantile(s, uniform(4), 0.25).threshold == 3.0);
  CHECK(weighted_quantile(s, uniform(4), 0.0).threshold == 4.0);
  for (double a : {0.0, 0.3, 0.9, 0.999}) CHECK(weighted_quantile(s, point_mass(1), a).threshold == 2.0);

  WeightVector bad;
  CHECK_THROWS_AS(weighted_quantile(s, bad, 0.1), InvalidInput);
  bad.entries.push_back({7, 1.0});
  CHECK_THROWS_AS(weighted_quantile(s, bad, 0.1), InvalidInput);
  WeightVector unnormalized{std::nullopt, {{0, 0.5}, {1, 0.6}}};
  CHECK_THROWS_AS(weighted_quantile(s, unnormalized, 0.1), InvalidInput);
}

TEST_CASE("weighted_quantile agrees with the brute-force oracle") {
  Rng rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> s(n);
    // Coarse values force ties.
    for (auto& v : s) v = std::floor(rng.uniform() * 10.0) / 10.0;
    const auto w = oracle::random_weights(rng, n, 1 + rng.below(n));
    const double at = rng.uniform() < 0.2 ? static_cast<double>(rng.below(n)) / static_cast<double>(n) : rng.uniform();
    const double got = weighted_quantile(s, w, at).threshold;
    if (got != oracle::weighted_quantile(s, w, at)) ++mismatches;
    if (got != SortedWeights(s, w).threshold(at)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("uniform weights reduce to the CP quantile") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(80);
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform();
    const double alpha = rng.uniform(0.02, 0.5);
    const double rank = std::ceil((1.0 - alpha) * (static_cast<double>(n) + 1.0) - 1e-9);
    if (rank > static_cast<double>(n)) continue;
    const double at = 1.0 - rank / static_cast<double>(n);
    CHECK(weighted_quantile(s, uniform(n), at).threshold == cp_quantile(s, alpha).threshold);
  }
}

TEST_CASE("weighted_quantile is non-increasing in alpha_tilde") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform();
    const auto w = oracle::random_weights(rng, n, 1 + rng.below(n));
    double prev = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 50; ++j) {
      const double t = weighted_quantile(s, w, j / 50.0).threshold;
      CHECK(t <= prev);
      prev = t;
    }
  }
}

TEST_CASE("thresholds ignore calibration order") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform();
    const auto w = oracle::random_weights(rng, n, n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    std::vector<double> s2(n);
    WeightVector w2;
    for (std::size_t i = 0; i < n; ++i) s2[perm[i]] = s[i];
    for (const auto& e : w.entries) w2.entries.push_back({perm[e.index], e.weight});
    std::reverse(w2.entries.begin(), w2.entries.end());
    const double at = rng.uniform();
    CHECK(weighted_quantile(s, w, at).threshold == weighted_quantile(s2, w2, at).threshold);
    const double alpha = rng.uniform(0.05, 0.5);
    CHECK(cp_quantile(s, alpha).threshold == cp_quantile(s2, alpha).threshold);
  }
}

TEST_CASE("alpha search degenerate localizers") {
  Rng rng(4);
  const std::size_t n = 40;
  std::vector<double> s(n);
  for (auto& v : s) v = rng.uniform();

  SUBCASE("uniform weights track the CP quantile") {
    std::vector<WeightVector> anchors(n, uniform(n));
    const auto r = ncp_alpha_search(s, anchors, 0.1);
    CHECK(r.empirical_coverage >= 0.9 - 1e-12);
    const double t = weighted_quantile(s, uniform(n), r.alpha_tilde).threshold;
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const auto cp_pos = std::lower_bound(sorted.begin(), sorted.end(), cp_quantile(s, 0.1).threshold);
    const auto t_pos = std::lower_bound(sorted.begin(), sorted.end(), t);
    CHECK(std::abs(cp_pos - t_pos) <= 1);
  }
  SUBCASE("identity weights give the top of the grid") {
    std::vector<WeightVector> anchors;
    for (std::size_t i = 0; i < n; ++i) anchors.push_back(point_mass(i));
    const auto r = ncp_alpha_search(s, anchors, 0.1);
    CHECK(r.alpha_tilde == doctest::Approx((n - 1.0) / n));
    CHECK(r.empirical_coverage == 1.0);
  }
}

TEST_CASE("alpha search on two points") {
  const std::vector<double> s{1, 2};
  const std::vector<WeightVector> anchors{point_mass(0), WeightVector{std::nullopt, {{0, 0.5}, {1, 0.5}}}};
  // alpha_tilde 0.5: anchor 2 needs mass 0.5 -> t = 1 < 2, coverage 1/2 >= 0.5.
  CHECK(ncp_coverage(s, std::span<const WeightVector>(anchors), 0.0) == 1.0);
  CHECK(ncp_coverage(s, std::span<const WeightVector>(anchors), 0.5) == 0.5);
  CHECK(ncp_alpha_search(s, anchors, 0.5).alpha_tilde == 0.5);
  CHECK(ncp_alpha_search(s, anchors, 0.1).alpha_tilde == 0.0);
}

TEST_CASE("alpha search agrees with a linear grid scan and coverage is monotone") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> s(n);
    for (auto& v : s) v = std::floor(rng.uniform() * 8.0);
    std::vector<WeightVector> anchors;
    for (std::size_t i = 0; i < n; ++i) anchors.push_back(oracle::random_weights(rng, n, 1 + rng.below(n)));
    const double alpha = rng.uniform(0.05, 0.5);
    CHECK(ncp_alpha_search(s, anchors, alpha).alpha_tilde == oracle::alpha_search(s, anchors, alpha));
    double prev = 2.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = ncp_coverage(s, std::span<const WeightVector>(anchors), static_cast<double>(j) / n);
      CHECK(c <= prev);
      prev = c;
    }
  }
}
