#include <doctest.h>

#include <cmath>

#include "ncp/diagnostics.hpp"
#include "ncp/ingest.hpp"
#include "oracles.hpp"

using namespace ncp;

namespace {

Points gaussian(Rng& rng, std::size_t n, std::size_t d) {
  Points x(n, std::vector<double>(d));
  for (auto& p : x)
    for (auto& v : p) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("silhouette examples") {
  const Points two{{0.0, 0.0}, {0.1, 0.0}, {10.0, 0.0}, {10.1, 0.0}};
  const std::vector<std::size_t> y{0, 0, 1, 1};
  CHECK(silhouette(two, y) == doctest::Approx(oracle::silhouette(two, y)).epsilon(1e-12));
  CHECK(silhouette(two, y) > 0.98);

  Rng rng(1);
  const auto mixed = gaussian(rng, 500, 4);
  std::vector<std::size_t> random_labels(500);
  for (auto& l : random_labels) l = rng.below(3);
  CHECK(std::abs(silhouette(mixed, random_labels)) < 0.1);

  const std::vector<std::size_t> one_class(4, 0);
  CHECK_THROWS_AS(silhouette(two, one_class), InvalidInput);
}

TEST_CASE("silhouette agrees with brute force, stays in range and ignores isometries") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.below(120);
    auto x = gaussian(rng, n, 3);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.below(3);
      x[i][0] += 3.0 * static_cast<double>(y[i]);
    }
    y[0] = 0;
    y[1] = 1;
    const double s = silhouette(x, y);
    CHECK(s == doctest::Approx(oracle::silhouette(x, y)).epsilon(1e-10));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    Points mirrored = x;
    for (auto& p : mirrored) {
      const double a = p[0], b = p[1];
      p[0] = -b + 4.0;
      p[1] = a - 1.0;
      p[2] = -p[2];
    }
    CHECK(silhouette(mirrored, y) == doctest::Approx(s).epsilon(1e-10));
  }
}

TEST_CASE("silhouette subsampling is seeded") {
  Rng rng(4);
  auto x = gaussian(rng, 600, 2);
  std::vector<std::size_t> y(600);
  for (std::size_t i = 0; i < 600; ++i) {
    y[i] = i % 2;
    x[i][0] += 4.0 * static_cast<double>(y[i]);
  }
  CHECK(silhouette(x, y, 200, 9) == silhouette(x, y, 200, 9));
  CHECK(silhouette(x, y, 200, 9) == doctest::Approx(silhouette(x, y)).epsilon(0.1));
}

TEST_CASE("separation estimate") {
  const Points line{{0.0}, {3.0}};
  const std::vector<std::size_t> y{0, 1};
  CHECK(estimate_separation(line, y, 1.0) == 0.0);
  CHECK(estimate_separation(line, y, 2.0) == 1.0);

  const Points far{{0.0}, {0.1}, {50.0}, {50.1}};
  const std::vector<std::size_t> fy{0, 0, 1, 1};
  CHECK(estimate_separation(far, fy, 1.0) == 0.0);
  CHECK(estimate_separation(far, fy, 100.0) == 1.0);

  Rng rng(2);
  const auto x = gaussian(rng, 200, 2);
  std::vector<std::size_t> ry(200);
  for (auto& l : ry) l = rng.below(2);
  double prev = -1.0;
  for (double b : {0.0, 0.01, 0.05, 0.1, 0.3, 1.0}) {
    const double mu = estimate_separation(x, ry, b);
    CHECK(mu >= prev);
    prev = mu;
  }
  CHECK(estimate_separation(x, ry, 0.0) == 0.0);
  Points dup{{1.0}, {1.0}, {5.0}};
  const std::vector<std::size_t> dy{0, 1, 1};
  CHECK(estimate_separation(dup, dy, 0.0) == 1.0);
}

TEST_CASE("concentration estimate") {
  SUBCASE("scores unrelated to position, everyone a neighbour") {
    Rng rng(5);
    const auto x = gaussian(rng, 400, 2);
    std::vector<std::size_t> y(400, 0);
    for (std::size_t i = 200; i < 400; ++i) y[i] = 1;
    Points shifted = x;
    for (std::size_t i = 200; i < 400; ++i) shifted[i][0] += 1000.0;
    std::vector<double> v(400);
    for (auto& s : v) s = rng.uniform();
    const auto c = estimate_concentration(shifted, y, v, 100.0, 0.5);
    CHECK(c.valid);
    CHECK(c.sigma_hat == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("low scores packed into robust neighbourhoods") {
    // Class 0: a tight core with low scores plus a loose halo with high scores.
    Points x;
    std::vector<std::size_t> y;
    std::vector<double> v;
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      x.push_back({rng.normal() * 0.05, rng.normal() * 0.05});
      y.push_back(0);
      v.push_back(0.1);
    }
    for (int i = 0; i < 50; ++i) {
      x.push_back({rng.normal() * 20.0, rng.normal() * 20.0});
      y.push_back(0);
      v.push_back(0.9);
    }
    for (int i = 0; i < 50; ++i) {
      x.push_back({1000.0 + rng.normal() * 0.05, rng.normal() * 0.05});
      y.push_back(1);
      v.push_back(0.1);
    }
    for (int i = 0; i < 50; ++i) {
      x.push_back({1000.0 + rng.normal() * 20.0, rng.normal() * 20.0});
      y.push_back(1);
      v.push_back(0.9);
    }
    const auto c = estimate_concentration(x, y, v, 0.5, 0.5);
    CHECK(c.valid);
    CHECK(c.sigma_hat > 1.0);
  }
  SUBCASE("no usable anchor") {
    const Points x{{0.0}, {100.0}};
    const std::vector<std::size_t> y{0, 1};
    const std::vector<double> v{0.1, 0.1};
    const auto c = estimate_concentration(x, y, v, 1.0, 0.5);
    CHECK_FALSE(c.valid);
    CHECK(std::isnan(c.sigma_hat));
  }
}

TEST_CASE("threshold comparison") {
  SynthConfig cfg;
  cfg.per_class = 150;
  cfg.noise_temp = 10.0;
  cfg.confidence_spread = 4.0;
  cfg.separation = 10.0;
  cfg.seed = 12;
  const auto data = synth_gaussian_mixture(cfg);
  const auto parts = split(data, SplitSpec{12, 800, 0, 0, 700});
  const Slice cal(data, parts.calibration);
  const Slice test(data, parts.test);
  const auto cp = calibrate_cp(cal, ScoreConfig{}, 0.1, 12);

  SUBCASE("flat localizer matches CP up to one grid step") {
    LocalizerConfig flat;
    flat.mode = LocalizerMode::kAllExp;
    flat.lambda_l = 1e12;
    const auto ncp = calibrate_ncp(cal, ScoreConfig{}, flat, 0.1, 12);
    const auto d = compare_thresholds(cp, ncp, cal, test);
    auto sorted = cp.scores;
    std::sort(sorted.begin(), sorted.end());
    const auto pos = std::lower_bound(sorted.begin(), sorted.end(), cp.cp_threshold) - sorted.begin();
    const double lo = sorted[std::max<std::ptrdiff_t>(pos - 1, 0)];
    const double hi = sorted[std::min<std::ptrdiff_t>(pos + 1, sorted.size() - 1)];
    CHECK(d.mean_ncp_threshold >= lo - 1e-12);
    CHECK(d.mean_ncp_threshold <= hi + 1e-12);
  }
  SUBCASE("well separated classes give a smaller localized threshold") {
    LocalizerConfig loc;
    loc.k_frac = 0.1;
    loc.lambda_l = 10.0;
    const auto ncp = calibrate_ncp(cal, ScoreConfig{}, loc, 0.1, 12);
    const auto d = compare_thresholds(cp, ncp, cal, test);
    CHECK(d.mean_ncp_threshold < d.cp_threshold);
    CHECK(d.ncp_threshold_smaller());
    CHECK(d.silhouette > 0.0);
    CHECK(d.radius > 0.0);
  }
}
