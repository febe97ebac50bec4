#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ncp/diagnostics.hpp"
#include "ncp/ingest.hpp"
#include "ncp/random.hpp"
#include "ncp/types.hpp"
#include "oracles.hpp"

using namespace ncp;

TEST_CASE("softmax examples") {
  const std::vector<double> zero{0.0, 0.0};
  auto p = softmax(zero);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));

  const std::vector<double> ln2{std::log(2.0), 0.0};
  p = softmax(ln2);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::vector<double> big{10.0, 0.0};
  p = softmax(big, 1e9);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-6));

  CHECK_THROWS_AS(softmax(big, 0.0), InvalidInput);
  CHECK_THROWS_AS(softmax(std::vector<double>{}), InvalidInput);
}

TEST_CASE("softmax sums to one and ignores a shared offset") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(1 + rng.below(12));
    for (auto& v : z) v = rng.uniform(-50.0, 50.0);
    const auto p = softmax(z);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    auto shifted = z;
    const double c = rng.uniform(-100.0, 100.0);
    for (auto& v : shifted) v += c;
    const auto q = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
  }
}

TEST_CASE("rank_of_label") {
  const std::vector<double> p{0.6, 0.3, 0.1};
  CHECK(rank_of_label(p, 0, 1) == 1);
  CHECK(rank_of_label(p, 2, 1) == 3);

  const std::vector<double> tie{0.5, 0.5};
  std::set<std::size_t> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const auto r = rank_of_label(tie, 0, seed);
    CHECK((r == 1 || r == 2));
    CHECK(r == rank_of_label(tie, 0, seed));
    CHECK(r + rank_of_label(tie, 1, seed) == 3);
    seen.insert(r);
  }
  CHECK(seen.size() == 2);
}

TEST_CASE("rank_of_label follows a permutation of distinct probabilities") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + rng.below(8);
    std::vector<double> z(c);
    for (auto& v : z) v = rng.uniform(-3.0, 3.0);
    const auto p = softmax(z);
    std::vector<std::size_t> perm(c);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    std::vector<double> q(c);
    for (std::size_t i = 0; i < c; ++i) q[perm[i]] = p[i];
    const std::size_t label = rng.below(c);
    CHECK(rank_of_label(p, label, 0) == rank_of_label(q, perm[label], 0));
  }
}

TEST_CASE("dataset round trip is bit exact") {
  SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.dim = 3;
  cfg.per_class = 10;
  cfg.seed = 3;
  const auto data = synth_gaussian_mixture(cfg);
  std::stringstream buf;
  write_dataset(data, buf);
  CHECK(read_dataset(buf) == data);

  Dataset reg;
  reg.task = Task::kRegression;
  reg.dim = 2;
  reg.examples.push_back({{0.1, 1.0 / 3.0}, {}, 2.5, -1e-300, 0});
  reg.examples.push_back({{1e300, -0.0}, {}, 0.1 + 0.2, 7.0, 0});
  std::stringstream buf2;
  write_dataset(reg, buf2);
  CHECK(read_dataset(buf2) == reg);
}

TEST_CASE("malformed dataset files") {
  std::stringstream short_record("classification,3,1\n0,0.5,0.5,1.0\n");
  try {
    read_dataset(short_record);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::stringstream empty("");
  CHECK_THROWS_WITH_AS(read_dataset(empty), doctest::Contains("empty dataset"), ParseError);
  std::stringstream header_only("regression,0,2\n");
  CHECK_THROWS_AS(read_dataset(header_only), ParseError);
  std::stringstream bad_simplex("classification,2,1\n0,0.7,0.7,1.0\n");
  CHECK_THROWS_AS(read_dataset(bad_simplex), ParseError);
  std::stringstream bad_number("regression,0,1\n1.0,abc,2\n");
  CHECK_THROWS_AS(read_dataset(bad_number), ParseError);
}

TEST_CASE("split partitions") {
  const auto parts = split(4, SplitSpec{9, 2, 0, 0, 2});
  CHECK(parts.calibration.size() == 2);
  CHECK(parts.test.size() == 2);
  std::set<std::size_t> all(parts.calibration.begin(), parts.calibration.end());
  all.insert(parts.test.begin(), parts.test.end());
  CHECK(all.size() == 4);

  const auto again = split(4, SplitSpec{9, 2, 0, 0, 2});
  CHECK(again.calibration == parts.calibration);
  CHECK(again.test == parts.test);

  CHECK_THROWS_AS(split(4, SplitSpec{9, 2, 1, 0, 2}), InvalidInput);

  const auto big = split(1000, SplitSpec{1, 300, 100, 200, 400});
  std::set<std::size_t> u;
  for (const auto* p : {&big.calibration, &big.scaling, &big.validation, &big.test}) u.insert(p->begin(), p->end());
  CHECK(u.size() == 1000);
}

TEST_CASE("synthetic datasets") {
  SynthConfig cfg;
  cfg.num_classes = 5;
  cfg.dim = 8;
  cfg.per_class = 100;
  cfg.seed = 2;

  SUBCASE("valid and reproducible") {
    const auto a = synth_gaussian_mixture(cfg);
    CHECK_NOTHROW(a.validate());
    std::stringstream s1, s2;
    write_dataset(a, s1);
    write_dataset(synth_gaussian_mixture(cfg), s2);
    CHECK(s1.str() == s2.str());
  }
  SUBCASE("no separation means no cluster structure") {
    cfg.separation = 0.0;
    const auto data = synth_gaussian_mixture(cfg);
    Points x;
    std::vector<std::size_t> y;
    for (const auto& ex : data.examples) {
      x.push_back(ex.embedding);
      y.push_back(ex.label);
    }
    CHECK(std::abs(oracle::silhouette(x, y)) < 0.05);
  }
  SUBCASE("wide separation gives an accurate classifier") {
    cfg.separation = 20.0;
    cfg.noise_temp = 1.0;
    const auto data = synth_gaussian_mixture(cfg);
    std::size_t hit = 0;
    for (const auto& ex : data.examples) {
      const auto top = std::max_element(ex.probs.begin(), ex.probs.end()) - ex.probs.begin();
      if (static_cast<std::size_t>(top) == ex.label) ++hit;
    }
    CHECK(static_cast<double>(hit) / static_cast<double>(data.size()) > 0.99);
  }
}
