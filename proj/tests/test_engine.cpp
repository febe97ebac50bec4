#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ncp/engine.hpp"
#include "ncp/eval.hpp"
#include "ncp/ingest.hpp"

using namespace ncp;

namespace {

Dataset regression(std::vector<double> residuals) {
  Dataset d;
  d.task = Task::kRegression;
  d.dim = 1;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    d.examples.push_back({{static_cast<double>(i)}, {}, 0.0, residuals[i], 0});
  }
  return d;
}

Dataset clustered(std::uint64_t seed, std::size_t per_class = 200) {
  SynthConfig cfg;
  cfg.num_classes = 10;
  cfg.dim = 16;
  cfg.per_class = per_class;
  cfg.separation = 8.0;
  cfg.noise_temp = 10.0;
  cfg.confidence_spread = 4.0;
  cfg.seed = seed;
  return synth_gaussian_mixture(cfg);
}

std::string serialize(const CalibratedModel& m) {
  std::ostringstream out;
  save_model(m, out);
  return out.str();
}

ScoreConfig abs_score() {
  ScoreConfig s;
  s.kind = ScoreKind::kAbsResidual;
  return s;
}

}  // namespace

TEST_CASE("CP calibration examples") {
  const auto one = regression({0.7});
  CHECK(calibrate_cp(Slice(one), abs_score(), 0.5, 0).cp_threshold == 0.7);

  const auto nine = regression({3, 1, 4, 9, 5, 2, 6, 8, 7});
  CHECK(calibrate_cp(Slice(nine), abs_score(), 0.1, 0).cp_threshold == 9.0);

  const auto three = regression({1, 2, 3});
  const auto model = calibrate_cp(Slice(three), abs_score(), 0.01, 0);
  CHECK(std::isinf(model.cp_threshold));
  const auto out = predict(model, LabeledExample{{0.0}, {}, 3.0, 0.0, 0}, ExampleDraw{});
  CHECK(out.infinite());
  CHECK(std::isinf(out.size(Task::kRegression)));

  const auto cls = clustered(1, 1);
  const Slice first3(cls, {0, 1, 2});
  const auto cm = calibrate_cp(first3, ScoreConfig{}, 0.01, 0);
  const auto full = predict(cm, cls.examples[5], ExampleDraw{0.5, 1});
  CHECK(full.set.size() == 10);
}

TEST_CASE("predict with a fixed threshold") {
  CalibratedModel m;
  m.task = Task::kRegression;
  m.cp_threshold = 2.0;
  const auto out = predict(m, LabeledExample{{0.0}, {}, 3.0, 4.5, 0}, ExampleDraw{});
  CHECK(out.lower == 1.0);
  CHECK(out.upper == 5.0);
  CHECK(out.contains(LabeledExample{{0.0}, {}, 3.0, 4.5, 0}, Task::kRegression));
  CHECK(out.size(Task::kRegression) == 4.0);

  CalibratedModel c;
  c.task = Task::kClassification;
  c.num_classes = 3;
  c.cp_threshold = 0.01;
  const LabeledExample ex{{0.0}, {0.2, 0.5, 0.3}, 0, 0, 1};
  const ExampleDraw draw{0.5, 3};
  CHECK(predict(c, ex, draw).set.empty());
  const auto forced = predict(c, ex, draw, true);
  CHECK(forced.forced);
  CHECK(forced.set == std::vector<std::size_t>{1});
}

TEST_CASE("APS sets are rank prefixes and shrink as alpha grows") {
  const auto data = clustered(3);
  const auto parts = split(data, SplitSpec{3, 1000, 0, 0, 1000});
  const Slice cal(data, parts.calibration);
  const Slice test(data, parts.test);
  LocalizerConfig loc;
  loc.k_frac = 0.1;
  loc.lambda_l = 10.0;
  for (Method method : {Method::kCp, Method::kNcp}) {
    std::vector<std::vector<PredictionOutput>> by_alpha;
    for (double alpha : {0.05, 0.1, 0.2, 0.4}) {
      const auto model = method == Method::kCp ? calibrate_cp(cal, ScoreConfig{}, alpha, 3)
                                               : calibrate_ncp(cal, ScoreConfig{}, loc, alpha, 3);
      by_alpha.push_back(predict(model, test));
    }
    std::size_t not_prefix = 0, grew = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto draw = draw_for(3, Stream::kTestDraw, test.id(i));
      const auto order = descending_order(test[i].probs, draw.tie_seed);
      for (std::size_t a = 0; a < by_alpha.size(); ++a) {
        const auto& set = by_alpha[a][i].set;
        for (std::size_t r = 0; r < set.size(); ++r) not_prefix += set[r] != order[r];
        if (a > 0) {
          const auto& prev = by_alpha[a - 1][i].set;
          for (std::size_t c : set) grew += std::find(prev.begin(), prev.end(), c) == prev.end();
        }
      }
    }
    CHECK(not_prefix == 0);
    CHECK(grew == 0);
  }
}

TEST_CASE("NCP with a flat kernel over every point behaves like CP") {
  const auto data = clustered(5, 60);
  const auto parts = split(data, SplitSpec{5, 300, 0, 0, 300});
  const Slice cal(data, parts.calibration);
  LocalizerConfig loc;
  loc.mode = LocalizerMode::kAllExp;
  loc.lambda_l = 1e12;
  const auto ncp = calibrate_ncp(cal, ScoreConfig{}, loc, 0.1, 5);
  const auto cp = calibrate_cp(cal, ScoreConfig{}, 0.1, 5);
  auto sorted = cp.scores;
  std::sort(sorted.begin(), sorted.end());
  const auto cp_pos = std::lower_bound(sorted.begin(), sorted.end(), cp.cp_threshold) - sorted.begin();
  for (std::size_t i : parts.test) {
    const double t = test_threshold(ncp, data.examples[i].embedding);
    const auto pos = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    CHECK(std::abs(pos - cp_pos) <= 1);
  }
}

TEST_CASE("NCP with each point as its own only neighbour") {
  const auto data = clustered(6, 20);
  const Slice cal(data);
  LocalizerConfig loc;
  loc.k = 1;
  NcpOptions self;
  self.leave_one_out = false;
  const auto model = calibrate_ncp(cal, ScoreConfig{}, loc, 0.1, 0, self);
  const double n = static_cast<double>(cal.size());
  CHECK(model.alpha_tilde == doctest::Approx((n - 1.0) / n));
}

TEST_CASE("calibration is deterministic and models round trip") {
  const auto data = clustered(7, 50);
  const Slice cal(data);
  LocalizerConfig loc;
  loc.k_frac = 0.2;
  loc.lambda_l = 5.0;
  const auto a = calibrate_ncp(cal, ScoreConfig{}, loc, 0.1, 11);
  const auto b = calibrate_ncp(cal, ScoreConfig{}, loc, 0.1, 11);
  CHECK(serialize(a) == serialize(b));

  std::istringstream in(serialize(a));
  const auto loaded = load_model(in);
  CHECK(serialize(loaded) == serialize(a));
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(test_threshold(loaded, data.examples[i].embedding) == test_threshold(a, data.examples[i].embedding));
  }

  std::istringstream junk("not a model\n");
  CHECK_THROWS_AS(load_model(junk), Error);
}

TEST_CASE("marginal coverage on exchangeable data") {
  const auto data = clustered(8, 700);
  std::vector<double> cp_cov, ncp_cov;
  LocalizerConfig loc;
  loc.k_frac = 0.1;
  loc.lambda_l = 10.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto parts = split(data, SplitSpec{seed, 1000, 0, 0, 5000});
    const Slice cal(data, parts.calibration);
    const Slice test(data, parts.test);
    cp_cov.push_back(coverage(predict(calibrate_cp(cal, ScoreConfig{}, 0.1, seed), test), test));
    ncp_cov.push_back(coverage(predict(calibrate_ncp(cal, ScoreConfig{}, loc, 0.1, seed), test), test));
  }
  CHECK(mean_std(cp_cov).first == doctest::Approx(0.9).epsilon(0.02));
  CHECK(mean_std(ncp_cov).first >= 0.88);
}

TEST_CASE("temperature is applied at prediction") {
  CalibratedModel m;
  m.num_classes = 2;
  m.cp_threshold = 0.5;
  const LabeledExample ex{{0.0}, {0.8, 0.2}, 0, 0, 0};
  const ExampleDraw draw{1.0, 0};
  CHECK(predict(m, ex, draw).set.empty());
  m.temperature = 100.0;
  // Near-uniform probabilities: the top class scores about 0.5.
  CHECK(predict(m, ex, draw).set.size() <= 1);
  m.cp_threshold = 0.6;
  CHECK(predict(m, ex, draw).set == std::vector<std::size_t>{0});
}
