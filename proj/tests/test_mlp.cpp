#include <doctest.h>

#include <cmath>

#include "ncp/mlp.hpp"
#include "ncp/random.hpp"

using namespace ncp;

namespace {

NumericTable smooth_table(std::size_t n, std::uint64_t seed) {
  NumericTable t;
  t.columns = {"a", "b", "y"};
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    t.rows.push_back({a, b, 3.0 * a - b * b + 10.0 + 0.05 * rng.normal()});
  }
  return t;
}

}  // namespace

TEST_CASE("mlp fits a smooth function") {
  const auto table = smooth_table(400, 1);
  MlpConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 3;
  const auto r = mlp_regression_dataset(table, "y", 0.5, cfg);
  CHECK(r.train_rows.size() == 200);
  CHECK(r.data.size() == 200);
  CHECK(r.data.dim == 30);
  CHECK_NOTHROW(r.data.validate());
  CHECK(r.train_mse < 0.5);
  double mse = 0.0;
  for (const auto& ex : r.data.examples) mse += (ex.target - ex.prediction) * (ex.target - ex.prediction);
  CHECK(mse / static_cast<double>(r.data.size()) < 1.0);

  const auto again = mlp_regression_dataset(table, "y", 0.5, cfg);
  CHECK(again.data == r.data);
}

TEST_CASE("mlp input checks") {
  const auto table = smooth_table(10, 2);
  CHECK_THROWS_AS(mlp_regression_dataset(table, "missing", 0.5, MlpConfig{}), InvalidInput);
  CHECK_THROWS_AS(mlp_regression_dataset(table, "y", 1.0, MlpConfig{}), InvalidInput);
  MlpConfig bad;
  bad.hidden = {};
  CHECK_THROWS_AS(Mlp(2, bad), InvalidInput);
}
