#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncp/ingest.hpp"
#include "ncp/types.hpp"

namespace ncp {

struct MlpConfig {
  std::vector<std::size_t> hidden{15, 20, 30};
  std::size_t epochs = 500;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// ReLU regression network trained with Adam on mean squared error. Inputs and
/// target are standardized with training-set statistics.
class Mlp {
 public:
  Mlp(std::size_t inputs, const MlpConfig& config);

  /// Returns the final training MSE in original target units.
  double fit(const std::vector<std::vector<double>>& x, std::span<const double> y);

  double predict(std::span<const double> x) const;
  /// Activations of the last hidden layer.
  std::vector<double> embed(std::span<const double> x) const;

 private:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;  // out x in, row-major
    std::vector<double> b;
  };

  std::vector<double> standardize(std::span<const double> x) const;
  // Activations of every layer for one standardized input; back() is the output.
  void forward(std::span<const double> x, std::vector<std::vector<double>>& acts) const;

  MlpConfig config_;
  std::vector<Layer> layers_;
  std::vector<double> x_mean_;
  std::vector<double> x_std_;
  double y_mean_ = 0.0;
  double y_std_ = 1.0;
};

struct MlpDatasetResult {
  /// Held-out rows as a regression dataset (prediction, last-hidden embedding).
  Dataset data;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> held_out_rows;
  double train_mse = 0.0;
};

/// Fits an MLP on a seeded `train_frac` of the rows of `table` (target column
/// `target`, every other column an input) and embeds the remaining rows.
MlpDatasetResult mlp_regression_dataset(const NumericTable& table, const std::string& target, double train_frac,
                                        const MlpConfig& config);

}  // namespace ncp
