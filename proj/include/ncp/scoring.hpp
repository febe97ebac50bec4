#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncp/random.hpp"
#include "ncp/types.hpp"

namespace ncp {

enum class ScoreKind { kAps, kRaps, kAbsResidual };

/// RAPS rank penalty: `kAbs` is lambda * |k - k_reg|, `kHinge` is
/// lambda * max(0, k - k_reg).
enum class RapsPenalty { kAbs, kHinge };

const char* to_string(ScoreKind kind);
const char* to_string(RapsPenalty penalty);
ScoreKind parse_score_kind(const std::string& text);
RapsPenalty parse_raps_penalty(const std::string& text);

struct ScoreConfig {
  ScoreKind kind = ScoreKind::kAps;
  double lambda_r = 0.0;
  std::size_t k_reg = 1;
  RapsPenalty penalty = RapsPenalty::kAbs;

  /// `num_classes` is 0 for regression.
  void validate(std::size_t num_classes) const;
  bool matches(Task task) const { return (kind == ScoreKind::kAbsResidual) == (task == Task::kRegression); }
};

/// Per-example randomness: the tie-break U of the APS score and the seed of
/// the tie permutation used when sorting probabilities.
struct ExampleDraw {
  double u = 0.0;
  std::uint64_t tie_seed = 0;
};

ExampleDraw draw_for(std::uint64_t seed, Stream stream, std::size_t example_id);

/// pi(y^1) + ... + pi(y^{k-1}) + U * pi(y^k), with probabilities sorted
/// descending internally. `rank` is 1-based.
double aps_score(std::span<const double> probs, std::size_t rank, double u);

/// APS plus the configured rank penalty evaluated at `rank`.
double raps_score(std::span<const double> probs, std::size_t rank, double u, const ScoreConfig& config);

double abs_residual(double target, double prediction);

/// Scores of every candidate class, in rank order (entry r is the class at
/// rank r + 1). All candidates share `draw.u`.
struct RankedScore {
  std::size_t label;
  double score;
};
std::vector<RankedScore> candidate_scores(std::span<const double> probs, const ScoreConfig& config,
                                          const ExampleDraw& draw);

/// Non-conformity score of the ground truth for each slice element, drawing
/// per-example randomness from (seed, kCalibrationDraw, example id).
ScoreVector calibration_scores(const Slice& slice, const ScoreConfig& config, std::uint64_t seed,
                               Stream stream = Stream::kCalibrationDraw);

/// Classes in descending-probability order until the cumulative mass first
/// reaches 1 - alpha.
std::vector<std::size_t> naive_set(std::span<const double> probs, double alpha, std::uint64_t tie_seed = 0);

/// RAPS k_reg: the ceil((1 - alpha) m)-th smallest ground-truth rank on `slice`.
std::size_t choose_k_reg(const Slice& slice, double alpha, std::uint64_t seed);

struct TemperatureFit {
  double temperature = 1.0;
  double final_nll = 0.0;
  double initial_nll = 0.0;  // at T = 1
  bool at_bound = false;     // optimum pinned to an end of [e^-3, e^3]
};

/// Temperature scaling by golden-section search on log T over [-3, 3].
TemperatureFit fit_temperature(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels);

/// Mean negative log-likelihood of softmax(logits / T).
double mean_nll(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels, double temperature);

/// Treats stored probabilities as exp(logits): fits T on `scaling` and
/// returns a copy of the dataset with every example rescaled.
Dataset apply_temperature(const Dataset& data, double temperature);
TemperatureFit fit_temperature_on_probs(const Slice& scaling);

}  // namespace ncp
