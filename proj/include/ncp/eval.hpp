#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ncp/engine.hpp"

namespace ncp {

/// Fraction of outputs containing their example's ground truth.
double coverage(std::span<const PredictionOutput> outputs, const Slice& examples);

struct EfficiencySummary {
  /// Mean set size or interval length; +inf when any interval is infinite.
  double mean = 0.0;
  /// Mean over finite outputs only.
  double finite_mean = 0.0;
  std::size_t infinite = 0;
};

EfficiencySummary efficiency(std::span<const PredictionOutput> outputs, Task task);

/// Search space for grid_tune. Empty lists leave the template value alone.
struct TuneGrid {
  std::vector<double> k_fracs;
  std::vector<double> lambda_ls;
  std::vector<double> lambda_rs;

  /// k_frac {0.05, 0.1, 0.2, 0.3, 0.5, 1}, lambda_L {10, 50, 100, 500, 1000,
  /// 5000}, lambda_R {0.001, ..., 1} (lambda_R only used by RAPS templates).
  static TuneGrid standard();
};

/// One evaluated method in an experiment.
struct MethodSpec {
  std::string name;
  Method method = Method::kCp;
  ScoreConfig score;
  /// RAPS only: pick k_reg on the validation split when true.
  bool auto_k_reg = true;
  LocalizerConfig localizer;
  NcpOptions options;
  bool tune = false;
  TuneGrid grid = TuneGrid::standard();
};

struct TuneRow {
  double k_frac = 0.0;
  double lambda_l = 0.0;
  double lambda_r = 0.0;
  double coverage = 0.0;
  double efficiency = 0.0;
  bool feasible = false;
};

struct TuneResult {
  MethodSpec best;
  std::size_t best_row = 0;
  /// False when no grid point reached 1 - alpha; `best` then has the highest coverage.
  bool any_feasible = false;
  std::vector<TuneRow> table;
};

/// Calibrates every grid point on `calibration`, evaluates it on `validation`
/// and keeps the smallest validation efficiency among points whose coverage
/// reaches 1 - alpha. Ties go to smaller lambda_L, then smaller k_frac.
TuneResult grid_tune(const Slice& calibration, const Slice& validation, const MethodSpec& method, double alpha,
                     std::uint64_t seed, bool force_nonempty = false);

struct ExperimentConfig {
  /// Partition sizes; the seed of trial t is base_seed + t.
  SplitSpec sizes;
  double alpha = 0.1;
  std::size_t trials = 1;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  bool force_nonempty = false;
  /// Fit a temperature on the scaling split (when non-empty) before calibrating.
  bool temperature_scaling = false;
};

struct TrialReport {
  std::string method;
  std::uint64_t seed = 0;
  double coverage = 0.0;
  double efficiency = 0.0;  // +inf when some interval was infinite
  std::size_t infinite = 0;
  double neighbor_frac_used = 0.0;
  double mean_threshold = 0.0;
  double cp_threshold = 0.0;
  double alpha_tilde = 0.0;
  double temperature = 1.0;
  std::size_t k_reg = 0;
  double lambda_r = 0.0;
  double k_frac = 0.0;
  double lambda_l = 0.0;
};

struct MethodSummary {
  std::string method;
  double coverage_mean = 0.0;
  double coverage_std = 0.0;
  /// Over trials with finite efficiency; `infinite_trials` counts the rest.
  double efficiency_mean = 0.0;
  double efficiency_std = 0.0;
  std::size_t trials = 0;
  std::size_t infinite_trials = 0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<std::string> methods;
  /// trials[m][t]: method m, trial t.
  std::vector<std::vector<TrialReport>> trials;

  std::vector<MethodSummary> summary() const;
};

/// Mean and sample (n - 1) standard deviation; std is 0 for one value.
std::pair<double, double> mean_std(std::span<const double> values);

/// Evaluates one method on one split. `split_seed` drives every draw.
TrialReport run_method(const Dataset& data, const SplitIndices& parts, const MethodSpec& method, double alpha,
                       std::uint64_t split_seed, bool force_nonempty);

/// Resplits, calibrates and evaluates every method per trial. Trials run on
/// `config.jobs` threads; results do not depend on the thread count.
ExperimentReport run_trials(const Dataset& data, std::span<const MethodSpec> methods, const ExperimentConfig& config);

/// `method,metric,mean,std,trials` rows for coverage and efficiency.
void write_report_csv(const ExperimentReport& report, std::ostream& out);
/// One row per (method, trial).
void write_trials_csv(const ExperimentReport& report, std::ostream& out);
void write_tune_csv(const TuneResult& result, std::ostream& out);
/// Aligned text table of the summary.
std::string format_table(const ExperimentReport& report);

}  // namespace ncp
