#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ncp/localizer.hpp"
#include "ncp/quantile.hpp"
#include "ncp/scoring.hpp"
#include "ncp/types.hpp"

namespace ncp {

enum class Method { kCp, kNcp, kNaive };

const char* to_string(Method method);
Method parse_method(const std::string& text);

struct NcpOptions {
  /// Calibration anchor i localizes over the other n - 1 points when set;
  /// otherwise its own score is part of its weighted quantile.
  bool leave_one_out = true;
};

/// Frozen output of calibration. Which fields are meaningful depends on `method`.
struct CalibratedModel {
  Method method = Method::kCp;
  Task task = Task::kClassification;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  double alpha = 0.1;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  ScoreConfig score;
  ScoreVector scores;

  // CP
  double cp_threshold = 0.0;

  // NCP
  LocalizerConfig localizer;
  NcpOptions options;
  double alpha_tilde = 0.0;
  double calibration_coverage = 0.0;
  std::size_t ball_fallbacks = 0;
  std::vector<std::vector<double>> embeddings;
  std::shared_ptr<const NeighborIndex> index;
};

struct PredictionOutput {
  /// Classification: included classes in rank order.
  std::vector<std::size_t> set;
  /// Regression interval.
  double lower = 0.0;
  double upper = 0.0;
  double threshold = 0.0;
  std::size_t neighbors = 0;
  bool fell_back = false;
  bool forced = false;  // argmax inserted into an empty set

  bool infinite() const { return std::isinf(threshold); }
  bool contains(const LabeledExample& example, Task task) const;
  /// Set cardinality or interval length.
  double size(Task task) const;
};

CalibratedModel calibrate_cp(const Slice& calibration, const ScoreConfig& score, double alpha, std::uint64_t seed);

CalibratedModel calibrate_ncp(const Slice& calibration, const ScoreConfig& score, const LocalizerConfig& localizer,
                              double alpha, std::uint64_t seed, const NcpOptions& options = {});

/// Naive sets need no calibration data; the model only carries alpha.
CalibratedModel make_naive(const Dataset& data, double alpha, std::uint64_t seed);

/// Threshold for one test embedding: the CP quantile, or the weighted quantile
/// of the test-anchored weights at alpha_tilde.
double test_threshold(const CalibratedModel& model, std::span<const double> embedding, std::size_t* neighbors = nullptr,
                      bool* fell_back = nullptr);

/// Probabilities are rescaled by `model.temperature` first when it is not 1.
PredictionOutput predict(const CalibratedModel& model, const LabeledExample& example, const ExampleDraw& draw,
                         bool force_nonempty = false);

/// Predicts every slice element with draws from (model.seed, kTestDraw, id).
std::vector<PredictionOutput> predict(const CalibratedModel& model, const Slice& test, bool force_nonempty = false);

void save_model(const CalibratedModel& model, std::ostream& out);
void save_model(const CalibratedModel& model, const std::filesystem::path& path);
CalibratedModel load_model(std::istream& in);
CalibratedModel load_model(const std::filesystem::path& path);

}  // namespace ncp
