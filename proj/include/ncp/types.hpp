#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncp {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed. `line()` is 1-based, 0 when not line-specific.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A ball localizer found no calibration point within its radius.
class EmptyNeighborhood : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class Task { kClassification, kRegression };

const char* to_string(Task task);

/// One sample: its representation, the model output and the ground truth.
/// Classification examples carry `probs` and `label`; regression examples carry
/// `prediction` and `target` (and an empty `probs`).
struct LabeledExample {
  std::vector<double> embedding;
  std::vector<double> probs;
  double prediction = 0.0;
  double target = 0.0;
  std::size_t label = 0;

  bool operator==(const LabeledExample&) const = default;
};

/// Homogeneous collection of examples. Example indices are identities: they
/// seed per-example random streams and key split partitions.
struct Dataset {
  Task task = Task::kClassification;
  std::size_t num_classes = 0;  // 0 for regression
  std::size_t dim = 0;
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  bool operator==(const Dataset&) const = default;

  /// Throws InvalidInput if any invariant fails (simplex, dimensions, labels).
  void validate() const;
};

/// Sizes of the four disjoint partitions drawn by `split`.
struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t calibration = 0;
  std::size_t scaling = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  std::size_t total() const { return calibration + scaling + validation + test; }
};

struct SplitIndices {
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> scaling;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Non-owning ordered view of a subset of a dataset.
class Slice {
 public:
  Slice(const Dataset& data, std::vector<std::size_t> indices);
  /// Whole dataset, in order.
  explicit Slice(const Dataset& data);

  const Dataset& dataset() const { return *data_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  const LabeledExample& operator[](std::size_t i) const { return data_->examples[indices_[i]]; }
  /// Dataset index (stable identity) of the i-th slice element.
  std::size_t id(std::size_t i) const { return indices_[i]; }
  std::span<const std::size_t> ids() const { return indices_; }

 private:
  const Dataset* data_;
  std::vector<std::size_t> indices_;
};

using ScoreVector = std::vector<double>;

/// Sparse normalized localization weights for one anchor point.
struct WeightVector {
  struct Entry {
    std::size_t index;  // calibration position
    double weight;
  };
  /// Calibration position of the anchor; empty for a test anchor.
  std::optional<std::size_t> anchor;
  std::vector<Entry> entries;

  double total() const;
};

inline constexpr double kSimplexTolerance = 1e-6;
inline constexpr double kWeightTolerance = 1e-9;

// ---------------------------------------------------------------------------
// Elementary transforms
// ---------------------------------------------------------------------------

/// Numerically stable softmax of logits / temperature.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

/// Class indices in descending-probability order. Equal probabilities are
/// ordered by a random permutation drawn from `tie_seed`.
std::vector<std::size_t> descending_order(std::span<const double> probs, std::uint64_t tie_seed);

/// 1-based position of `label` in `descending_order(probs, tie_seed)`.
std::size_t rank_of_label(std::span<const double> probs, std::size_t label, std::uint64_t tie_seed);

}  // namespace ncp
