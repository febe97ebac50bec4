#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ncp/types.hpp"

namespace ncp {

/// Text rendering used by every file the library writes: 17 significant
/// digits, so values read back bit-exactly.
std::string format_double(double value);

/// Strict decimal parse; throws ParseError(line) on trailing garbage.
double parse_double(std::string_view text, std::size_t line);

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

// Dataset file: header "task,C,d", then one comma-separated record per example.
//   classification: label,p_1..p_C,e_1..e_d
//   regression:     target,prediction,e_1..e_d      (header C is 0)
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::filesystem::path& path);

/// Disjoint partitions drawn from one seeded shuffle, in the order
/// calibration, scaling, validation, test.
SplitIndices split(const Dataset& data, const SplitSpec& spec);
SplitIndices split(std::size_t n, const SplitSpec& spec);

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 100;
  /// Distance between class centroids, in units of the within-class std.
  double separation = 8.0;
  /// Temperature of the distance-based classifier; larger is flatter.
  double noise_temp = 1.0;
  /// Ratio between the flattest and the sharpest per-region classifier
  /// temperature. Region c (points whose nearest centroid is c) uses
  /// noise_temp * spread^(2c/(C-1) - 1). 1 gives one shared temperature.
  double confidence_spread = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Isotropic Gaussian clusters with distance-softmax class probabilities.
Dataset synth_gaussian_mixture(const SynthConfig& config);

/// Plain numeric CSV with a header row of column names.
struct NumericTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};
NumericTable read_numeric_csv(const std::filesystem::path& path);

}  // namespace ncp
