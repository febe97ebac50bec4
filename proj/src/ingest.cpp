#include "ncp/ingest.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ncp/random.hpp"

namespace ncp {

std::string format_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", value);
}

double parse_double(std::string_view text, std::size_t line) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (text.empty()) throw ParseError(line, "empty numeric field");
  if (text == "inf" || text == "+inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  // strtod needs a terminated buffer; fields are short.
  const std::string buf(text);
  char* end = nullptr;
  errno = 0;
  const double value = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || errno == ERANGE) {
    throw ParseError(line, "not a number: '" + buf + "'");
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

namespace {

std::size_t parse_count(std::string_view text, std::size_t line, const char* what) {
  std::size_t value = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw ParseError(line, std::string("bad ") + what + " '" + std::string(text) + "'");
  return value;
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields.size() != 3) throw ParseError(line_no, "header must be 'task,C,d'");
      if (fields[0] == "classification") {
        data.task = Task::kClassification;
      } else if (fields[0] == "regression") {
        data.task = Task::kRegression;
      } else {
        throw ParseError(line_no, "unknown task '" + std::string(fields[0]) + "'");
      }
      data.num_classes = parse_count(fields[1], line_no, "class count");
      data.dim = parse_count(fields[2], line_no, "dimension");
      if (data.task == Task::kClassification && data.num_classes == 0) {
        throw ParseError(line_no, "classification header needs C >= 1");
      }
      if (data.task == Task::kRegression && data.num_classes != 0) {
        throw ParseError(line_no, "regression header must declare C = 0");
      }
      have_header = true;
      continue;
    }
    const std::size_t outputs = data.task == Task::kClassification ? data.num_classes : 1;
    const std::size_t expected = 1 + outputs + data.dim;
    if (fields.size() != expected) {
      throw ParseError(line_no, "expected " + std::to_string(expected) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    LabeledExample ex;
    if (data.task == Task::kClassification) {
      ex.label = parse_count(fields[0], line_no, "label");
      if (ex.label >= data.num_classes) throw ParseError(line_no, "label out of range");
      ex.probs.resize(data.num_classes);
      double sum = 0.0;
      for (std::size_t c = 0; c < data.num_classes; ++c) {
        ex.probs[c] = parse_double(fields[1 + c], line_no);
        if (!(ex.probs[c] >= 0.0) || !std::isfinite(ex.probs[c])) throw ParseError(line_no, "negative probability");
        sum += ex.probs[c];
      }
      if (std::abs(sum - 1.0) > kSimplexTolerance) throw ParseError(line_no, "probabilities do not sum to 1");
    } else {
      ex.target = parse_double(fields[0], line_no);
      ex.prediction = parse_double(fields[1], line_no);
      if (!std::isfinite(ex.target) || !std::isfinite(ex.prediction)) throw ParseError(line_no, "non-finite value");
    }
    ex.embedding.resize(data.dim);
    for (std::size_t j = 0; j < data.dim; ++j) {
      ex.embedding[j] = parse_double(fields[1 + outputs + j], line_no);
      if (!std::isfinite(ex.embedding[j])) throw ParseError(line_no, "non-finite embedding entry");
    }
    data.examples.push_back(std::move(ex));
  }
  if (data.examples.empty()) throw ParseError(0, "empty dataset");
  return data;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file " + path.string());
  return read_dataset(in);
}

void write_dataset(const Dataset& data, std::ostream& out) {
  out << to_string(data.task) << ',' << (data.task == Task::kClassification ? data.num_classes : 0) << ','
      << data.dim << '\n';
  std::string line;
  for (const auto& ex : data.examples) {
    line.clear();
    if (data.task == Task::kClassification) {
      line += std::to_string(ex.label);
      for (double p : ex.probs) {
        line += ',';
        line += format_double(p);
      }
    } else {
      line += format_double(ex.target);
      line += ',';
      line += format_double(ex.prediction);
    }
    for (double v : ex.embedding) {
      line += ',';
      line += format_double(v);
    }
    line += '\n';
    out << line;
  }
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset file " + path.string());
  write_dataset(data, out);
  if (!out) throw Error("write failed for " + path.string());
}

SplitIndices split(std::size_t n, const SplitSpec& spec) {
  if (spec.total() > n) {
    throw InvalidInput("split sizes sum to " + std::to_string(spec.total()) + " but dataset has " +
                       std::to_string(n) + " examples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(spec.seed, Stream::kSplit));
  rng.shuffle(order.begin(), order.end());

  SplitIndices out;
  auto take = [&, pos = std::size_t{0}](std::size_t count) mutable {
    std::vector<std::size_t> part(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                  order.begin() + static_cast<std::ptrdiff_t>(pos + count));
    pos += count;
    return part;
  };
  out.calibration = take(spec.calibration);
  out.scaling = take(spec.scaling);
  out.validation = take(spec.validation);
  out.test = take(spec.test);
  return out;
}

SplitIndices split(const Dataset& data, const SplitSpec& spec) { return split(data.size(), spec); }

void SynthConfig::validate() const {
  if (num_classes == 0 || dim == 0 || per_class == 0) throw InvalidInput("synth counts must be positive");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw InvalidInput("separation must be >= 0");
  if (!(noise_temp > 0.0) || !std::isfinite(noise_temp)) throw InvalidInput("noise_temp must be positive");
  if (!(confidence_spread >= 1.0) || !std::isfinite(confidence_spread)) {
    throw InvalidInput("confidence_spread must be >= 1");
  }
}

Dataset synth_gaussian_mixture(const SynthConfig& config) {
  config.validate();
  const std::size_t C = config.num_classes;
  const std::size_t d = config.dim;
  Rng rng(derive_seed(config.seed, Stream::kSynth));

  // Orthogonal axes scaled by sep/sqrt(2) sit at pairwise distance exactly
  // `separation`; with more classes than dimensions use random unit
  // directions, which are nearly orthogonal in high dimension.
  std::vector<std::vector<double>> centroids(C, std::vector<double>(d, 0.0));
  const double radius = config.separation / std::sqrt(2.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (C <= d) {
      centroids[c][c] = radius;
    } else {
      double norm = 0.0;
      for (auto& v : centroids[c]) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : centroids[c]) v *= radius / norm;
    }
  }

  std::vector<double> region_temp(C, config.noise_temp);
  if (C > 1) {
    const double log_spread = std::log(config.confidence_spread);
    for (std::size_t c = 0; c < C; ++c) {
      const double position = 2.0 * static_cast<double>(c) / static_cast<double>(C - 1) - 1.0;
      region_temp[c] = config.noise_temp * std::exp(position * log_spread);
    }
  }

  Dataset data;
  data.task = Task::kClassification;
  data.num_classes = C;
  data.dim = d;
  data.examples.reserve(C * config.per_class);
  std::vector<double> logits(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < config.per_class; ++i) {
      LabeledExample ex;
      ex.label = c;
      ex.embedding.resize(d);
      for (std::size_t j = 0; j < d; ++j) ex.embedding[j] = centroids[c][j] + rng.normal();
      std::size_t nearest = 0;
      for (std::size_t k = 0; k < C; ++k) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = ex.embedding[j] - centroids[k][j];
          sq += diff * diff;
        }
        logits[k] = -0.5 * sq;
        if (logits[k] > logits[nearest]) nearest = k;
      }
      ex.probs = softmax(logits, region_temp[nearest]);
      data.examples.push_back(std::move(ex));
    }
  }
  return data;
}

NumericTable read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  NumericTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (table.columns.empty()) {
      for (auto f : fields) table.columns.emplace_back(f);
      continue;
    }
    if (fields.size() != table.columns.size()) {
      throw ParseError(line_no, "expected " + std::to_string(table.columns.size()) + " fields");
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_double(f, line_no));
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw ParseError(0, "empty table");
  return table;
}

}  // namespace ncp
