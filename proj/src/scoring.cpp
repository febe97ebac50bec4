#include "ncp/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace ncp {

const char* to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kAps:
      return "aps";
    case ScoreKind::kRaps:
      return "raps";
    case ScoreKind::kAbsResidual:
      return "abs_residual";
  }
  return "?";
}

const char* to_string(RapsPenalty penalty) { return penalty == RapsPenalty::kAbs ? "abs" : "hinge"; }

ScoreKind parse_score_kind(const std::string& text) {
  if (text == "aps") return ScoreKind::kAps;
  if (text == "raps") return ScoreKind::kRaps;
  if (text == "abs_residual" || text == "abs-residual") return ScoreKind::kAbsResidual;
  throw InvalidInput("unknown score kind '" + text + "' (aps, raps, abs_residual)");
}

RapsPenalty parse_raps_penalty(const std::string& text) {
  if (text == "abs") return RapsPenalty::kAbs;
  if (text == "hinge") return RapsPenalty::kHinge;
  throw InvalidInput("unknown RAPS penalty '" + text + "' (abs, hinge)");
}

void ScoreConfig::validate(std::size_t num_classes) const {
  if (!(lambda_r >= 0.0) || !std::isfinite(lambda_r)) throw InvalidInput("lambda_R must be >= 0");
  if (kind == ScoreKind::kRaps && (k_reg < 1 || k_reg > num_classes)) {
    throw InvalidInput("k_reg must lie in [1, C]");
  }
}

ExampleDraw draw_for(std::uint64_t seed, Stream stream, std::size_t example_id) {
  Rng rng(derive_seed(seed, stream, example_id));
  ExampleDraw draw;
  draw.u = rng.uniform();
  draw.tie_seed = rng.next();
  return draw;
}

namespace {

void check_rank(std::size_t rank, std::size_t num_classes) {
  if (rank < 1 || rank > num_classes) throw InvalidInput("candidate rank out of range");
}

void check_u(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw InvalidInput("U must lie in [0, 1]");
}

double rank_penalty(std::size_t rank, const ScoreConfig& config) {
  if (config.kind != ScoreKind::kRaps || config.lambda_r == 0.0) return 0.0;
  const double k = static_cast<double>(rank);
  const double k_reg = static_cast<double>(config.k_reg);
  const double excess = config.penalty == RapsPenalty::kAbs ? std::abs(k - k_reg) : std::max(0.0, k - k_reg);
  return config.lambda_r * excess;
}

// APS on probabilities already sorted descending.
double aps_sorted(std::span<const double> sorted, std::size_t rank, double u) {
  double mass = 0.0;
  for (std::size_t r = 0; r + 1 < rank; ++r) mass += sorted[r];
  return mass + u * sorted[rank - 1];
}

}  // namespace

double aps_score(std::span<const double> probs, std::size_t rank, double u) {
  check_rank(rank, probs.size());
  check_u(u);
  std::vector<double> sorted(probs.begin(), probs.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return aps_sorted(sorted, rank, u);
}

double raps_score(std::span<const double> probs, std::size_t rank, double u, const ScoreConfig& config) {
  const double base = aps_score(probs, rank, u);
  const double penalty = rank_penalty(rank, config);
  return penalty == 0.0 ? base : base + penalty;
}

double abs_residual(double target, double prediction) {
  if (!std::isfinite(target) || !std::isfinite(prediction)) throw InvalidInput("non-finite residual input");
  return std::abs(target - prediction);
}

std::vector<RankedScore> candidate_scores(std::span<const double> probs, const ScoreConfig& config,
                                          const ExampleDraw& draw) {
  check_u(draw.u);
  const auto order = descending_order(probs, draw.tie_seed);
  std::vector<RankedScore> out;
  out.reserve(order.size());
  double mass = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const double p = probs[order[r]];
    double score = mass + draw.u * p;
    const double penalty = rank_penalty(r + 1, config);
    if (penalty != 0.0) score += penalty;
    out.push_back({order[r], score});
    mass += p;
  }
  return out;
}

ScoreVector calibration_scores(const Slice& slice, const ScoreConfig& config, std::uint64_t seed, Stream stream) {
  const Dataset& data = slice.dataset();
  if (!config.matches(data.task)) {
    throw InvalidInput(std::string("score kind ") + to_string(config.kind) + " does not match a " +
                       to_string(data.task) + " dataset");
  }
  config.validate(data.num_classes);
  ScoreVector scores(slice.size());
  std::vector<double> sorted;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const auto& ex = slice[i];
    if (data.task == Task::kRegression) {
      scores[i] = abs_residual(ex.target, ex.prediction);
      continue;
    }
    const auto draw = draw_for(seed, stream, slice.id(i));
    const auto order = descending_order(ex.probs, draw.tie_seed);
    sorted.resize(order.size());
    std::size_t rank = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      sorted[r] = ex.probs[order[r]];
      if (order[r] == ex.label) rank = r + 1;
    }
    double score = aps_sorted(sorted, rank, draw.u);
    const double penalty = rank_penalty(rank, config);
    if (penalty != 0.0) score += penalty;
    scores[i] = score;
  }
  return scores;
}

std::vector<std::size_t> naive_set(std::span<const double> probs, double alpha, std::uint64_t tie_seed) {
  const auto order = descending_order(probs, tie_seed);
  std::vector<std::size_t> out;
  double mass = 0.0;
  for (std::size_t c : order) {
    out.push_back(c);
    mass += probs[c];
    // Tolerance absorbs rounding in the running sum (e.g. 0.5+0.3+0.2).
    if (mass >= 1.0 - alpha - 1e-12) break;
  }
  return out;
}

std::size_t choose_k_reg(const Slice& slice, double alpha, std::uint64_t seed) {
  if (slice.empty()) throw InvalidInput("k_reg selection needs a non-empty validation slice");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
  std::vector<std::size_t> ranks(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const auto draw = draw_for(seed, Stream::kValidationDraw, slice.id(i));
    ranks[i] = rank_of_label(slice[i].probs, slice[i].label, draw.tie_seed);
  }
  std::sort(ranks.begin(), ranks.end());
  const double m = static_cast<double>(ranks.size());
  auto position = static_cast<std::size_t>(std::ceil((1.0 - alpha) * m - 1e-9));
  position = std::clamp<std::size_t>(position, 1, ranks.size());
  return ranks[position - 1];
}

double mean_nll(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& z = logits[i];
    double max_z = -INFINITY;
    for (double v : z) max_z = std::max(max_z, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp((v - max_z) / temperature);
    total += -((z[labels[i]] - max_z) / temperature - std::log(sum));
  }
  return total / static_cast<double>(logits.size());
}

TemperatureFit fit_temperature(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels) {
  if (logits.empty()) throw InvalidInput("temperature fit needs a non-empty scaling slice");
  if (logits.size() != labels.size()) throw InvalidInput("logits and labels differ in length");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] >= logits[i].size()) throw InvalidInput("label out of range in scaling slice");
    for (double v : logits[i]) {
      if (!std::isfinite(v)) throw InvalidInput("non-finite logit in scaling slice");
    }
  }
  constexpr double kLo = -3.0;
  constexpr double kHi = 3.0;
  constexpr double kTol = 1e-4;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto f = [&](double log_t) { return mean_nll(logits, labels, std::exp(log_t)); };

  double a = kLo;
  double b = kHi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > kTol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double log_t = 0.5 * (a + b);
  TemperatureFit fit;
  fit.initial_nll = f(0.0);
  fit.temperature = std::exp(log_t);
  fit.final_nll = f(log_t);
  fit.at_bound = (log_t - kLo) < 2 * kTol || (kHi - log_t) < 2 * kTol;
  if (fit.final_nll > fit.initial_nll) {
    fit.temperature = 1.0;
    fit.final_nll = fit.initial_nll;
    fit.at_bound = false;
  }
  return fit;
}

namespace {

std::vector<double> log_probs(std::span<const double> probs) {
  std::vector<double> z(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) z[c] = std::log(std::max(probs[c], 1e-300));
  return z;
}

}  // namespace

TemperatureFit fit_temperature_on_probs(const Slice& scaling) {
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> labels;
  logits.reserve(scaling.size());
  for (std::size_t i = 0; i < scaling.size(); ++i) {
    logits.push_back(log_probs(scaling[i].probs));
    labels.push_back(scaling[i].label);
  }
  return fit_temperature(logits, labels);
}

Dataset apply_temperature(const Dataset& data, double temperature) {
  Dataset out = data;
  if (data.task != Task::kClassification) return out;
  for (auto& ex : out.examples) ex.probs = softmax(log_probs(ex.probs), temperature);
  return out;
}

}  // namespace ncp
