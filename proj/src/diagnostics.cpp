#include "ncp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ncp/random.hpp"

namespace ncp {

namespace {

void check_points(const Points& points, std::span<const std::size_t> labels) {
  if (points.size() != labels.size()) throw InvalidInput("points and labels differ in length");
  if (points.empty()) throw InvalidInput("no points");
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw InvalidInput("embedding dimension mismatch");
  }
}

// Dense class ids 0..K-1 in order of first appearance of the sorted labels.
std::vector<std::size_t> dense_labels(std::span<const std::size_t> labels, std::size_t* classes) {
  std::map<std::size_t, std::size_t> ids;
  for (std::size_t l : labels) ids.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [label, id] : ids) id = next++;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (std::size_t l : labels) out.push_back(ids[l]);
  *classes = next;
  return out;
}

}  // namespace

double silhouette(const Points& points, std::span<const std::size_t> labels, std::size_t sample_cap,
                  std::uint64_t seed) {
  check_points(points, labels);
  std::size_t classes = 0;
  const auto dense = dense_labels(labels, &classes);
  if (classes < 2) throw InvalidInput("silhouette needs at least two classes");

  std::vector<std::size_t> sample(points.size());
  std::iota(sample.begin(), sample.end(), std::size_t{0});
  if (sample_cap > 0 && points.size() > sample_cap) {
    Rng rng(derive_seed(seed, Stream::kSilhouette));
    rng.shuffle(sample.begin(), sample.end());
    sample.resize(sample_cap);
    std::sort(sample.begin(), sample.end());
  }

  const std::size_t m = sample.size();
  std::vector<double> sums(classes);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i : sample) ++counts[dense[i]];
  double total = 0.0;
  for (std::size_t i : sample) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j : sample) {
      if (j != i) sums[dense[j]] += euclidean(points[i], points[j]);
    }
    const std::size_t own = dense[i];
    if (counts[own] < 2) continue;
    const double a = sums[own] / static_cast<double>(counts[own] - 1);
    double b = INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      if (c != own && counts[c] > 0) b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    if (std::isinf(b)) continue;
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(m);
}

double estimate_separation(const Points& points, std::span<const std::size_t> labels, double radius) {
  check_points(points, labels);
  if (!(radius >= 0.0)) throw InvalidInput("radius must be >= 0");
  std::size_t classes = 0;
  const auto dense = dense_labels(labels, &classes);
  std::vector<std::size_t> exposed(classes, 0);
  std::vector<std::size_t> counts(classes, 0);
  const double reach = 2.0 * radius;
  for (std::size_t i = 0; i < points.size(); ++i) {
    ++counts[dense[i]];
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (dense[j] != dense[i] && euclidean(points[i], points[j]) <= reach) {
        ++exposed[dense[i]];
        break;
      }
    }
  }
  double mu = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    mu = std::max(mu, static_cast<double>(exposed[c]) / static_cast<double>(counts[c]));
  }
  return mu;
}

ConcentrationEstimate estimate_concentration(const Points& points, std::span<const std::size_t> labels,
                                             std::span<const double> scores, double radius, double threshold) {
  check_points(points, labels);
  if (scores.size() != points.size()) throw InvalidInput("scores and points differ in length");
  if (!(radius >= 0.0)) throw InvalidInput("radius must be >= 0");
  std::size_t classes = 0;
  const auto dense = dense_labels(labels, &classes);
  const std::size_t n = points.size();
  const double reach = 2.0 * radius;

  std::vector<std::size_t> class_size(classes, 0);
  std::vector<std::size_t> class_low(classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++class_size[dense[i]];
    if (scores[i] <= threshold) ++class_low[dense[i]];
  }

  std::vector<double> ratio_sum(classes, 0.0);
  std::vector<std::size_t> anchors(classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = dense[i];
    if (class_low[c] == 0) continue;
    std::size_t near = 0;
    std::size_t near_low = 0;
    bool robust = true;
    for (std::size_t j = 0; j < n && robust; ++j) {
      if (j == i || euclidean(points[i], points[j]) > reach) continue;
      if (dense[j] != c) robust = false;
      ++near;
      if (scores[j] <= threshold) ++near_low;
    }
    if (!robust || near == 0) continue;
    const double local = static_cast<double>(near_low) / static_cast<double>(near);
    const double global = static_cast<double>(class_low[c]) / static_cast<double>(class_size[c]);
    ratio_sum[c] += local / global;
    ++anchors[c];
  }

  ConcentrationEstimate out;
  out.sigma_hat = INFINITY;
  for (std::size_t c = 0; c < classes; ++c) {
    if (anchors[c] == 0) continue;
    out.sigma_hat = std::min(out.sigma_hat, ratio_sum[c] / static_cast<double>(anchors[c]));
    ++out.classes_used;
  }
  out.valid = out.classes_used > 0;
  if (!out.valid) out.sigma_hat = NAN;
  return out;
}

double median_nn_distance(const Points& points) {
  if (points.size() < 2) return 0.0;
  std::vector<double> nearest(points.size(), INFINITY);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double d = euclidean(points[i], points[j]);
      nearest[i] = std::min(nearest[i], d);
      nearest[j] = std::min(nearest[j], d);
    }
  }
  const auto mid = nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2);
  std::nth_element(nearest.begin(), mid, nearest.end());
  return *mid;
}

TheoryDiagnostics compare_thresholds(const CalibratedModel& cp, const CalibratedModel& ncp, const Slice& calibration,
                                 const Slice& test, const DiagnosticsOptions& options) {
  if (cp.method != Method::kCp || ncp.method != Method::kNcp) throw InvalidInput("expected a CP and an NCP model");
  if (cp.alpha != ncp.alpha) throw InvalidInput("CP and NCP models use different alpha");
  if (cp.scores.size() != calibration.size() || ncp.scores.size() != calibration.size()) {
    throw InvalidInput("models were not calibrated on this calibration slice");
  }
  if (calibration.dataset().task != Task::kClassification) {
    throw InvalidInput("theory diagnostics need class labels");
  }
  if (test.empty()) throw InvalidInput("empty test slice");

  Points points;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    points.push_back(calibration[i].embedding);
    labels.push_back(calibration[i].label);
  }

  TheoryDiagnostics out;
  out.alpha = cp.alpha;
  out.alpha_tilde = ncp.alpha_tilde;
  out.cp_threshold = cp.cp_threshold;
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) total += test_threshold(ncp, test[i].embedding);
  out.mean_ncp_threshold = total / static_cast<double>(test.size());

  out.silhouette = silhouette(points, labels, options.silhouette_cap, options.seed);
  out.radius = options.radius > 0.0 ? options.radius : median_nn_distance(points);
  out.mu_hat = estimate_separation(points, labels, out.radius);

  out.sigma_threshold = std::isnan(options.threshold) ? cp.cp_threshold : options.threshold;
  if (std::isinf(out.sigma_threshold)) out.sigma_threshold = *std::max_element(cp.scores.begin(), cp.scores.end());
  const auto sigma = estimate_concentration(points, labels, cp.scores, out.radius, out.sigma_threshold);
  out.sigma_hat = sigma.sigma_hat;
  out.sigma_valid = sigma.valid;

  std::map<std::size_t, std::size_t> freq;
  for (std::size_t l : labels) ++freq[l];
  std::size_t smallest = labels.size();
  for (const auto& [label, count] : freq) smallest = std::min(smallest, count);
  out.p_class_min = static_cast<double>(smallest) / static_cast<double>(labels.size());
  out.assumption_lhs = (1.0 - out.mu_hat) * out.sigma_hat;
  out.assumption_rhs = (1.0 - out.alpha) / (1.0 - out.alpha * (2.0 - out.p_class_min));
  return out;
}

}  // namespace ncp
