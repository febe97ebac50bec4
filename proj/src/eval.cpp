#include "ncp/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <ostream>
#include <thread>

#include "ncp/ingest.hpp"

namespace ncp {

double coverage(std::span<const PredictionOutput> outputs, const Slice& examples) {
  if (outputs.size() != examples.size()) throw InvalidInput("outputs and examples differ in length");
  if (outputs.empty()) throw InvalidInput("coverage of an empty output list");
  const Task task = examples.dataset().task;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].contains(examples[i], task)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(outputs.size());
}

EfficiencySummary efficiency(std::span<const PredictionOutput> outputs, Task task) {
  if (outputs.empty()) throw InvalidInput("efficiency of an empty output list");
  EfficiencySummary out;
  double total = 0.0;
  std::size_t finite = 0;
  for (const auto& o : outputs) {
    const double size = o.size(task);
    if (std::isinf(size)) {
      ++out.infinite;
      continue;
    }
    total += size;
    ++finite;
  }
  out.finite_mean = finite ? total / static_cast<double>(finite) : INFINITY;
  out.mean = out.infinite ? INFINITY : out.finite_mean;
  return out;
}

TuneGrid TuneGrid::standard() {
  TuneGrid grid;
  grid.k_fracs = {0.05, 0.10, 0.20, 0.30, 0.50, 1.0};
  grid.lambda_ls = {10, 50, 100, 500, 1000, 5000};
  grid.lambda_rs = {0.001, 0.005, 0.01, 0.05, 0.15, 0.2, 0.3, 0.4, 0.5, 1.0};
  return grid;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size() - 1))};
}

namespace {

constexpr double kCoverageSlack = 1e-12;

ScoreConfig resolve_score(const MethodSpec& method, const Slice& validation, double alpha, std::uint64_t seed) {
  ScoreConfig score = method.score;
  if (score.kind == ScoreKind::kRaps && method.auto_k_reg && !validation.empty()) {
    score.k_reg = choose_k_reg(validation, alpha, seed);
  }
  return score;
}

// Validation-side quantities that do not depend on the localizer.
struct ValidationScores {
  // Classification: candidate scores in rank order, and the label's score.
  std::vector<std::vector<double>> candidates;
  std::vector<std::size_t> top_label;
  std::vector<double> label_score;
  std::vector<std::size_t> labels;
  // Regression residuals.
  std::vector<double> residuals;
};

ValidationScores validation_scores(const Slice& validation, const ScoreConfig& score, std::uint64_t seed) {
  ValidationScores out;
  const Task task = validation.dataset().task;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const auto& ex = validation[i];
    if (task == Task::kRegression) {
      out.residuals.push_back(abs_residual(ex.target, ex.prediction));
      continue;
    }
    const auto ranked = candidate_scores(ex.probs, score, draw_for(seed, Stream::kValidationDraw, validation.id(i)));
    std::vector<double> values;
    values.reserve(ranked.size());
    double label_score = 0.0;
    for (const auto& r : ranked) {
      values.push_back(r.score);
      if (r.label == ex.label) label_score = r.score;
    }
    out.candidates.push_back(std::move(values));
    out.top_label.push_back(ranked.front().label);
    out.label_score.push_back(label_score);
    out.labels.push_back(ex.label);
  }
  return out;
}

// Coverage and efficiency on validation for per-example thresholds.
std::pair<double, double> evaluate_thresholds(const ValidationScores& v, Task task, std::span<const double> thresholds,
                                              bool force_nonempty) {
  std::size_t hit = 0;
  double total = 0.0;
  const std::size_t m = thresholds.size();
  for (std::size_t i = 0; i < m; ++i) {
    const double t = thresholds[i];
    if (task == Task::kRegression) {
      if (v.residuals[i] <= t) ++hit;
      total += 2.0 * t;
      continue;
    }
    std::size_t size = 0;
    for (double s : v.candidates[i]) {
      if (s <= t) ++size;
    }
    bool covered = v.label_score[i] <= t;
    if (size == 0 && force_nonempty) {
      size = 1;
      covered = v.top_label[i] == v.labels[i];
    }
    if (covered) ++hit;
    total += static_cast<double>(size);
  }
  return {static_cast<double>(hit) / static_cast<double>(m), total / static_cast<double>(m)};
}

bool better_row(const TuneRow& a, const TuneRow& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (!a.feasible && a.coverage != b.coverage) return a.coverage > b.coverage;
  if (a.efficiency != b.efficiency) return a.efficiency < b.efficiency;
  if (a.lambda_l != b.lambda_l) return a.lambda_l < b.lambda_l;
  if (a.k_frac != b.k_frac) return a.k_frac < b.k_frac;
  return a.lambda_r < b.lambda_r;
}

}  // namespace

TuneResult grid_tune(const Slice& calibration, const Slice& validation, const MethodSpec& method, double alpha,
                     std::uint64_t seed, bool force_nonempty) {
  if (validation.empty()) throw InvalidInput("grid tuning needs a non-empty validation split");
  if (calibration.empty()) throw InvalidInput("grid tuning needs a non-empty calibration split");
  const Task task = calibration.dataset().task;
  const ScoreConfig base_score = resolve_score(method, validation, alpha, seed);
  const bool raps = base_score.kind == ScoreKind::kRaps;
  const bool ncp = method.method == Method::kNcp;
  const LocalizerConfig& base_loc = method.localizer;

  std::vector<double> lambda_rs = raps && !method.grid.lambda_rs.empty() ? method.grid.lambda_rs
                                                                         : std::vector<double>{base_score.lambda_r};
  std::vector<double> lambda_ls{base_loc.lambda_l};
  std::vector<double> k_fracs{base_loc.mode == LocalizerMode::kAllExp ? 1.0 : base_loc.k_frac};
  if (ncp && base_loc.mode != LocalizerMode::kBall && !method.grid.lambda_ls.empty()) lambda_ls = method.grid.lambda_ls;
  if (ncp && base_loc.mode == LocalizerMode::kKnnExp && !method.grid.k_fracs.empty()) k_fracs = method.grid.k_fracs;
  if (lambda_rs.empty() || lambda_ls.empty() || k_fracs.empty()) throw InvalidInput("empty tuning grid");
  if (ncp && base_loc.k != 0) k_fracs = {base_loc.k_frac};

  TuneResult result;
  const std::size_t n = calibration.size();
  NeighborCache cal_cache;
  NeighborCache val_cache;
  std::size_t cal_pool = n;
  if (ncp) {
    base_loc.validate();
    if (method.options.leave_one_out && n < 2) throw InvalidInput("leave-one-out NCP needs at least 2 calibration points");
    std::vector<std::vector<double>> cal_points;
    std::vector<std::vector<double>> val_points;
    for (std::size_t i = 0; i < n; ++i) cal_points.push_back(calibration[i].embedding);
    for (std::size_t i = 0; i < validation.size(); ++i) val_points.push_back(validation[i].embedding);
    const NeighborIndex index(cal_points);
    cal_pool = method.options.leave_one_out ? n - 1 : n;
    cal_cache = NeighborCache::for_index(index, cal_pool, method.options.leave_one_out);
    val_cache = NeighborCache::for_queries(index, val_points, n);
  }

  for (double lambda_r : lambda_rs) {
    ScoreConfig score = base_score;
    score.lambda_r = lambda_r;
    const ScoreVector scores = calibration_scores(calibration, score, seed);
    const ValidationScores vscores = validation_scores(validation, score, seed);
    std::vector<double> thresholds(validation.size());

    if (method.method == Method::kNaive) {
      TuneRow row;
      row.lambda_r = lambda_r;
      for (std::size_t i = 0; i < validation.size(); ++i) {
        const auto set = naive_set(validation[i].probs, alpha,
                                   draw_for(seed, Stream::kValidationDraw, validation.id(i)).tie_seed);
        row.efficiency += static_cast<double>(set.size());
        if (std::find(set.begin(), set.end(), validation[i].label) != set.end()) row.coverage += 1.0;
      }
      row.efficiency /= static_cast<double>(validation.size());
      row.coverage /= static_cast<double>(validation.size());
      row.feasible = row.coverage >= 1.0 - alpha - kCoverageSlack;
      result.table.push_back(row);
      continue;
    }
    if (!ncp) {
      const double t = cp_quantile(scores, alpha).threshold;
      std::fill(thresholds.begin(), thresholds.end(), t);
      const auto [cov, eff] = evaluate_thresholds(vscores, task, thresholds, force_nonempty);
      result.table.push_back({0.0, 0.0, lambda_r, cov, eff, cov >= 1.0 - alpha - kCoverageSlack});
      continue;
    }

    const auto cal_order = cal_cache.score_order(scores);
    const auto val_order = val_cache.score_order(scores);
    for (double lambda_l : lambda_ls) {
      LocalizerConfig loc = base_loc;
      loc.lambda_l = lambda_l;
      const auto cal_raw = cal_cache.raw_weights(loc);
      const auto val_raw = val_cache.raw_weights(loc);
      for (double k_frac : k_fracs) {
        loc.k_frac = k_frac;
        const bool ball = loc.mode == LocalizerMode::kBall;
        const std::size_t cal_depth = ball ? cal_pool : loc.resolve_k(cal_pool);
        const std::size_t val_depth = ball ? n : loc.resolve_k(n);
        const auto cal_weights = cal_cache.sorted_weights(scores, cal_order, cal_raw, cal_depth);
        const auto search = ncp_alpha_search(scores, cal_weights, alpha);
        const auto val_weights = val_cache.sorted_weights(scores, val_order, val_raw, val_depth);
        for (std::size_t i = 0; i < validation.size(); ++i) thresholds[i] = val_weights[i].threshold(search.alpha_tilde);
        const auto [cov, eff] = evaluate_thresholds(vscores, task, thresholds, force_nonempty);
        result.table.push_back({k_frac, lambda_l, lambda_r, cov, eff, cov >= 1.0 - alpha - kCoverageSlack});
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t r = 1; r < result.table.size(); ++r) {
    if (better_row(result.table[r], result.table[best])) best = r;
  }
  result.best_row = best;
  result.any_feasible = result.table[best].feasible;
  result.best = method;
  result.best.score = base_score;
  result.best.auto_k_reg = false;
  result.best.tune = false;
  result.best.score.lambda_r = result.table[best].lambda_r;
  if (ncp) {
    result.best.localizer.lambda_l = result.table[best].lambda_l;
    if (base_loc.mode == LocalizerMode::kKnnExp) result.best.localizer.k_frac = result.table[best].k_frac;
  }
  return result;
}

TrialReport run_method(const Dataset& data, const SplitIndices& parts, const MethodSpec& method, double alpha,
                       std::uint64_t split_seed, bool force_nonempty) {
  const Slice calibration(data, parts.calibration);
  const Slice validation(data, parts.validation);
  const Slice test(data, parts.test);
  if (test.empty()) throw InvalidInput("test split is empty");

  MethodSpec chosen = method;
  chosen.score = resolve_score(method, validation, alpha, split_seed);
  chosen.auto_k_reg = false;
  if (method.tune && !validation.empty() && method.method != Method::kNaive) {
    chosen = grid_tune(calibration, validation, chosen, alpha, split_seed, force_nonempty).best;
  }

  CalibratedModel model;
  switch (chosen.method) {
    case Method::kCp:
      model = calibrate_cp(calibration, chosen.score, alpha, split_seed);
      break;
    case Method::kNcp:
      model = calibrate_ncp(calibration, chosen.score, chosen.localizer, alpha, split_seed, chosen.options);
      break;
    case Method::kNaive:
      model = make_naive(data, alpha, split_seed);
      break;
  }
  const auto outputs = predict(model, test, force_nonempty);

  TrialReport report;
  report.method = method.name;
  report.seed = split_seed;
  report.coverage = coverage(outputs, test);
  const auto eff = efficiency(outputs, data.task);
  report.efficiency = eff.mean;
  report.infinite = eff.infinite;
  report.cp_threshold = model.cp_threshold;
  report.alpha_tilde = model.alpha_tilde;
  report.k_reg = chosen.score.kind == ScoreKind::kRaps ? chosen.score.k_reg : 0;
  report.lambda_r = chosen.score.lambda_r;
  if (chosen.method == Method::kNcp) {
    report.k_frac = chosen.localizer.mode == LocalizerMode::kAllExp ? 1.0 : chosen.localizer.k_frac;
    report.lambda_l = chosen.localizer.lambda_l;
  }
  if (chosen.method != Method::kNaive) {
    double neighbors = 0.0;
    double thresholds = 0.0;
    std::size_t finite = 0;
    for (const auto& o : outputs) {
      neighbors += static_cast<double>(o.neighbors);
      if (!o.infinite()) {
        thresholds += o.threshold;
        ++finite;
      }
    }
    report.neighbor_frac_used = neighbors / static_cast<double>(outputs.size()) / static_cast<double>(calibration.size());
    report.mean_threshold = finite ? thresholds / static_cast<double>(finite) : INFINITY;
  }
  return report;
}

ExperimentReport run_trials(const Dataset& data, std::span<const MethodSpec> methods, const ExperimentConfig& config) {
  if (config.trials == 0) throw InvalidInput("trials must be at least 1");
  if (methods.empty()) throw InvalidInput("no methods to evaluate");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
  ExperimentReport report;
  report.config = config;
  for (const auto& m : methods) report.methods.push_back(m.name);
  report.trials.assign(methods.size(), std::vector<TrialReport>(config.trials));

  std::vector<std::exception_ptr> errors(config.trials);
  auto run_one = [&](std::size_t t) {
    try {
      SplitSpec spec = config.sizes;
      spec.seed = config.base_seed + t;
      const auto parts = split(data, spec);
      const Dataset* working = &data;
      Dataset scaled;
      double temperature = 1.0;
      if (config.temperature_scaling && !parts.scaling.empty() && data.task == Task::kClassification) {
        temperature = fit_temperature_on_probs(Slice(data, parts.scaling)).temperature;
        scaled = apply_temperature(data, temperature);
        working = &scaled;
      }
      for (std::size_t m = 0; m < methods.size(); ++m) {
        auto r = run_method(*working, parts, methods[m], config.alpha, spec.seed, config.force_nonempty);
        r.temperature = temperature;
        report.trials[m][t] = std::move(r);
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(config.jobs, 1, config.trials);
  if (jobs == 1) {
    for (std::size_t t = 0; t < config.trials; ++t) run_one(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t t = next++; t < config.trials; t = next++) run_one(t);
      });
    }
    for (auto& w : workers) w.join();
  }
  for (std::size_t t = 0; t < config.trials; ++t) {
    if (!errors[t]) continue;
    try {
      std::rethrow_exception(errors[t]);
    } catch (const std::exception& e) {
      throw Error("trial " + std::to_string(t) + " (seed " + std::to_string(config.base_seed + t) +
                  ") failed: " + e.what());
    }
  }
  return report;
}

std::vector<MethodSummary> ExperimentReport::summary() const {
  std::vector<MethodSummary> out;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary s;
    s.method = methods[m];
    s.trials = trials[m].size();
    std::vector<double> cov;
    std::vector<double> eff;
    for (const auto& t : trials[m]) {
      cov.push_back(t.coverage);
      if (std::isinf(t.efficiency)) {
        ++s.infinite_trials;
      } else {
        eff.push_back(t.efficiency);
      }
    }
    std::tie(s.coverage_mean, s.coverage_std) = mean_std(cov);
    if (eff.empty()) {
      s.efficiency_mean = INFINITY;
    } else {
      std::tie(s.efficiency_mean, s.efficiency_std) = mean_std(eff);
    }
    out.push_back(s);
  }
  return out;
}

void write_report_csv(const ExperimentReport& report, std::ostream& out) {
  out << "method,metric,mean,std,trials\n";
  for (const auto& s : report.summary()) {
    out << s.method << ",coverage," << format_double(s.coverage_mean) << ',' << format_double(s.coverage_std) << ','
        << s.trials << '\n';
    out << s.method << ",efficiency," << format_double(s.efficiency_mean) << ',' << format_double(s.efficiency_std)
        << ',' << s.trials - s.infinite_trials << '\n';
  }
}

void write_trials_csv(const ExperimentReport& report, std::ostream& out) {
  out << "method,trial,seed,coverage,efficiency,infinite,neighbor_frac,mean_threshold,cp_threshold,alpha_tilde,"
         "temperature,k_reg,lambda_r,k_frac,lambda_l\n";
  for (std::size_t m = 0; m < report.methods.size(); ++m) {
    for (std::size_t t = 0; t < report.trials[m].size(); ++t) {
      const auto& r = report.trials[m][t];
      out << r.method << ',' << t << ',' << r.seed << ',' << format_double(r.coverage) << ','
          << format_double(r.efficiency) << ',' << r.infinite << ',' << format_double(r.neighbor_frac_used) << ','
          << format_double(r.mean_threshold) << ',' << format_double(r.cp_threshold) << ','
          << format_double(r.alpha_tilde) << ',' << format_double(r.temperature) << ',' << r.k_reg << ','
          << format_double(r.lambda_r) << ',' << format_double(r.k_frac) << ',' << format_double(r.lambda_l) << '\n';
    }
  }
}

void write_tune_csv(const TuneResult& result, std::ostream& out) {
  out << "k_frac,lambda_l,lambda_r,coverage,efficiency,feasible,selected\n";
  for (std::size_t r = 0; r < result.table.size(); ++r) {
    const auto& row = result.table[r];
    out << format_double(row.k_frac) << ',' << format_double(row.lambda_l) << ',' << format_double(row.lambda_r) << ','
        << format_double(row.coverage) << ',' << format_double(row.efficiency) << ',' << (row.feasible ? 1 : 0) << ','
        << (r == result.best_row ? 1 : 0) << '\n';
  }
}

std::string format_table(const ExperimentReport& report) {
  std::string out = fmt::format("{:<20} {:>20} {:>22} {:>7}\n", "method", "coverage", "efficiency", "trials");
  for (const auto& s : report.summary()) {
    std::string eff = fmt::format("{:.4f} ({:.4f})", s.efficiency_mean, s.efficiency_std);
    if (s.infinite_trials) eff += fmt::format(" [{} inf]", s.infinite_trials);
    out += fmt::format("{:<20} {:>20} {:>22} {:>7}\n", s.method,
                       fmt::format("{:.4f} ({:.4f})", s.coverage_mean, s.coverage_std), eff, s.trials);
  }
  return out;
}

}  // namespace ncp
