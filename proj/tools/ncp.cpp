// ncp: command-line front end for split and neighbourhood conformal prediction.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ncp/diagnostics.hpp"
#include "ncp/engine.hpp"
#include "ncp/eval.hpp"
#include "ncp/ingest.hpp"
#include "ncp/mlp.hpp"

namespace fs = std::filesystem;
using namespace ncp;

namespace {

constexpr const char* kVersion = "ncp 1.0.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string data;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  double alpha = 0.1;

  std::vector<std::string> methods{"cp"};
  std::string score;
  double lambda_r = 0.0;
  std::size_t k_reg = 0;
  std::string penalty = "abs";
  bool temperature_scaling = false;

  std::string localizer = "knn_exp";
  double k_frac = 0.1;
  std::size_t k = 0;
  double lambda_l = 100.0;
  double radius = 1.0;
  std::string search = "exact";
  std::size_t lsh_tables = 8;
  std::size_t lsh_projections = 8;
  double lsh_width = 0.0;
  bool self_include = false;
  bool tune = false;
  bool force_nonempty = false;

  std::vector<std::size_t> sizes;
  std::string part = "all";
  std::size_t trials = 1;
  std::size_t jobs = 1;

  // synth
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 100;
  double separation = 8.0;
  double noise_temp = 1.0;
  double confidence_spread = 1.0;
  std::string file;

  // diagnose
  double diag_radius = 0.0;
  double diag_threshold = NAN;

  // fit-mlp
  std::string target = "compressive_strength";
  double train_frac = 0.5;
  std::size_t epochs = 500;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden{15, 20, 30};
};

fs::path output_dir(const RunConfig& rc) {
  fs::path dir = rc.out;
  if (dir.empty()) {
    const char* env = std::getenv("NCP_OUTPUT_DIR");
    dir = env && *env ? fs::path(env) : fs::path(".");
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void write_run_config(const CLI::App& sub, const fs::path& dir) {
  std::string text = std::string("# ") + kVersion + "\n";
  text += "subcommand = \"" + sub.get_name() + "\"\n";
  text += sub.config_to_str(true, false);
  write_text(dir / "run_config.txt", text);
}

Dataset load_data(const RunConfig& rc) {
  if (rc.data.empty()) throw UsageError("--data is required");
  return read_dataset(fs::path(rc.data));
}

SplitSpec split_spec(const RunConfig& rc, std::size_t n) {
  SplitSpec spec;
  spec.seed = rc.seed;
  if (rc.sizes.empty()) {
    // 40% calibration, 20% validation, 40% test.
    spec.calibration = n * 2 / 5;
    spec.validation = n / 5;
    spec.test = n - spec.calibration - spec.validation;
    return spec;
  }
  if (rc.sizes.size() != 4) throw UsageError("--sizes takes four counts: calibration,scaling,validation,test");
  spec.calibration = rc.sizes[0];
  spec.scaling = rc.sizes[1];
  spec.validation = rc.sizes[2];
  spec.test = rc.sizes[3];
  return spec;
}

std::vector<std::size_t> part_indices(const SplitIndices& parts, const std::string& name) {
  if (name == "calibration") return parts.calibration;
  if (name == "scaling") return parts.scaling;
  if (name == "validation") return parts.validation;
  if (name == "test") return parts.test;
  throw UsageError("unknown partition '" + name + "'");
}

ScoreConfig score_config(const RunConfig& rc, const Dataset& data) {
  ScoreConfig score;
  if (rc.score.empty()) {
    score.kind = data.task == Task::kRegression ? ScoreKind::kAbsResidual : ScoreKind::kAps;
  } else {
    score.kind = parse_score_kind(rc.score);
  }
  score.lambda_r = rc.lambda_r;
  score.k_reg = rc.k_reg == 0 ? 1 : rc.k_reg;
  score.penalty = parse_raps_penalty(rc.penalty);
  if (!score.matches(data.task)) {
    throw InvalidInput(std::string("score ") + to_string(score.kind) + " does not fit a " + to_string(data.task) +
                       " dataset");
  }
  return score;
}

LocalizerConfig localizer_config(const RunConfig& rc) {
  LocalizerConfig loc;
  loc.mode = parse_localizer_mode(rc.localizer);
  loc.k_frac = rc.k_frac;
  loc.k = rc.k;
  loc.lambda_l = rc.lambda_l;
  loc.radius = rc.radius;
  loc.search = parse_search_kind(rc.search);
  loc.lsh.tables = rc.lsh_tables;
  loc.lsh.projections = rc.lsh_projections;
  loc.lsh.width = rc.lsh_width;
  loc.lsh.seed = rc.seed;
  loc.validate();
  return loc;
}

MethodSpec method_spec(const RunConfig& rc, const std::string& method_name, const Dataset& data) {
  MethodSpec m;
  m.method = parse_method(method_name);
  m.score = score_config(rc, data);
  m.auto_k_reg = rc.k_reg == 0;
  m.localizer = localizer_config(rc);
  m.options.leave_one_out = !rc.self_include;
  m.tune = rc.tune;
  m.name = method_name;
  if (m.method != Method::kNaive) m.name += std::string("_") + to_string(m.score.kind);
  if (m.method == Method::kNcp && m.localizer.mode != LocalizerMode::kKnnExp) {
    m.name += std::string("_") + to_string(m.localizer.mode);
  }
  return m;
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& rc, const fs::path& dir) {
  SynthConfig config;
  config.num_classes = rc.classes;
  config.dim = rc.dim;
  config.per_class = rc.per_class;
  config.separation = rc.separation;
  config.noise_temp = rc.noise_temp;
  config.confidence_spread = rc.confidence_spread;
  config.seed = rc.seed;
  const auto data = synth_gaussian_mixture(config);
  const auto path = dir / (rc.file.empty() ? "dataset.csv" : rc.file);
  write_dataset(data, path);
  std::cout << fmt::format("wrote {} examples to {}\n", data.size(), path.string());
}

void cmd_calibrate(const RunConfig& rc, const fs::path& dir) {
  const Dataset raw = load_data(rc);
  if (rc.methods.size() != 1) throw UsageError("calibrate takes exactly one --method");
  const auto parts = split(raw, split_spec(rc, raw.size()));
  double temperature = 1.0;
  Dataset data = raw;
  if (rc.temperature_scaling) {
    if (parts.scaling.empty()) throw UsageError("--temperature-scaling needs a non-empty scaling partition");
    temperature = fit_temperature_on_probs(Slice(raw, parts.scaling)).temperature;
    data = apply_temperature(raw, temperature);
  }
  const Slice calibration(data, parts.calibration);
  const Slice validation(data, parts.validation);
  MethodSpec m = method_spec(rc, rc.methods.front(), data);
  if (m.score.kind == ScoreKind::kRaps && m.auto_k_reg && !validation.empty()) {
    m.score.k_reg = choose_k_reg(validation, rc.alpha, rc.seed);
  }
  m.auto_k_reg = false;
  if (m.tune) {
    if (validation.empty()) throw UsageError("--tune needs a non-empty validation partition");
    m = grid_tune(calibration, validation, m, rc.alpha, rc.seed, rc.force_nonempty).best;
  }
  CalibratedModel model;
  switch (m.method) {
    case Method::kCp:
      model = calibrate_cp(calibration, m.score, rc.alpha, rc.seed);
      break;
    case Method::kNcp:
      model = calibrate_ncp(calibration, m.score, m.localizer, rc.alpha, rc.seed, m.options);
      break;
    case Method::kNaive:
      model = make_naive(data, rc.alpha, rc.seed);
      break;
  }
  model.temperature = temperature;
  const auto path = dir / (rc.file.empty() ? "model.txt" : rc.file);
  save_model(model, path);
  std::cout << fmt::format("calibrated {} on {} examples", m.name, calibration.size());
  if (model.method == Method::kNcp) std::cout << fmt::format(", alpha_tilde={:.6g}", model.alpha_tilde);
  if (model.method == Method::kCp) std::cout << fmt::format(", threshold={:.6g}", model.cp_threshold);
  std::cout << fmt::format("\nwrote {}\n", path.string());
}

void cmd_predict(const RunConfig& rc, const fs::path& dir) {
  if (rc.model.empty()) throw UsageError("--model is required");
  const auto model = load_model(fs::path(rc.model));
  const Dataset data = load_data(rc);
  if (data.task != model.task) throw InvalidInput("dataset task does not match the model");
  if (data.dim != model.dim && model.method == Method::kNcp) {
    throw InvalidInput(fmt::format("embedding dimension {} does not match model dimension {}", data.dim, model.dim));
  }
  std::vector<std::size_t> ids;
  if (rc.part == "all") {
    ids.resize(data.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  } else {
    ids = part_indices(split(data, split_spec(rc, data.size())), rc.part);
  }
  const Slice test(data, ids);
  if (test.empty()) throw InvalidInput("no examples to predict");
  const auto outputs = predict(model, test, rc.force_nonempty);

  std::ostringstream csv;
  if (data.task == Task::kRegression) {
    csv << "index,target,prediction,lower,upper,threshold,covered,neighbors\n";
  } else {
    csv << "index,label,set,size,threshold,covered,neighbors,forced\n";
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& o = outputs[i];
    const bool covered = o.contains(test[i], data.task);
    if (data.task == Task::kRegression) {
      csv << test.id(i) << ',' << format_double(test[i].target) << ',' << format_double(test[i].prediction) << ','
          << format_double(o.lower) << ',' << format_double(o.upper) << ',' << format_double(o.threshold) << ','
          << covered << ',' << o.neighbors << '\n';
    } else {
      std::string set;
      for (std::size_t c : o.set) {
        if (!set.empty()) set += ' ';
        set += std::to_string(c);
      }
      csv << test.id(i) << ',' << test[i].label << ',' << set << ',' << o.set.size() << ','
          << format_double(o.threshold) << ',' << covered << ',' << o.neighbors << ',' << o.forced << '\n';
    }
  }
  const auto path = dir / (rc.file.empty() ? "predictions.csv" : rc.file);
  write_text(path, csv.str());
  const auto eff = efficiency(outputs, data.task);
  std::cout << fmt::format("coverage={:.6f} efficiency={:.6f} infinite={} n={}\nwrote {}\n", coverage(outputs, test),
                           eff.mean, eff.infinite, test.size(), path.string());
}

ExperimentConfig experiment_config(const RunConfig& rc, std::size_t n) {
  ExperimentConfig config;
  config.sizes = split_spec(rc, n);
  config.alpha = rc.alpha;
  config.trials = rc.trials;
  config.base_seed = rc.seed;
  config.jobs = rc.jobs;
  config.force_nonempty = rc.force_nonempty;
  config.temperature_scaling = rc.temperature_scaling;
  return config;
}

void cmd_evaluate(const RunConfig& rc, const fs::path& dir) {
  const Dataset data = load_data(rc);
  std::vector<MethodSpec> methods;
  for (const auto& m : rc.methods) methods.push_back(method_spec(rc, m, data));
  const auto report = run_trials(data, methods, experiment_config(rc, data.size()));
  std::ostringstream summary;
  write_report_csv(report, summary);
  write_text(dir / "report.csv", summary.str());
  std::ostringstream trials;
  write_trials_csv(report, trials);
  write_text(dir / "trials.csv", trials.str());
  const auto table = format_table(report);
  write_text(dir / "report.txt", table);
  std::cout << table;
}

void cmd_tune(const RunConfig& rc, const fs::path& dir) {
  const Dataset data = load_data(rc);
  if (rc.methods.size() != 1) throw UsageError("tune takes exactly one --method");
  const auto parts = split(data, split_spec(rc, data.size()));
  MethodSpec m = method_spec(rc, rc.methods.front(), data);
  const auto result =
      grid_tune(Slice(data, parts.calibration), Slice(data, parts.validation), m, rc.alpha, rc.seed, rc.force_nonempty);
  std::ostringstream table;
  write_tune_csv(result, table);
  write_text(dir / "tune.csv", table.str());
  const auto& best = result.best;
  std::string cfg;
  cfg += fmt::format("method={}\n", to_string(best.method));
  cfg += fmt::format("score={}\n", to_string(best.score.kind));
  cfg += fmt::format("lambda_r={}\n", format_double(best.score.lambda_r));
  cfg += fmt::format("k_reg={}\n", best.score.k_reg);
  cfg += fmt::format("penalty={}\n", to_string(best.score.penalty));
  cfg += fmt::format("localizer={}\n", to_string(best.localizer.mode));
  cfg += fmt::format("k_frac={}\n", format_double(best.localizer.k_frac));
  cfg += fmt::format("lambda_l={}\n", format_double(best.localizer.lambda_l));
  cfg += fmt::format("feasible={}\n", result.any_feasible ? 1 : 0);
  const auto& row = result.table[result.best_row];
  cfg += fmt::format("validation_coverage={}\n", format_double(row.coverage));
  cfg += fmt::format("validation_efficiency={}\n", format_double(row.efficiency));
  write_text(dir / "best_config.txt", cfg);
  std::cout << cfg;
}

void cmd_diagnose(const RunConfig& rc, const fs::path& dir) {
  const Dataset data = load_data(rc);
  const auto parts = split(data, split_spec(rc, data.size()));
  const Slice calibration(data, parts.calibration);
  const Slice test(data, parts.test);
  if (test.empty()) throw UsageError("diagnose needs a non-empty test partition");
  const MethodSpec m = method_spec(rc, "ncp", data);
  const auto cp = calibrate_cp(calibration, m.score, rc.alpha, rc.seed);
  const auto ncp = calibrate_ncp(calibration, m.score, m.localizer, rc.alpha, rc.seed, m.options);
  DiagnosticsOptions options;
  options.radius = rc.diag_radius;
  options.threshold = rc.diag_threshold;
  options.seed = rc.seed;
  const auto d = compare_thresholds(cp, ncp, calibration, test, options);

  const std::vector<std::pair<std::string, double>> fields{
      {"silhouette", d.silhouette},
      {"radius", d.radius},
      {"mu_hat", d.mu_hat},
      {"sigma_hat", d.sigma_hat},
      {"sigma_valid", d.sigma_valid ? 1.0 : 0.0},
      {"sigma_threshold", d.sigma_threshold},
      {"p_class_min", d.p_class_min},
      {"assumption_lhs", d.assumption_lhs},
      {"assumption_rhs", d.assumption_rhs},
      {"assumption_holds", d.assumption_holds() ? 1.0 : 0.0},
      {"alpha", d.alpha},
      {"alpha_tilde", d.alpha_tilde},
      {"mean_ncp_threshold", d.mean_ncp_threshold},
      {"cp_threshold", d.cp_threshold},
      {"ncp_threshold_smaller", d.ncp_threshold_smaller() ? 1.0 : 0.0},
  };
  std::string kv;
  std::string csv = "key,value\n";
  for (const auto& [key, value] : fields) {
    kv += key + "=" + format_double(value) + "\n";
    csv += key + "," + format_double(value) + "\n";
  }
  write_text(dir / "diagnostics.txt", kv);
  write_text(dir / "diagnostics.csv", csv);
  std::cout << kv;
}

void cmd_fit_mlp(const RunConfig& rc, const fs::path& dir) {
  if (rc.data.empty()) throw UsageError("--data is required");
  const auto table = read_numeric_csv(fs::path(rc.data));
  MlpConfig config;
  config.hidden = rc.hidden;
  config.epochs = rc.epochs;
  config.batch = rc.batch;
  config.learning_rate = rc.learning_rate;
  config.seed = rc.seed;
  const auto result = mlp_regression_dataset(table, rc.target, rc.train_frac, config);
  const auto path = dir / (rc.file.empty() ? "dataset.csv" : rc.file);
  write_dataset(result.data, path);
  std::cout << fmt::format("trained on {} rows (mse {:.4f}); wrote {} held-out rows to {}\n", result.train_rows.size(),
                           result.train_mse, result.data.size(), path.string());
}

void add_common(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--seed", rc.seed, "Base seed for every random draw");
  sub->add_option("--out", rc.out, "Output directory (default: $NCP_OUTPUT_DIR or .)");
}

void add_file(CLI::App* sub, RunConfig& rc, const std::string& fallback) {
  sub->add_option("--file", rc.file, "Output file name inside the output directory (default " + fallback + ")");
}

void add_split(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--sizes", rc.sizes, "Partition sizes: calibration,scaling,validation,test")->delimiter(',');
}

void add_method(CLI::App* sub, RunConfig& rc, bool many) {
  auto* opt = sub->add_option("--method", rc.methods, many ? "Methods: cp, ncp, naive (repeatable)" : "cp, ncp or naive")
                  ->check(CLI::IsMember({"cp", "ncp", "naive"}));
  if (!many) opt->expected(1);
  sub->add_option("--alpha", rc.alpha, "Target miscoverage")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--score", rc.score, "aps, raps or abs_residual (default by task)");
  sub->add_option("--lambda-r", rc.lambda_r, "RAPS regularization");
  sub->add_option("--k-reg", rc.k_reg, "RAPS reference rank (0: choose on validation)");
  sub->add_option("--penalty", rc.penalty, "RAPS penalty: abs or hinge");
  sub->add_flag("--temperature-scaling", rc.temperature_scaling, "Fit a temperature on the scaling partition");
  sub->add_option("--localizer", rc.localizer, "ball, knn_exp or all_exp");
  sub->add_option("--k-frac", rc.k_frac, "Neighbour count as a fraction of calibration size");
  sub->add_option("--k", rc.k, "Neighbour count (overrides --k-frac)");
  sub->add_option("--lambda-l", rc.lambda_l, "Exponential kernel scale");
  sub->add_option("--radius", rc.radius, "Ball radius");
  sub->add_option("--search", rc.search, "exact or lsh");
  sub->add_option("--lsh-tables", rc.lsh_tables, "LSH hash tables");
  sub->add_option("--lsh-projections", rc.lsh_projections, "LSH projections per table");
  sub->add_option("--lsh-width", rc.lsh_width, "LSH bucket width (0: median pairwise distance / 4)");
  sub->add_flag("--self-include", rc.self_include, "Keep each calibration point in its own neighbourhood");
  sub->add_flag("--force-nonempty", rc.force_nonempty, "Insert the top class into empty sets");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split and neighbourhood conformal prediction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  RunConfig rc;

  auto* synth = app.add_subcommand("synth", "Write a synthetic Gaussian-mixture classification dataset");
  add_common(synth, rc);
  add_file(synth, rc, "dataset.csv");
  synth->add_option("--classes", rc.classes, "Number of classes");
  synth->add_option("--dim", rc.dim, "Embedding dimension");
  synth->add_option("--per-class", rc.per_class, "Examples per class");
  synth->add_option("--separation", rc.separation, "Distance between class centroids");
  synth->add_option("--noise-temp", rc.noise_temp, "Classifier temperature");
  synth->add_option("--confidence-spread", rc.confidence_spread, "Ratio of flattest to sharpest region temperature");

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate a model on the calibration partition");
  add_common(calibrate, rc);
  add_file(calibrate, rc, "model.txt");
  calibrate->add_option("--data", rc.data, "Dataset file")->required();
  add_split(calibrate, rc);
  add_method(calibrate, rc, false);
  calibrate->add_flag("--tune", rc.tune, "Grid-tune on the validation partition first");

  auto* predict_cmd = app.add_subcommand("predict", "Predict sets or intervals with a saved model");
  add_common(predict_cmd, rc);
  add_file(predict_cmd, rc, "predictions.csv");
  predict_cmd->add_option("--model", rc.model, "Model file")->required();
  predict_cmd->add_option("--data", rc.data, "Dataset file")->required();
  add_split(predict_cmd, rc);
  predict_cmd->add_option("--part", rc.part, "Partition to predict: all, calibration, scaling, validation, test");
  predict_cmd->add_flag("--force-nonempty", rc.force_nonempty, "Insert the top class into empty sets");

  auto* evaluate = app.add_subcommand("evaluate", "Run repeated resplit trials and report coverage and efficiency");
  add_common(evaluate, rc);
  evaluate->add_option("--data", rc.data, "Dataset file")->required();
  add_split(evaluate, rc);
  add_method(evaluate, rc, true);
  evaluate->add_flag("--tune", rc.tune, "Grid-tune NCP and RAPS settings on validation per trial");
  evaluate->add_option("--trials", rc.trials, "Number of trials")->check(CLI::PositiveNumber);
  evaluate->add_option("--jobs", rc.jobs, "Parallel trials")->check(CLI::PositiveNumber);

  auto* tune = app.add_subcommand("tune", "Grid-search localizer and RAPS settings on validation");
  add_common(tune, rc);
  tune->add_option("--data", rc.data, "Dataset file")->required();
  add_split(tune, rc);
  add_method(tune, rc, false);

  auto* diagnose = app.add_subcommand("diagnose", "Separation, concentration and threshold diagnostics");
  add_common(diagnose, rc);
  diagnose->add_option("--data", rc.data, "Dataset file")->required();
  add_split(diagnose, rc);
  add_method(diagnose, rc, false);
  diagnose->add_option("--ball", rc.diag_radius, "Radius B (0: median nearest-neighbour distance)");
  diagnose->add_option("--threshold", rc.diag_threshold, "Score threshold t (default: the CP threshold)");

  auto* fit_mlp = app.add_subcommand("fit-mlp", "Train a regression MLP and write held-out rows as a dataset");
  add_common(fit_mlp, rc);
  add_file(fit_mlp, rc, "dataset.csv");
  fit_mlp->add_option("--data", rc.data, "Numeric CSV with a header row")->required();
  fit_mlp->add_option("--target", rc.target, "Target column");
  fit_mlp->add_option("--train-frac", rc.train_frac, "Fraction of rows used for training");
  fit_mlp->add_option("--epochs", rc.epochs, "Training epochs");
  fit_mlp->add_option("--batch", rc.batch, "Minibatch size");
  fit_mlp->add_option("--lr", rc.learning_rate, "Adam learning rate");
  fit_mlp->add_option("--hidden", rc.hidden, "Hidden layer widths")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const fs::path dir = output_dir(rc);
    const std::string name = sub->get_name();
    if (name == "synth") {
      cmd_synth(rc, dir);
    } else if (name == "calibrate") {
      cmd_calibrate(rc, dir);
    } else if (name == "predict") {
      cmd_predict(rc, dir);
    } else if (name == "evaluate") {
      cmd_evaluate(rc, dir);
    } else if (name == "tune") {
      cmd_tune(rc, dir);
    } else if (name == "diagnose") {
      cmd_diagnose(rc, dir);
    } else if (name == "fit-mlp") {
      cmd_fit_mlp(rc, dir);
    }
    write_run_config(*sub, dir);
  } catch (const UsageError& e) {
    std::cerr << "ncp: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ncp: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
