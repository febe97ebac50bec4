#include "ncp/engine.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ncp/ingest.hpp"

namespace ncp {

const char* to_string(Method method) {
  switch (method) {
    case Method::kCp:
      return "cp";
    case Method::kNcp:
      return "ncp";
    case Method::kNaive:
      return "naive";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "cp") return Method::kCp;
  if (text == "ncp") return Method::kNcp;
  if (text == "naive") return Method::kNaive;
  throw InvalidInput("unknown method '" + text + "' (cp, ncp, naive)");
}

bool PredictionOutput::contains(const LabeledExample& example, Task task) const {
  if (task == Task::kRegression) return lower <= example.target && example.target <= upper;
  return std::find(set.begin(), set.end(), example.label) != set.end();
}

double PredictionOutput::size(Task task) const {
  if (task == Task::kRegression) return upper - lower;
  return static_cast<double>(set.size());
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
}

CalibratedModel base_model(const Slice& calibration, const ScoreConfig& score, double alpha, std::uint64_t seed) {
  check_alpha(alpha);
  if (calibration.empty()) throw InvalidInput("calibration slice is empty");
  const Dataset& data = calibration.dataset();
  CalibratedModel model;
  model.task = data.task;
  model.num_classes = data.num_classes;
  model.dim = data.dim;
  model.alpha = alpha;
  model.seed = seed;
  model.score = score;
  model.scores = calibration_scores(calibration, score, seed);
  return model;
}

void check_example(const CalibratedModel& model, const LabeledExample& example) {
  if (model.method == Method::kNcp && example.embedding.size() != model.dim) {
    throw InvalidInput("embedding dimension " + std::to_string(example.embedding.size()) +
                       " does not match model dimension " + std::to_string(model.dim));
  }
  if (model.task == Task::kClassification && example.probs.size() != model.num_classes) {
    throw InvalidInput("example has " + std::to_string(example.probs.size()) + " class probabilities, model expects " +
                       std::to_string(model.num_classes));
  }
}

}  // namespace

CalibratedModel calibrate_cp(const Slice& calibration, const ScoreConfig& score, double alpha, std::uint64_t seed) {
  CalibratedModel model = base_model(calibration, score, alpha, seed);
  model.method = Method::kCp;
  model.cp_threshold = cp_quantile(model.scores, alpha).threshold;
  return model;
}

CalibratedModel calibrate_ncp(const Slice& calibration, const ScoreConfig& score, const LocalizerConfig& localizer,
                              double alpha, std::uint64_t seed, const NcpOptions& options) {
  localizer.validate();
  CalibratedModel model = base_model(calibration, score, alpha, seed);
  model.method = Method::kNcp;
  model.localizer = localizer;
  model.options = options;
  if (options.leave_one_out && calibration.size() < 2) {
    throw InvalidInput("leave-one-out NCP needs at least 2 calibration points");
  }
  model.embeddings.reserve(calibration.size());
  for (std::size_t i = 0; i < calibration.size(); ++i) model.embeddings.push_back(calibration[i].embedding);
  model.index = std::make_shared<const NeighborIndex>(model.embeddings, localizer.search, localizer.lsh);

  std::vector<SortedWeights> anchors;
  anchors.reserve(calibration.size());
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    const auto exclude = options.leave_one_out ? std::optional<std::size_t>(i) : std::nullopt;
    auto local = localize(*model.index, model.index->point(i), localizer, exclude);
    if (local.fell_back) ++model.ball_fallbacks;
    anchors.emplace_back(model.scores, local.weights);
  }
  const auto search = ncp_alpha_search(model.scores, anchors, alpha);
  model.alpha_tilde = search.alpha_tilde;
  model.calibration_coverage = search.empirical_coverage;
  return model;
}

CalibratedModel make_naive(const Dataset& data, double alpha, std::uint64_t seed) {
  check_alpha(alpha);
  if (data.task != Task::kClassification) throw InvalidInput("the naive baseline is classification-only");
  CalibratedModel model;
  model.method = Method::kNaive;
  model.task = data.task;
  model.num_classes = data.num_classes;
  model.dim = data.dim;
  model.alpha = alpha;
  model.seed = seed;
  return model;
}

double test_threshold(const CalibratedModel& model, std::span<const double> embedding, std::size_t* neighbors,
                      bool* fell_back) {
  switch (model.method) {
    case Method::kCp:
      if (neighbors) *neighbors = model.scores.size();
      if (fell_back) *fell_back = false;
      return model.cp_threshold;
    case Method::kNcp: {
      if (!model.index) throw InvalidInput("NCP model has no neighbour index");
      const auto local = localize(*model.index, embedding, model.localizer);
      const SortedWeights sorted(model.scores, local.weights);
      if (neighbors) *neighbors = local.weights.entries.size();
      if (fell_back) *fell_back = local.fell_back;
      return sorted.threshold(model.alpha_tilde);
    }
    case Method::kNaive:
      break;
  }
  throw InvalidInput("naive models have no conformal threshold");
}

PredictionOutput predict(const CalibratedModel& model, const LabeledExample& example, const ExampleDraw& draw,
                         bool force_nonempty) {
  check_example(model, example);
  PredictionOutput out;
  std::vector<double> rescaled;
  std::span<const double> probs = example.probs;
  if (model.task == Task::kClassification && model.temperature != 1.0) {
    std::vector<double> logits(probs.size());
    for (std::size_t c = 0; c < probs.size(); ++c) logits[c] = std::log(std::max(probs[c], 1e-300));
    rescaled = softmax(logits, model.temperature);
    probs = rescaled;
  }

  if (model.method == Method::kNaive) {
    out.set = naive_set(probs, model.alpha, draw.tie_seed);
    out.threshold = 1.0 - model.alpha;
    return out;
  }

  out.threshold = test_threshold(model, example.embedding, &out.neighbors, &out.fell_back);
  if (model.task == Task::kRegression) {
    if (out.infinite()) {
      out.lower = -INFINITY;
      out.upper = INFINITY;
    } else {
      out.lower = example.prediction - out.threshold;
      out.upper = example.prediction + out.threshold;
    }
    return out;
  }
  for (const auto& candidate : candidate_scores(probs, model.score, draw)) {
    if (candidate.score <= out.threshold) out.set.push_back(candidate.label);
  }
  if (out.set.empty() && force_nonempty) {
    out.set.push_back(descending_order(probs, draw.tie_seed).front());
    out.forced = true;
  }
  return out;
}

std::vector<PredictionOutput> predict(const CalibratedModel& model, const Slice& test, bool force_nonempty) {
  std::vector<PredictionOutput> outputs;
  outputs.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    outputs.push_back(predict(model, test[i], draw_for(model.seed, Stream::kTestDraw, test.id(i)), force_nonempty));
  }
  return outputs;
}

// ---------------------------------------------------------------------------
// Model file: "ncp-model 1", key=value lines, then "calibration=n" followed by
// n records "score,e_1..e_d" (embeddings only for NCP models).
// ---------------------------------------------------------------------------

void save_model(const CalibratedModel& model, std::ostream& out) {
  const bool ncp = model.method == Method::kNcp;
  out << "ncp-model 1\n";
  out << "method=" << to_string(model.method) << '\n';
  out << "task=" << to_string(model.task) << '\n';
  out << "num_classes=" << model.num_classes << '\n';
  out << "dim=" << model.dim << '\n';
  out << "alpha=" << format_double(model.alpha) << '\n';
  out << "temperature=" << format_double(model.temperature) << '\n';
  out << "seed=" << model.seed << '\n';
  out << "score=" << to_string(model.score.kind) << '\n';
  out << "lambda_r=" << format_double(model.score.lambda_r) << '\n';
  out << "k_reg=" << model.score.k_reg << '\n';
  out << "penalty=" << to_string(model.score.penalty) << '\n';
  out << "cp_threshold=" << format_double(model.cp_threshold) << '\n';
  if (ncp) {
    const auto& loc = model.localizer;
    out << "localizer=" << to_string(loc.mode) << '\n';
    out << "radius=" << format_double(loc.radius) << '\n';
    out << "k_frac=" << format_double(loc.k_frac) << '\n';
    out << "k=" << loc.k << '\n';
    out << "lambda_l=" << format_double(loc.lambda_l) << '\n';
    out << "search=" << to_string(loc.search) << '\n';
    out << "lsh_tables=" << loc.lsh.tables << '\n';
    out << "lsh_projections=" << loc.lsh.projections << '\n';
    out << "lsh_width=" << format_double(loc.lsh.width) << '\n';
    out << "lsh_seed=" << loc.lsh.seed << '\n';
    out << "leave_one_out=" << (model.options.leave_one_out ? 1 : 0) << '\n';
    out << "alpha_tilde=" << format_double(model.alpha_tilde) << '\n';
    out << "calibration_coverage=" << format_double(model.calibration_coverage) << '\n';
    out << "ball_fallbacks=" << model.ball_fallbacks << '\n';
  }
  out << "calibration=" << model.scores.size() << '\n';
  std::string line;
  for (std::size_t i = 0; i < model.scores.size(); ++i) {
    line = format_double(model.scores[i]);
    if (ncp) {
      for (double v : model.embeddings[i]) {
        line += ',';
        line += format_double(v);
      }
    }
    line += '\n';
    out << line;
  }
}

void save_model(const CalibratedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model file " + path.string());
  save_model(model, out);
  if (!out) throw Error("write failed for " + path.string());
}

namespace {

std::uint64_t parse_u64(const std::string& text, std::size_t line) {
  try {
    std::size_t pos = 0;
    const auto value = std::stoull(text, &pos);
    if (pos != text.size()) throw ParseError(line, "bad integer '" + text + "'");
    return value;
  } catch (const std::logic_error&) {
    throw ParseError(line, "bad integer '" + text + "'");
  }
}

}  // namespace

CalibratedModel load_model(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "ncp-model 1") throw ParseError(1, "not an ncp model file");
  std::map<std::string, std::pair<std::string, std::size_t>> kv;
  std::size_t count = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key=value");
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "calibration") {
      count = parse_u64(value, line_no);
      have_count = true;
      break;
    }
    kv[key] = {value, line_no};
  }
  if (!have_count) throw ParseError(line_no, "missing calibration block");

  auto get = [&](const std::string& key) -> const std::pair<std::string, std::size_t>& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(line_no, "missing key '" + key + "'");
    return it->second;
  };
  auto real = [&](const std::string& key) {
    const auto& [v, l] = get(key);
    return parse_double(v, l);
  };
  auto integer = [&](const std::string& key) {
    const auto& [v, l] = get(key);
    return parse_u64(v, l);
  };
  auto text = [&](const std::string& key) { return get(key).first; };

  CalibratedModel model;
  try {
    model.method = parse_method(text("method"));
    const auto task = text("task");
    if (task == "classification") {
      model.task = Task::kClassification;
    } else if (task == "regression") {
      model.task = Task::kRegression;
    } else {
      throw ParseError(get("task").second, "unknown task '" + task + "'");
    }
    model.num_classes = integer("num_classes");
    model.dim = integer("dim");
    model.alpha = real("alpha");
    model.temperature = real("temperature");
    model.seed = integer("seed");
    model.score.kind = parse_score_kind(text("score"));
    model.score.lambda_r = real("lambda_r");
    model.score.k_reg = integer("k_reg");
    model.score.penalty = parse_raps_penalty(text("penalty"));
    model.cp_threshold = real("cp_threshold");
    if (model.method == Method::kNcp) {
      auto& loc = model.localizer;
      loc.mode = parse_localizer_mode(text("localizer"));
      loc.radius = real("radius");
      loc.k_frac = real("k_frac");
      loc.k = integer("k");
      loc.lambda_l = real("lambda_l");
      loc.search = parse_search_kind(text("search"));
      loc.lsh.tables = integer("lsh_tables");
      loc.lsh.projections = integer("lsh_projections");
      loc.lsh.width = real("lsh_width");
      loc.lsh.seed = integer("lsh_seed");
      model.options.leave_one_out = integer("leave_one_out") != 0;
      model.alpha_tilde = real("alpha_tilde");
      model.calibration_coverage = real("calibration_coverage");
      model.ball_fallbacks = integer("ball_fallbacks");
    }
  } catch (const ParseError&) {
    throw;
  } catch (const InvalidInput& e) {
    throw ParseError(line_no, e.what());
  }

  const bool ncp = model.method == Method::kNcp;
  const std::size_t fields = 1 + (ncp ? model.dim : 0);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ParseError(line_no, "calibration block is truncated");
    ++line_no;
    const auto parts = split_fields(line);
    if (parts.size() != fields) {
      throw ParseError(line_no, "expected " + std::to_string(fields) + " fields, found " + std::to_string(parts.size()));
    }
    model.scores.push_back(parse_double(parts[0], line_no));
    if (ncp) {
      std::vector<double> e(model.dim);
      for (std::size_t j = 0; j < model.dim; ++j) e[j] = parse_double(parts[1 + j], line_no);
      model.embeddings.push_back(std::move(e));
    }
  }
  if (ncp) {
    if (model.embeddings.empty()) throw ParseError(line_no, "NCP model without calibration embeddings");
    model.index = std::make_shared<const NeighborIndex>(model.embeddings, model.localizer.search, model.localizer.lsh);
  }
  return model;
}

CalibratedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path.string());
  return load_model(in);
}

}  // namespace ncp
