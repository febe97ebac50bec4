#include "ncp/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncp/random.hpp"

namespace ncp {

Mlp::Mlp(std::size_t inputs, const MlpConfig& config) : config_(config) {
  if (inputs == 0) throw InvalidInput("MLP needs at least one input");
  if (config.hidden.empty()) throw InvalidInput("MLP needs at least one hidden layer");
  if (config.epochs == 0 || config.batch == 0 || !(config.learning_rate > 0.0)) {
    throw InvalidInput("MLP epochs, batch and learning rate must be positive");
  }
  Rng rng(derive_seed(config.seed, Stream::kMlp));
  std::size_t in = inputs;
  std::vector<std::size_t> widths = config.hidden;
  widths.push_back(1);
  for (std::size_t out : widths) {
    if (out == 0) throw InvalidInput("MLP layer width must be positive");
    Layer layer;
    layer.in = in;
    layer.out = out;
    layer.w.resize(in * out);
    layer.b.assign(out, 0.0);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& w : layer.w) w = scale * rng.normal();
    layers_.push_back(std::move(layer));
    in = out;
  }
}

std::vector<double> Mlp::standardize(std::span<const double> x) const {
  if (x.size() != x_mean_.size()) throw InvalidInput("MLP input has the wrong width");
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - x_mean_[j]) / x_std_[j];
  return z;
}

void Mlp::forward(std::span<const double> x, std::vector<std::vector<double>>& acts) const {
  acts.resize(layers_.size() + 1);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    auto& out = acts[l + 1];
    out.assign(layer.out, 0.0);
    const bool hidden = l + 1 < layers_.size();
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = layer.b[o];
      const double* w = layer.w.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * acts[l][i];
      out[o] = hidden ? std::max(0.0, s) : s;
    }
  }
}

double Mlp::fit(const std::vector<std::vector<double>>& x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n == 0 || y.size() != n) throw InvalidInput("MLP training data is empty or misaligned");
  const std::size_t d = layers_.front().in;
  x_mean_.assign(d, 0.0);
  x_std_.assign(d, 0.0);
  for (const auto& row : x) {
    if (row.size() != d) throw InvalidInput("MLP input has the wrong width");
    for (std::size_t j = 0; j < d; ++j) x_mean_[j] += row[j];
  }
  for (auto& m : x_mean_) m /= static_cast<double>(n);
  for (const auto& row : x) {
    for (std::size_t j = 0; j < d; ++j) x_std_[j] += (row[j] - x_mean_[j]) * (row[j] - x_mean_[j]);
  }
  for (auto& s : x_std_) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-12);
  y_mean_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - y_mean_) * (v - y_mean_);
  y_std_ = std::max(std::sqrt(var / static_cast<double>(n)), 1e-12);

  std::vector<std::vector<double>> zx;
  zx.reserve(n);
  for (const auto& row : x) zx.push_back(standardize(row));
  std::vector<double> zy(n);
  for (std::size_t i = 0; i < n; ++i) zy[i] = (y[i] - y_mean_) / y_std_;

  // Adam state and gradient buffers, one per parameter array.
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  const std::size_t L = layers_.size();
  std::vector<std::vector<double>> gw(L), gb(L), mw(L), vw(L), mb(L), vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    gw[l].assign(layers_[l].w.size(), 0.0);
    mw[l] = vw[l] = gw[l];
    gb[l].assign(layers_[l].b.size(), 0.0);
    mb[l] = vb[l] = gb[l];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> delta(L);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    Rng rng(derive_seed(config_.seed, Stream::kMlp, epoch + 1));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += config_.batch) {
      const std::size_t end = std::min(n, start + config_.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t l = 0; l < L; ++l) {
        std::fill(gw[l].begin(), gw[l].end(), 0.0);
        std::fill(gb[l].begin(), gb[l].end(), 0.0);
      }
      for (std::size_t r = start; r < end; ++r) {
        const std::size_t i = order[r];
        forward(zx[i], acts);
        // d(mean squared error)/d(output) for this example.
        delta[L - 1].assign(1, 2.0 * (acts[L][0] - zy[i]) * scale);
        for (std::size_t l = L; l-- > 0;) {
          const auto& layer = layers_[l];
          const auto& input = acts[l];
          for (std::size_t o = 0; o < layer.out; ++o) {
            const double g = delta[l][o];
            if (g == 0.0) continue;
            gb[l][o] += g;
            double* gwr = gw[l].data() + o * layer.in;
            for (std::size_t k = 0; k < layer.in; ++k) gwr[k] += g * input[k];
          }
          if (l == 0) break;
          auto& prev = delta[l - 1];
          prev.assign(layer.in, 0.0);
          for (std::size_t o = 0; o < layer.out; ++o) {
            const double g = delta[l][o];
            if (g == 0.0) continue;
            const double* w = layer.w.data() + o * layer.in;
            for (std::size_t k = 0; k < layer.in; ++k) prev[k] += g * w[k];
          }
          for (std::size_t k = 0; k < layer.in; ++k) {
            if (input[k] <= 0.0) prev[k] = 0.0;
          }
        }
      }
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      auto adam = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t k = 0; k < p.size(); ++k) {
          m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
          v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
          p[k] -= config_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
        }
      };
      for (std::size_t l = 0; l < L; ++l) {
        adam(layers_[l].w, gw[l], mw[l], vw[l]);
        adam(layers_[l].b, gb[l], mb[l], vb[l]);
      }
    }
  }

  double mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double err = predict(x[i]) - y[i];
    mse += err * err;
  }
  return mse / static_cast<double>(n);
}

double Mlp::predict(std::span<const double> x) const {
  std::vector<std::vector<double>> acts;
  forward(standardize(x), acts);
  return acts.back()[0] * y_std_ + y_mean_;
}

std::vector<double> Mlp::embed(std::span<const double> x) const {
  std::vector<std::vector<double>> acts;
  forward(standardize(x), acts);
  return acts[acts.size() - 2];
}

MlpDatasetResult mlp_regression_dataset(const NumericTable& table, const std::string& target, double train_frac,
                                        const MlpConfig& config) {
  const auto it = std::find(table.columns.begin(), table.columns.end(), target);
  if (it == table.columns.end()) throw InvalidInput("no column named '" + target + "'");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw InvalidInput("train fraction must lie in (0, 1)");
  const auto target_col = static_cast<std::size_t>(it - table.columns.begin());
  const std::size_t n = table.rows.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw InvalidInput("train fraction leaves an empty split");

  std::vector<std::vector<double>> inputs(n);
  std::vector<double> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      if (c == target_col) {
        targets[i] = table.rows[i][c];
      } else {
        inputs[i].push_back(table.rows[i][c]);
      }
    }
  }

  MlpDatasetResult result;
  const auto parts = split(n, SplitSpec{config.seed, n_train, 0, 0, n - n_train});
  result.train_rows = parts.calibration;
  result.held_out_rows = parts.test;
  std::sort(result.held_out_rows.begin(), result.held_out_rows.end());

  std::vector<std::vector<double>> train_x;
  std::vector<double> train_y;
  for (std::size_t i : result.train_rows) {
    train_x.push_back(inputs[i]);
    train_y.push_back(targets[i]);
  }
  Mlp net(inputs.front().size(), config);
  result.train_mse = net.fit(train_x, train_y);

  result.data.task = Task::kRegression;
  result.data.num_classes = 0;
  result.data.dim = config.hidden.back();
  for (std::size_t i : result.held_out_rows) {
    LabeledExample ex;
    ex.target = targets[i];
    ex.prediction = net.predict(inputs[i]);
    ex.embedding = net.embed(inputs[i]);
    result.data.examples.push_back(std::move(ex));
  }
  return result;
}

}  // namespace ncp
