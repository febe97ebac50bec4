#include "ncp/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncp/random.hpp"

namespace ncp {

const char* to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

void Dataset::validate() const {
  if (examples.empty()) throw InvalidInput("empty dataset");
  if (task == Task::kClassification && num_classes == 0) {
    throw InvalidInput("classification dataset needs at least one class");
  }
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const auto where = " (example " + std::to_string(i) + ")";
    if (ex.embedding.size() != dim) {
      throw InvalidInput("embedding dimension " + std::to_string(ex.embedding.size()) +
                         " does not match dataset dimension " + std::to_string(dim) + where);
    }
    for (double v : ex.embedding) {
      if (!std::isfinite(v)) throw InvalidInput("non-finite embedding entry" + where);
    }
    if (task == Task::kClassification) {
      if (ex.probs.size() != num_classes) throw InvalidInput("probability vector length mismatch" + where);
      if (ex.label >= num_classes) throw InvalidInput("label out of range" + where);
      double sum = 0.0;
      for (double p : ex.probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidInput("negative or non-finite probability" + where);
        sum += p;
      }
      if (std::abs(sum - 1.0) > kSimplexTolerance) throw InvalidInput("probabilities do not sum to 1" + where);
    } else {
      if (!ex.probs.empty()) throw InvalidInput("regression example carries probabilities" + where);
      if (!std::isfinite(ex.prediction) || !std::isfinite(ex.target)) {
        throw InvalidInput("non-finite prediction or target" + where);
      }
    }
  }
}

Slice::Slice(const Dataset& data, std::vector<std::size_t> indices)
    : data_(&data), indices_(std::move(indices)) {
  for (std::size_t id : indices_) {
    if (id >= data.size()) throw InvalidInput("slice index out of range");
  }
}

Slice::Slice(const Dataset& data) : data_(&data), indices_(data.size()) {
  std::iota(indices_.begin(), indices_.end(), std::size_t{0});
}

double WeightVector::total() const {
  double sum = 0.0;
  for (const auto& e : entries) sum += e.weight;
  return sum;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput("softmax temperature must be positive and finite");
  }
  if (logits.empty()) throw InvalidInput("softmax of empty vector");
  double max_logit = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw InvalidInput("non-finite logit");
    max_logit = std::max(max_logit, z);
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - max_logit) / temperature);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

std::vector<std::size_t> descending_order(std::span<const double> probs, std::uint64_t tie_seed) {
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Random keys only matter among equal probabilities; drawing one per class
  // keeps the tie permutation uniform and independent of input order.
  Rng rng(tie_seed);
  std::vector<std::uint64_t> keys(n);
  for (auto& k : keys) k = rng.next();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return a < b;
  });
  return order;
}

std::size_t rank_of_label(std::span<const double> probs, std::size_t label, std::uint64_t tie_seed) {
  if (label >= probs.size()) throw InvalidInput("label out of range");
  const auto order = descending_order(probs, tie_seed);
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), label) - order.begin()) + 1;
}

}  // namespace ncp
