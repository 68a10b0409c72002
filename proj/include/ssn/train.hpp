#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssn/dataset.hpp"
#include "ssn/loss.hpp"
#include "ssn/metrics.hpp"
#include "ssn/model.hpp"
#include "ssn/optim.hpp"
#include "ssn/rng.hpp"

namespace ssn {

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-3;
  std::size_t batch_size = 1;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  bool augment = true;
};

inline void validate_train(const TrainConfig& c) {
  if (c.learning_rate <= 0) throw ConfigError("learning rate must be positive");
  if (c.weight_decay < 0) throw ConfigError("weight decay must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (c.epochs < 1) throw ConfigError("epoch count must be >= 1");
}

/// One training example held in memory: a (1,D,H,W) tensor plus its label.
template <typename T>
struct TrainSample {
  Tensor<T> x;
  std::size_t y = 0;
  std::string id;
};

/// Per-sample transform applied on the fly each epoch (augmentation hook);
/// receives a sample-specific seeded rng.
template <typename T>
using SampleTransform = std::function<Tensor<T>(const TrainSample<T>&, Rng&)>;

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double accuracy = 0;
  std::size_t samples = 0;
};

inline nlohmann::ordered_json epoch_stats_to_json(const EpochStats& s) {
  return {{"epoch", s.epoch},
          {"loss", s.mean_loss},
          {"train_accuracy", s.accuracy},
          {"samples", s.samples}};
}

namespace detail {

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& xs) {
  const Shape& s0 = xs.front().shape();
  for (const auto& x : xs)
    if (x.shape() != s0)
      throw ShapeError("cannot batch samples of differing geometry: " +
                       shape_str(x.shape()) + " vs " + shape_str(s0));
  Shape shape = s0;
  shape.insert(shape.begin(), xs.size());
  Tensor<T> out(shape);
  const std::size_t stride = xs.front().numel();
  for (std::size_t i = 0; i < xs.size(); ++i)
    std::copy(xs[i].data(), xs[i].data() + stride, out.data() + i * stride);
  return out;
}

}  // namespace detail

/// One pass over `data` in a seeded shuffled order: forward, weighted
/// cross-entropy, backward, Adam step per batch. The shuffle, dropout, and
/// per-sample transform streams are all derived from (config seed, epoch).
template <typename T>
EpochStats train_epoch(Model<T>& model, const std::vector<TrainSample<T>>& data,
                       const ClassWeights& weights, Adam<T>& opt,
                       const TrainConfig& cfg, std::size_t epoch,
                       const SampleTransform<T>& transform = nullptr) {
  if (data.empty()) throw DataError("training set is empty");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = make_rng(derive_seed(cfg.seed, epoch, 0, 1));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  Rng dropout_rng = make_rng(derive_seed(cfg.seed, epoch, 0, 2));

  EpochStats stats;
  stats.epoch = epoch;
  stats.samples = data.size();
  double loss_sum = 0;
  std::size_t correct = 0;

  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(start + cfg.batch_size, order.size());
    std::vector<Tensor<T>> xs;
    std::vector<std::size_t> ys;
    std::string batch_ids;
    for (std::size_t j = start; j < end; ++j) {
      const TrainSample<T>& sample = data[order[j]];
      if (transform) {
        Rng sample_rng = make_rng(derive_seed(cfg.seed, epoch, order[j], 3));
        xs.push_back(transform(sample, sample_rng));
      } else {
        xs.push_back(sample.x);
      }
      ys.push_back(sample.y);
      if (!batch_ids.empty()) batch_ids += ",";
      batch_ids += sample.id;
    }
    Tensor<T> xb = detail::stack_batch(xs);

    Tape<T> tape;
    Tensor<T> logits;
    try {
      logits = model.forward(&tape, xb, true, &dropout_rng);
    } catch (const GeometryError& e) {
      throw GeometryError(std::string(e.what()) + " (sample " + batch_ids + ")");
    }
    Tensor<T> loss = weighted_cross_entropy(&tape, logits, ys, weights);
    model.zero_grad();
    tape.backward(loss);
    opt.step();

    loss_sum += static_cast<double>(loss.values()[0]) *
                static_cast<double>(end - start);
    for (std::size_t j = 0; j < ys.size(); ++j)
      if (argmax_row(logits, j) == ys[j]) ++correct;
  }

  stats.mean_loss = loss_sum / static_cast<double>(data.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return stats;
}

struct EvalResult {
  ConfusionMatrix cm;
  double mean_loss = 0;
};

/// Eval-mode pass; accumulates a confusion matrix and, when weights are
/// given, the mean weighted cross-entropy.
template <typename T>
EvalResult evaluate(Model<T>& model, const std::vector<TrainSample<T>>& data,
                    std::size_t num_classes,
                    const ClassWeights* weights = nullptr) {
  if (data.empty()) throw DataError("evaluation set is empty");
  EvalResult result{ConfusionMatrix(num_classes), 0.0};
  double loss_sum = 0;
  for (const auto& sample : data) {
    Shape shape = sample.x.shape();
    shape.insert(shape.begin(), 1);
    Tensor<T> xb = reshape<T>(nullptr, sample.x, shape);
    Tensor<T> logits;
    try {
      logits = model.forward(nullptr, xb, false);
    } catch (const GeometryError& e) {
      throw GeometryError(std::string(e.what()) + " (sample " + sample.id + ")");
    }
    result.cm.update(sample.y, argmax_row(logits, 0));
    if (weights) {
      Tensor<T> loss = weighted_cross_entropy<T>(nullptr, logits, {sample.y},
                                                 *weights);
      loss_sum += static_cast<double>(loss.values()[0]);
    }
  }
  result.mean_loss = loss_sum / static_cast<double>(data.size());
  return result;
}

struct FoldResult {
  std::size_t fold = 0;
  ConfusionMatrix cm;
  MetricsReport metrics;
};

struct CrossValSummary {
  std::vector<FoldResult> folds;
  std::vector<double> mean_f1, std_f1;  // indexed by class
  double mean_accuracy = 0, std_accuracy = 0;
  double mean_macro_f1 = 0, std_macro_f1 = 0;
  double mean_weighted_f1 = 0, std_weighted_f1 = 0;
};

/// Trains and scores one fold; returns the test-set confusion matrix.
using FoldTrainFn = std::function<ConfusionMatrix(
    std::size_t fold, const std::vector<ManifestEntry>& train,
    const std::vector<ManifestEntry>& test, std::uint64_t fold_seed)>;

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

}  // namespace detail

/// k seeded stratified 70/30 splits; each fold gets an independent seed
/// derived from (seed, fold). The summary aggregates per-class F1, accuracy,
/// macro and weighted F1 as mean and population standard deviation.
inline CrossValSummary cross_validate(const DatasetManifest& manifest,
                                      std::size_t k, double train_ratio,
                                      std::uint64_t seed,
                                      const FoldTrainFn& train_fn) {
  const auto splits = make_splits(manifest, k, train_ratio, seed);
  CrossValSummary summary;
  for (const auto& spec : splits) {
    auto [train, test] = split_entries(manifest, spec);
    const std::uint64_t fold_seed = derive_seed(seed, spec.fold, 0, 7);
    ConfusionMatrix cm = train_fn(spec.fold, train, test, fold_seed);
    if (cm.total() != test.size())
      throw ShapeError("fold " + std::to_string(spec.fold) +
                       " scored " + std::to_string(cm.total()) +
                       " samples but the test split has " +
                       std::to_string(test.size()));
    FoldResult fr{spec.fold, cm, per_class_metrics(cm)};
    summary.folds.push_back(std::move(fr));
  }

  const std::size_t c = manifest.num_classes;
  summary.mean_f1.resize(c);
  summary.std_f1.resize(c);
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::vector<double> f1s;
    for (const auto& fr : summary.folds) f1s.push_back(fr.metrics.per_class[cls].f1);
    std::tie(summary.mean_f1[cls], summary.std_f1[cls]) = detail::mean_std(f1s);
  }
  std::vector<double> accs, macros, weighteds;
  for (const auto& fr : summary.folds) {
    accs.push_back(fr.metrics.accuracy);
    macros.push_back(fr.metrics.macro_f1);
    weighteds.push_back(fr.metrics.weighted_f1);
  }
  std::tie(summary.mean_accuracy, summary.std_accuracy) = detail::mean_std(accs);
  std::tie(summary.mean_macro_f1, summary.std_macro_f1) = detail::mean_std(macros);
  std::tie(summary.mean_weighted_f1, summary.std_weighted_f1) =
      detail::mean_std(weighteds);
  return summary;
}

inline nlohmann::ordered_json fold_result_to_json(const FoldResult& fr) {
  nlohmann::ordered_json j;
  j["fold"] = fr.fold;
  j["metrics"] = metrics_to_json(fr.metrics);
  auto counts = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < fr.cm.num_classes(); ++t) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < fr.cm.num_classes(); ++p)
      row.push_back(fr.cm.at(t, p));
    counts.push_back(row);
  }
  j["confusion"] = counts;
  return j;
}

inline nlohmann::ordered_json summary_to_json(const CrossValSummary& s) {
  nlohmann::ordered_json j;
  j["folds"] = nlohmann::ordered_json::array();
  for (const auto& fr : s.folds) j["folds"].push_back(fold_result_to_json(fr));
  j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < s.mean_f1.size(); ++c)
    j["per_class"].push_back(
        {{"class", c}, {"mean_f1", s.mean_f1[c]}, {"std_f1", s.std_f1[c]}});
  j["accuracy"] = {{"mean", s.mean_accuracy}, {"std", s.std_accuracy}};
  j["macro_f1"] = {{"mean", s.mean_macro_f1}, {"std", s.std_macro_f1}};
  j["weighted_f1"] = {{"mean", s.mean_weighted_f1}, {"std", s.std_weighted_f1}};
  return j;
}

}  // namespace ssn
