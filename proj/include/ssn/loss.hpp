#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ssn/ops.hpp"
#include "ssn/tape.hpp"
#include "ssn/tensor.hpp"

namespace ssn {

/// Inverse-frequency class weights: W_c = 1 - samples_c / samples_total.
struct ClassWeights {
  std::vector<double> values;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
};

inline ClassWeights class_weights(const std::vector<std::size_t>& counts) {
  ClassWeights w;
  w.counts = counts;
  for (std::size_t c : counts) w.total += c;
  if (counts.empty() || w.total == 0)
    throw ConfigError("class weights need at least one sample over all classes");
  w.values.reserve(counts.size());
  for (std::size_t c : counts)
    w.values.push_back(1.0 - static_cast<double>(c) / static_cast<double>(w.total));
  return w;
}

/// Mean over the batch of W_y * (-log_probs[i, y_i]).
template <typename T>
Tensor<T> nll_weighted_mean(Tape<T>* tape, const Tensor<T>& log_probs,
                            const std::vector<std::size_t>& targets,
                            const std::vector<double>& weights) {
  if (log_probs.ndim() != 2)
    throw ShapeError("nll expects log-probabilities of shape [N,C]");
  const std::size_t n = log_probs.dim(0), c = log_probs.dim(1);
  if (targets.size() != n)
    throw ShapeError("nll got " + std::to_string(targets.size()) +
                     " targets for a batch of " + std::to_string(n));
  if (weights.size() != c)
    throw ShapeError("nll got " + std::to_string(weights.size()) +
                     " class weights for " + std::to_string(c) + " classes");
  for (std::size_t t : targets)
    if (t >= c)
      throw ConfigError("target class " + std::to_string(t) +
                        " out of range [0," + std::to_string(c) + ")");

  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    acc += weights[targets[i]] *
           -static_cast<double>(log_probs.data()[i * c + targets[i]]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  out.set_requires_grad(log_probs.requires_grad());
  if (tape && log_probs.requires_grad()) {
    auto li = log_probs.impl();
    auto oi = out.impl();
    auto tg = targets;
    auto wv = weights;
    tape->record("nll", out, [=]() {
      if (!li->requires_grad) return;
      auto lg = li->ensure_grad();
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < n; ++i)
        lg[i * c + tg[i]] -=
            g * static_cast<T>(wv[tg[i]] / static_cast<double>(n));
    });
  }
  return out;
}

/// Weighted cross-entropy on raw logits (log-softmax then weighted NLL).
template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                 const std::vector<std::size_t>& targets,
                                 const ClassWeights& weights) {
  Tensor<T> lp = log_softmax(tape, logits);
  return nll_weighted_mean(tape, lp, targets, weights.values);
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  const T* x = logits.data() + row * c;
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (x[j] > x[best]) best = j;
  return best;
}

/// Row-wise softmax in double precision, for reporting.
template <typename T>
std::vector<std::vector<double>> softmax_probs(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<std::vector<double>> out(n, std::vector<double>(c));
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = logits.data() + i * c;
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i][j] = std::exp(static_cast<double>(x[j]) - mx);
      s += out[i][j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i][j] /= s;
  }
  return out;
}

}  // namespace ssn
