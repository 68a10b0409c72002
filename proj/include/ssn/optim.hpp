#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

/// Adam with bias correction. Weight decay enters the update term itself:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * p).
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, const AdamConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    if (cfg.lr < 0) throw ConfigError("adam learning rate must be >= 0");
    if (cfg.weight_decay < 0) throw ConfigError("weight decay must be >= 0");
    if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
      throw ConfigError("adam betas must lie in [0,1)");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      if (!p.has_grad())
        throw ShapeError("adam step: parameter " + std::to_string(i) +
                         " has no gradient");
      auto g = p.grad();
      auto vals = p.values();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t j = 0; j < vals.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        const double update = mhat / (std::sqrt(vhat) + cfg_.eps) +
                              cfg_.weight_decay * static_cast<double>(vals[j]);
        vals[j] = static_cast<T>(vals[j] - cfg_.lr * update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace ssn
