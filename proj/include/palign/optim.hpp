#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "palign/autodiff.hpp"

namespace palign {

template <typename R>
struct NamedParam {
  std::string name;
  Var<R> var;
};

template <typename R>
using NamedParams = std::vector<NamedParam<R>>;

template <typename R>
uint64_t params_checksum(const NamedParams<R>& ps) {
  uint64_t h = 0x243f6a8885a308d3ULL;
  for (const auto& p : ps) {
    for (char c : p.name) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
    h = splitmix64(h ^ tensor_checksum(p.var->value));
  }
  return h;
}

template <typename R>
void zero_grads(const NamedParams<R>& ps) {
  for (const auto& p : ps) zero_grad(p.var);
}

// Cosine annealing from lr_max at step 0 down to lr_min at total_steps.
template <typename R>
struct CosineSchedule {
  R lr_max = R(1e-2);
  R lr_min = R(1e-4);
  int64_t total_steps = 1;

  R at(int64_t step) const {
    if (total_steps <= 0) return lr_max;
    if (step < 0) step = 0;
    if (step > total_steps) step = total_steps;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    double cosv = std::cos(3.14159265358979323846 * frac);
    return static_cast<R>(static_cast<double>(lr_min) +
                          0.5 * (static_cast<double>(lr_max) - static_cast<double>(lr_min)) * (1.0 + cosv));
  }
};

// Adam with bias correction; learning rate follows the cosine schedule.
template <typename R>
class Adam {
 public:
  Adam(NamedParams<R> params, CosineSchedule<R> schedule, R beta1 = R(0.9), R beta2 = R(0.999), R eps = R(1e-8))
      : params_(std::move(params)), schedule_(schedule), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.var->value.shape());
      v_.emplace_back(p.var->value.shape());
    }
  }

  R current_lr() const { return schedule_.at(step_); }
  int64_t step_count() const { return step_; }
  const NamedParams<R>& params() const { return params_; }

  void step() {
    for (const auto& p : params_)
      if (p.var->grad.empty())
        throw ContractError("optimizer step before backward: no gradient for '" + p.name + "'");
    R lr = schedule_.at(step_);
    ++step_;
    R bc1 = R(1) - static_cast<R>(std::pow(static_cast<double>(beta1_), static_cast<double>(step_)));
    R bc2 = R(1) - static_cast<R>(std::pow(static_cast<double>(beta2_), static_cast<double>(step_)));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& theta = params_[k].var->value;
      const auto& g = params_[k].var->grad;
      auto& m = m_[k];
      auto& v = v_[k];
      for (int64_t i = 0; i < theta.numel(); ++i) {
        m[i] = beta1_ * m[i] + (R(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (R(1) - beta2_) * g[i] * g[i];
        R mhat = m[i] / bc1;
        R vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() { zero_grads(params_); }

 private:
  NamedParams<R> params_;
  CosineSchedule<R> schedule_;
  R beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::vector<Tensor<R>> m_;
  std::vector<Tensor<R>> v_;
};

}  // namespace palign
