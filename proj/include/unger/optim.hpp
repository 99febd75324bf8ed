#pragma once

#include "unger/tensor.hpp"

namespace unger {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-7;  // decoupled
  int warmup_steps = 2000;
  double warmup_init_lr = 1e-7;
};

// Adam with linear learning-rate warmup and decoupled weight decay.
// Moments are kept in double; parameters stay in Real.
template <class Real>
class Adam {
 public:
  Adam(std::vector<Param<Real>*> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.data.size(), 0.0);
      v_.emplace_back(p->value.data.size(), 0.0);
    }
  }

  int64_t step_count() const { return step_; }

  // Learning rate ramps linearly from warmup_init_lr to learning_rate over
  // the first warmup_steps steps (step is 1-based), then stays constant.
  double effective_lr(int64_t step) const {
    if (cfg_.warmup_steps <= 0 || step >= cfg_.warmup_steps) return cfg_.learning_rate;
    double f = static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.warmup_init_lr + (cfg_.learning_rate - cfg_.warmup_init_lr) * f;
  }

  void step() {
    bool any = false;
    for (auto* p : params_) any = any || p->grad_seen;
    if (!any) fail("adam_step before any backward pass");
    ++step_;
    const double lr = effective_lr(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Param<Real>& p = *params_[pi];
      std::vector<double>& m = m_[pi];
      std::vector<double>& v = v_[pi];
      for (size_t i = 0; i < p.value.data.size(); ++i) {
        const double g = static_cast<double>(p.grad.data[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        double x = static_cast<double>(p.value.data[i]);
        x -= lr * cfg_.weight_decay * x;
        x -= lr * mh / (std::sqrt(vh) + cfg_.eps);
        p.value.data[i] = static_cast<Real>(x);
      }
      if (!p.value.all_finite()) fail("non-finite parameter after adam step: " + p.name);
      p.zero_grad();
    }
  }

  void zero_grads() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Param<Real>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_ = 0;
};

template <class Real>
void init_xavier_uniform(Param<Real>& p, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : p.value.data) x = static_cast<Real>(rng.uniform(-limit, limit));
}

}  // namespace unger
