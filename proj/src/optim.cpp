#include "cprobe/optim.hpp"

#include "cprobe/kernels.hpp"

namespace cprobe {

AdamW::AdamW(std::vector<Param*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (p->frozen) continue;
    if (!kernels::all_finite(p->grad.data(), static_cast<int>(p->size()))) {
      throw NumericalError("adamw: non-finite gradient in parameter '" +
                           p->name + "' at step " + std::to_string(step_));
    }
    kernels::adamw_update(p->value.data(), p->grad.data(), m_[i].data(),
                          v_[i].data(), static_cast<int>(p->size()), cfg_.lr,
                          cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay,
                          step_);
  }
}

void AdamW::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void sgd_step(const std::vector<Param*>& params, double lr) {
  for (Param* p : params) {
    if (p->frozen) continue;
    if (!kernels::all_finite(p->grad.data(), static_cast<int>(p->size()))) {
      throw NumericalError("sgd: non-finite gradient in parameter '" + p->name +
                           "'");
    }
    for (std::size_t i = 0; i < p->size(); ++i)
      p->value[i] -= lr * p->grad[i];
  }
}

}  // namespace cprobe
