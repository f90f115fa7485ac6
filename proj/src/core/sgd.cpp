#include "c2d/sgd.hpp"

#include <cmath>

#include "c2d/error.hpp"

namespace c2d::num {

namespace {

void validate(const SgdConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("sgd: learning rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("sgd: weight decay must be nonnegative");
}

}  // namespace

SgdState::SgdState(SgdConfig cfg) : cfg_(cfg) { validate(cfg_); }

void SgdState::set_lr(double lr) {
  cfg_.lr = lr;
  validate(cfg_);
}

void SgdState::step(std::span<Parameter* const> params) {
  if (velocity_.empty()) {
    for (const Parameter* p : params) velocity_.emplace_back(p->value.rows(), p->value.cols());
  }
  if (velocity_.size() != params.size()) {
    throw ConfigError("sgd: parameter count changed from " + std::to_string(velocity_.size()) +
                      " to " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    require_same_shape(p.value, p.grad, "sgd grad");
    require_same_shape(p.value, velocity_[k], "sgd velocity");
    if (!p.grad.all_finite()) throw NumericalError("sgd: non-finite gradient for " + p.name);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto v = velocity_[k].data();
    auto w = p.value.data();
    const auto g = p.grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg_.momentum * v[i] + g[i] + cfg_.weight_decay * w[i];
      w[i] -= cfg_.lr * v[i];
    }
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace c2d::num
