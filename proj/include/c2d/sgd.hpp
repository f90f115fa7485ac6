#pragma once

#include <span>
#include <vector>

#include "c2d/autodiff.hpp"

namespace c2d::num {

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Momentum SGD with coupled weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
class SgdState {
 public:
  explicit SgdState(SgdConfig cfg);

  const SgdConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr);
  const std::vector<Tensor>& velocities() const noexcept { return velocity_; }

  /// Velocity buffers are bound to parameters by position on first use.
  /// Throws NumericalError (and leaves every parameter untouched) when any
  /// gradient is non-finite.
  void step(std::span<Parameter* const> params);

 private:
  SgdConfig cfg_;
  std::vector<Tensor> velocity_;
};

inline void sgd_step(std::span<Parameter* const> params, SgdState& state) { state.step(params); }

void zero_grad(std::span<Parameter* const> params);

}  // namespace c2d::num
