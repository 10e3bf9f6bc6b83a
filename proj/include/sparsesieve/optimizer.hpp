#pragma once

#include <stdexcept>

#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

/// Classic momentum state: v <- mu*v + g; param <- param - eta*v.
struct MomentumState {
  Tensor velocity;
  double momentum = 0.9;
  double learning_rate = 1e-2;

  MomentumState(Shape param_shape, double mu, double eta)
      : velocity(Tensor::zeros(std::move(param_shape))), momentum(mu), learning_rate(eta) {
    if (mu < 0.0 || mu >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
    if (eta <= 0.0) throw std::invalid_argument("learning rate must be positive");
  }
};

inline void sgd_momentum_step(Tensor& param, const Tensor& grad, MomentumState& state) {
  require_same_shape(param, grad, "sgd_momentum_step");
  require_same_shape(param, state.velocity, "sgd_momentum_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.velocity.data[i] = state.momentum * state.velocity.data[i] + grad.data[i];
    param.data[i] -= state.learning_rate * state.velocity.data[i];
  }
}

}  // namespace sparsesieve
