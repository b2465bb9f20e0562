#pragma once

// SGD with momentum and selective weight decay:
//   v <- momentum*v - lr*(g + wd*p);  p <- p + v
// Decay applies to convolution weights only; biases and batch-norm affine
// parameters pass wd = 0.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdnet/tensor.hpp"

namespace sdnet {

template <typename T>
struct OptimizerState {
  T learning_rate = static_cast<T>(0.1);
  T momentum = static_cast<T>(0.9);
  T weight_decay = static_cast<T>(1e-4);
  // One velocity buffer per learnable tensor, in model traversal order;
  // created on first use to mirror the parameter shapes.
  std::vector<std::vector<T>> velocity;

  std::vector<T>& velocity_for(std::size_t slot, std::size_t size) {
    if (velocity.size() <= slot) velocity.resize(slot + 1);
    if (velocity[slot].size() != size) velocity[slot].assign(size, T{});
    return velocity[slot];
  }
};

// Rejects non-finite gradients; `what` names the parameter in the diagnostic.
template <typename T>
void sgd_update(std::span<T> param, std::span<T> vel, std::span<const T> grad,
                T lr, T momentum, T weight_decay, const std::string& what) {
  require(param.size() == vel.size() && param.size() == grad.size(),
          "sgd_update: size mismatch for " + what);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grad[i])))
      throw std::runtime_error("sgd_update: non-finite gradient in " + what);
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = momentum * vel[i] - lr * (grad[i] + weight_decay * param[i]);
    param[i] += vel[i];
  }
}

}  // namespace sdnet
