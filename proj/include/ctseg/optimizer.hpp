#pragma once

#include <span>

#include "ctseg/tensor.hpp"

namespace ctseg {

// One SGD step with Nesterov momentum and decoupled weight decay on the
// gradient: d = g + wd*theta; buf = mu*buf + d; theta -= lr*(d + mu*buf).
template <typename T>
void sgd_nesterov_step(Tensor<T>& param, std::span<const T> grad, Tensor<T>& buffer, T lr,
                       T momentum, T weight_decay) {
  require(static_cast<int64_t>(grad.size()) == param.size(),
          "sgd_nesterov_step: gradient size " + std::to_string(grad.size()) +
              " does not match parameter size " + std::to_string(param.size()));
  require(buffer.shape() == param.shape(),
          "sgd_nesterov_step: buffer shape " + shape_str(buffer.shape()) +
              " does not match parameter shape " + shape_str(param.shape()));
  T* theta = param.data();
  T* buf = buffer.data();
  for (int64_t i = 0; i < param.size(); ++i) {
    const T d = grad[static_cast<size_t>(i)] + weight_decay * theta[i];
    buf[i] = momentum * buf[i] + d;
    theta[i] -= lr * (d + momentum * buf[i]);
  }
}

}  // namespace ctseg
