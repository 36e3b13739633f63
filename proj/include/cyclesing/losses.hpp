#pragma once

#include <algorithm>
#include <cmath>

#include "cyclesing/tensor.hpp"

namespace cyclesing {

template <typename T>
struct ScalarLoss {
  double value = 0.0;
  Tensor<T> grad;  // d value / d pred
};

// Mean absolute difference. Subgradient at zero is taken as zero.
template <typename T>
ScalarLoss<T> l1_mean(const Tensor<T>& pred, const Tensor<T>& target) {
  check_same_shape(pred, target, "l1_mean");
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  ScalarLoss<T> out;
  out.grad = Tensor<T>(pred.shape());
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += std::abs(d);
    out.grad[i] = static_cast<T>(d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0));
  }
  out.value = acc * inv_n;
  return out;
}

// mean((pred - c)^2), used by the least-squares adversarial heads.
template <typename T>
ScalarLoss<T> mse_to_constant(const Tensor<T>& pred, double c) {
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  ScalarLoss<T> out;
  out.grad = Tensor<T>(pred.shape());
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - c;
    acc += d * d;
    out.grad[i] = static_cast<T>(2.0 * d * inv_n);
  }
  out.value = acc * inv_n;
  return out;
}

// Boundary-equilibrium combination of the two auto-encoder reconstruction
// losses. d_loss drives the discriminator, g_adv the generator.
struct BeganLosses {
  double d_loss;
  double g_adv;
};

inline BeganLosses began_losses(double l_real, double l_fake, double k) {
  return {l_real - k * l_fake, l_fake};
}

// k <- clamp(k + lambda_k * (gamma * l_real - l_fake), 0, 1); the returned
// convergence measure is l_real + |gamma * l_real - l_fake|.
struct Equilibrium {
  double k_next;
  double convergence;
};

inline Equilibrium update_equilibrium(double k, double l_real, double l_fake, double gamma,
                                      double lambda_k) {
  const double balance = gamma * l_real - l_fake;
  const double k_next = std::clamp(k + lambda_k * balance, 0.0, 1.0);
  return {k_next, l_real + std::abs(balance)};
}

}  // namespace cyclesing
