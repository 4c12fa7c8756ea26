#pragma once

#include <map>
#include <span>
#include <string>

#include "fmdp/tensor.hpp"

namespace fmdp {

struct RmsPropConfig {
  double learning_rate = 5e-5;
  double decay = 0.99;  // rho
  double epsilon = 1e-6;
};

// Per-parameter squared-gradient accumulator.
struct OptimizerState {
  RmsPropConfig config;
  std::map<std::string, Tensor> accumulators;  // same shape as the parameter

  Tensor& accumulator_for(const std::string& name, const Tensor& param);
};

// v <- rho*v + (1-rho)*g^2 ; param <- param - eta*g / sqrt(v + eps), elementwise.
void rmsprop_step(Tensor& param, std::span<const double> grad, Tensor& accumulator,
                  const RmsPropConfig& config);

// Scales all gradients in place so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(std::span<std::span<double>> grads, double max_norm);

}  // namespace fmdp
