#include "fmdp/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace fmdp {

Tensor& OptimizerState::accumulator_for(const std::string& name, const Tensor& param) {
  auto it = accumulators.find(name);
  if (it == accumulators.end())
    it = accumulators.emplace(name, Tensor::zeros(param.rows(), param.cols())).first;
  return it->second;
}

void rmsprop_step(Tensor& param, std::span<const double> grad, Tensor& accumulator,
                  const RmsPropConfig& config) {
  if (grad.size() != param.values().size() || accumulator.size() != param.size())
    throw std::invalid_argument("rmsprop_step: shape mismatch");
  auto p = param.values();
  auto v = accumulator.values();
  double rho = config.decay;
  for (size_t i = 0; i < p.size(); ++i) {
    v[i] = rho * v[i] + (1.0 - rho) * grad[i] * grad[i];
    p[i] -= config.learning_rate * grad[i] / std::sqrt(v[i] + config.epsilon);
  }
}

double clip_global_norm(std::span<std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (auto g : grads)
    for (double v : g) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (auto g : grads)
      for (auto& v : g) v *= scale;
  }
  return norm;
}

}  // namespace fmdp
