#include "advi/core/optimizer.hpp"

#include <cmath>
#include <string>

#include "advi/error.hpp"

namespace advi::core {

OptimizerState::OptimizerState(OptimizerConfig config,
                               std::span<const std::size_t> block_sizes)
    : config_(config) {
  if (config_.learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
  for (std::size_t n : block_sizes) {
    first_.emplace_back(n, 0.0);
    if (config_.kind == OptimizerKind::Adam) second_.emplace_back(n, 0.0);
  }
}

void OptimizerState::step(std::span<const std::span<double>> params,
                          std::span<const std::span<const double>> grads) {
  if (params.size() != first_.size() || grads.size() != first_.size()) {
    throw ShapeError("optimizer: block count mismatch");
  }
  for (std::size_t b = 0; b < first_.size(); ++b) {
    if (params[b].size() != first_[b].size() || grads[b].size() != first_[b].size()) {
      throw ShapeError("optimizer: block " + std::to_string(b) + " size mismatch");
    }
  }
  ++steps_;
  const double lr = config_.learning_rate;
  const double wd = config_.weight_decay;

  if (config_.kind == OptimizerKind::SgdMomentum) {
    const double mu = config_.momentum;
    for (std::size_t b = 0; b < first_.size(); ++b) {
      auto& v = first_[b];
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double g = grads[b][i] + wd * params[b][i];
        v[i] = mu * v[i] + g;
        params[b][i] -= lr * v[i];
      }
    }
    return;
  }

  const double b1 = config_.momentum, b2 = config_.beta2;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t blk = 0; blk < first_.size(); ++blk) {
    auto& m = first_[blk];
    auto& v = second_[blk];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = grads[blk][i] + wd * params[blk][i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      params[blk][i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

}  // namespace advi::core
