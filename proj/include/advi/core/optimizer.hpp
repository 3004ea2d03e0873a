#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace advi::core {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double learning_rate = 0.01;
  double momentum = 0.9;  // sgd-momentum mu, or Adam beta1
  double beta2 = 0.999;   // Adam only
  double epsilon = 1e-8;  // Adam only
  double weight_decay = 0.0;  // L2 term added to the gradient
};

// Moment buffers for a fixed list of parameter blocks.
//
// sgd-momentum: v <- mu * v + g;  p <- p - lr * v
// adam:         bias-corrected first/second moments, p <- p - lr * m^ / (sqrt(v^) + eps)
class OptimizerState {
 public:
  OptimizerState(OptimizerConfig config, std::span<const std::size_t> block_sizes);

  // One update of every block. params[i] and grads[i] must have the size the
  // state was built with.
  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads);

  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::uint64_t steps() const { return steps_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace advi::core
