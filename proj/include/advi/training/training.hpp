#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "advi/attack/adversarial_set.hpp"
#include "advi/core/optimizer.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/zoo/model.hpp"
#include "json.hpp"

namespace advi::training {

using taxonomy::ClassId;

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  core::OptimizerConfig optimizer{core::OptimizerKind::SgdMomentum, 0.05, 0.9, 0.999, 1e-8,
                                  5e-5};
  // Step decay: lr = lr0 * gamma^(epoch / lr_step). lr_step 0 disables it.
  std::size_t lr_step = 4;
  double lr_gamma = 0.5;
  std::uint64_t seed = 1;
  // Adversarial objective alpha*CE(x) + (1-alpha)*CE(x*) + beta*|phi(x)-phi(x*)|^2.
  double alpha = 0.5;
  double beta = 0.1;
  double fgs_epsilon = 1.0;
  std::size_t fgs_steps = 10;  // 0 forces x* = x

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;         // mean of the optimised objective over batches
  double clean_ce = 0.0;     // mean CE on clean images
  double adversarial_ce = 0.0;  // adversarial runs only
  double consistency = 0.0;     // adversarial runs only, the unweighted |.|^2 term
};

struct TrainReport {
  bool adversarial = false;
  double initial_loss = 0.0;  // mean clean CE over the training split before any update
  std::vector<EpochStats> epochs;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = -1.0;  // filled when an adversarial set is evaluated
  double wall_seconds = 0.0;
  TrainConfig config;

  nlohmann::json to_json() const;
};

// Cross-entropy training with weight decay; batch order from the seed.
TrainReport train_standard(zoo::Model& model, const synthdata::Dataset& ds,
                           const TrainConfig& cfg);
// Per batch: random y* != y, x* by targeted FGS on the current parameters
// (treated as data), then one step on the three-term objective. alpha = 1 with
// beta = 0 skips generation and follows train_standard exactly.
TrainReport train_adversarial(zoo::Model& model, const synthdata::Dataset& ds,
                              const TrainConfig& cfg);

// Checkpoint metadata for a finished run.
zoo::TrainingMetadata metadata_for(const TrainConfig& cfg, bool adversarial);

struct Accuracy {
  double top1 = 0.0;
  double topk = 0.0;
  std::size_t k = 1;
  std::size_t count = 0;
};

// Fraction of rows whose label ranks within the first k; ranking by
// descending probability with ties to the smaller class id.
Accuracy top_k_accuracy(const core::Tensor& probs, std::span<const ClassId> labels,
                        std::size_t k);

Accuracy evaluate(zoo::Model& model, std::span<const synthdata::LabeledImage> images,
                  std::size_t k = 5);
// Accuracy on adversarial images against the original class y.
Accuracy evaluate(zoo::Model& model, const attack::AdversarialSet& set, std::size_t k = 5);
// One untargeted signed step x + eps*sign(grad CE(1_y)), then top-1 vs y.
double evaluate_fgs(zoo::Model& model, std::span<const synthdata::LabeledImage> images,
                    double eps, std::size_t chunk = 64);

}  // namespace advi::training
