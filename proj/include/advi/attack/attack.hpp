#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advi/core/graph.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/zoo/model.hpp"
#include "json.hpp"

namespace advi::attack {

using taxonomy::ClassId;

// A model's graph with a one-hot "target" input and a mean cross-entropy
// node appended. Owns its own copy of the parameters.
struct LossGraph {
  core::ComputeGraph graph;
  core::NodeId input = 0;
  core::NodeId target = 0;
  core::NodeId logits = 0;
  core::NodeId probs = 0;
  core::NodeId loss = 0;
  std::size_t classes = 0;

  explicit LossGraph(const zoo::Model& model);
  // Copies the parameters of `model` (same architecture) into this graph.
  void sync(const zoo::Model& model);
  // Forward + backward at `images` toward one-hot `labels`; returns the loss.
  double evaluate(const core::Tensor& images, std::span<const ClassId> labels);
  // d loss / d images from the last evaluate().
  std::span<const double> input_grad() const { return graph.grad(input); }
  const core::Tensor& probabilities() const { return graph.value(probs); }
};

core::Tensor one_hot_rows(std::span<const ClassId> labels, std::size_t classes);

enum class DistanceKind { L2, SquaredL2 };

struct AttackConfig {
  double lambda = 1e-3;        // weight of d(x, x*)
  double step_size = 5.0;      // Adam learning rate, pixel units
  std::size_t max_iterations = 20;
  double confidence = 0.9;     // early stop once every model exceeds it on y*
  DistanceKind distance = DistanceKind::L2;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

enum class AttackKind { Ensemble, TargetedFgs };
std::string_view attack_kind_name(AttackKind k);

struct AttackResult {
  core::Tensor adversarial;  // (3, S, S), within [0, 255]
  std::size_t iterations = 0;
  double distance = 0.0;     // Euclidean, flattened pixels
  std::vector<double> target_probs;  // per model, at the returned image
  bool success = false;      // every model's argmax is the target
  std::vector<double> losses;  // objective before each step and at the end
};

// The n classes with the smallest ensemble-mean probability for image x
// (3, S, S), ascending; ties by smaller id. `exclude` (the true class, when
// given) is never returned; n < K either way.
std::vector<ClassId> least_likely_targets(std::span<zoo::Model> models, const core::Tensor& x,
                                          std::size_t n,
                                          std::optional<ClassId> exclude = std::nullopt);
std::vector<ClassId> least_likely_from_probs(std::span<const double> mean_probs, std::size_t n,
                                             std::optional<ClassId> exclude = std::nullopt);

// Minimises lambda * d(x, x*) + sum_i CE(1_{y*}, f_i(x*)) over x* with Adam on
// the pixels, clipping to [0, 255] after every step.
class EnsembleAttacker {
 public:
  EnsembleAttacker(std::span<const zoo::Model> models, AttackConfig config);
  AttackResult run(const core::Tensor& x, ClassId y, ClassId target);
  const AttackConfig& config() const { return config_; }

 private:
  std::vector<LossGraph> graphs_;
  AttackConfig config_;
};

AttackResult ensemble_attack(std::span<const zoo::Model> models, const core::Tensor& x,
                             ClassId y, ClassId target, const AttackConfig& config);

// x*_t = clip(x*_{t-1} + direction * eps * sign(grad_x CE(1_label, f(x*_{t-1}))))
// for a batch (N, 3, S, S). direction -1 descends toward `labels` (targeted),
// +1 ascends away from them (untargeted). eps = 0 or steps = 0 returns the
// input unchanged.
core::Tensor signed_gradient_steps(LossGraph& graph, const core::Tensor& images,
                                   std::span<const ClassId> labels, double eps,
                                   std::size_t steps, double direction);

core::Tensor targeted_fgs(const zoo::Model& model, const core::Tensor& images,
                          std::span<const ClassId> targets, double eps, std::size_t steps);
core::Tensor untargeted_fgs(const zoo::Model& model, const core::Tensor& images,
                            std::span<const ClassId> labels, double eps);

// Euclidean distance between two equally sized tensors.
double l2_distance(const core::Tensor& a, const core::Tensor& b);

}  // namespace advi::attack
