#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "advi/core/graph.hpp"
#include "json.hpp"

namespace advi::zoo {

enum class Arch { CnnA, CnnB, CnnC };

std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view name);
inline constexpr Arch kAllArchs[] = {Arch::CnnA, Arch::CnnB, Arch::CnnC};

struct ModelSpec {
  Arch arch = Arch::CnnA;
  std::size_t classes = 16;
  std::size_t image_size = 32;
  // Human-readable layer list, e.g. "conv3x3 3->16 pad1", "relu", "maxpool2".
  std::vector<std::string> layers;
  std::string feature_layer;   // name of the designated feature node
  core::Shape feature_shape;   // per-sample (channels, h, w)

  std::size_t feature_channels() const { return feature_shape.at(0); }
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

// A network plus the ids of its interesting nodes. The head g is the suffix
// of the graph after the feature node, so predict(x) and head(features(x))
// run the exact same arithmetic.
//
// Evaluation caches intermediate values inside the graph: a Model is not
// safe to share between threads. Copy it per worker.
class Model {
 public:
  static Model build(Arch arch, std::size_t classes, std::size_t image_size,
                     std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  core::ComputeGraph& graph() { return graph_; }
  const core::ComputeGraph& graph() const { return graph_; }

  core::NodeId input_node() const { return input_; }
  core::NodeId feature_node() const { return feature_; }
  core::NodeId logits_node() const { return logits_; }
  core::NodeId probs_node() const { return probs_; }
  std::size_t parameter_count() const { return graph_.parameter_count(); }

  // Batches are (N, 3, S, S) in [0, 255]; evaluated in chunks of `chunk`.
  core::Tensor predict(const core::Tensor& batch, std::size_t chunk = 64);
  core::Tensor logits(const core::Tensor& batch, std::size_t chunk = 64);
  core::Tensor features(const core::Tensor& batch, std::size_t chunk = 64);
  // g: feature-layer activations (N, C, h, w) to probabilities (or logits).
  core::Tensor head(const core::Tensor& features, bool return_logits = false);

  // Feeds the input node.
  core::Feed feed(const core::Tensor& batch) const;

 private:
  core::Tensor run(const core::Tensor& batch, core::NodeId node, std::size_t chunk);

  ModelSpec spec_;
  core::ComputeGraph graph_;
  core::NodeId input_ = 0;
  core::NodeId feature_ = 0;
  core::NodeId logits_ = 0;
  core::NodeId probs_ = 0;
};

// Argmax per row; ties go to the smaller class id.
std::vector<std::size_t> argmax_rows(const core::Tensor& m);

struct TrainingMetadata {
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  bool adversarial = false;
  double alpha = 1.0;
  double beta = 0.0;
  std::size_t fgs_steps = 0;
  double fgs_epsilon = 0.0;
  std::string target_rule;  // how y* was chosen during adversarial training
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static TrainingMetadata from_json(const nlohmann::json& j);
};

struct Checkpoint {
  Model model;
  TrainingMetadata metadata;
  std::string hash;  // hex sha256 over header and payload
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Framed file: magic "ADVICKPT", version, JSON header {spec, metadata,
// parameter_count}, little-endian float64 parameter payload, sha256.
// Returns the content hash.
std::string save_checkpoint(const Model& model, const TrainingMetadata& meta,
                            const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const Model& model, const TrainingMetadata& meta);

}  // namespace advi::zoo
