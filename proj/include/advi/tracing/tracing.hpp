#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advi/analysis/analysis.hpp"
#include "advi/taxonomy/taxonomy.hpp"
#include "advi/zoo/model.hpp"
#include "json.hpp"

namespace advi::tracing {

using taxonomy::ClassId;
using taxonomy::CorrelationMatrix;

// What replaces a removed channel.
enum class Removal { Zero, Mean };
// Which head output the difference is taken in.
enum class OutputSpace { Probabilities, Logits };

struct PdOptions {
  Removal removal = Removal::Zero;
  OutputSpace space = OutputSpace::Probabilities;
};

// ||g(phi) - g(phi with channel removed)||_C^2 for one image's features
// (C, h, w). Mean removal fills the channel with its spatial mean.
double prediction_difference(zoo::Model& model, const core::Tensor& features,
                             std::size_t channel, const CorrelationMatrix& c,
                             const PdOptions& opt = {});
// All channels at once (one head evaluation over a batch of edited copies).
std::vector<double> prediction_differences(zoo::Model& model, const core::Tensor& features,
                                           const CorrelationMatrix& c, const PdOptions& opt = {});

struct Selection {
  std::optional<double> threshold;  // keep PD > threshold
  std::optional<std::size_t> top_k;
};

struct Influence {
  std::size_t channel = 0;
  double pd = 0.0;
};

// Sorted descending by PD, ties by smaller channel.
std::vector<Influence> select_influential(std::span<const double> pd, const Selection& sel);
std::vector<Influence> influential_neurons(zoo::Model& model, const core::Tensor& image,
                                           const CorrelationMatrix& c, const Selection& sel,
                                           const PdOptions& opt = {});

struct DiscrepancyMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch = 0;
  std::size_t stride = 0;
  std::vector<double> drop;  // row-major, original - occluded

  double operator()(std::size_t r, std::size_t c) const { return drop[r * cols + c]; }
  // Binary greyscale image (P5), linearly scaled to the map's range.
  std::string to_pgm() const;
};

enum class MapTarget { ClassProbability, ChannelActivation };

// ceil((extent - patch) / stride) + 1 positions per axis; the last position
// is clamped to the image edge.
std::size_t grid_extent(std::size_t extent, std::size_t patch, std::size_t stride);

// Occludes each patch with `fill` (per-channel pixel value) and records the
// drop of the target: probability of class `index` or spatial-max activation
// of feature channel `index`.
DiscrepancyMap discrepancy_map(zoo::Model& model, const core::Tensor& image, MapTarget target,
                               std::size_t index, std::size_t patch, std::size_t stride,
                               std::span<const double> fill);

struct ConsistencyResult {
  bool inconsistent = false;
  double min_similarity = 0.0;          // min over selected of cos_C(p, onehot(y^))
  std::vector<double> label_similarity;  // per selected channel
  std::vector<double> pairwise;          // row-major |S| x |S|
};

// Compares the real-image class distributions p of the selected channels with
// each other and with the predicted class.
ConsistencyResult influence_consistency(std::span<const Influence> selected,
                                        std::span<const analysis::NeuronProfile> profiles,
                                        ClassId predicted, const CorrelationMatrix& c,
                                        double tau_sim = 0.2);

struct TraceReport {
  std::string input;  // free-form image reference
  ClassId predicted = 0;
  double probability = 0.0;
  std::vector<double> pd;
  std::vector<Influence> selected;
  std::vector<DiscrepancyMap> maps;  // one per selected channel
  ConsistencyResult consistency;
  double tau_sim = 0.2;
  double psd_jitter = 0.0;

  nlohmann::json to_json() const;
};

struct TraceOptions {
  Selection selection{std::nullopt, 2};
  PdOptions pd;
  double tau_sim = 0.2;
  std::size_t patch = 8;
  std::size_t stride = 4;
  bool with_maps = true;
};

TraceReport trace(zoo::Model& model, const core::Tensor& image,
                  std::span<const analysis::NeuronProfile> profiles, const CorrelationMatrix& c,
                  std::span<const double> fill, const TraceOptions& opt = {},
                  std::string input_ref = "");

}  // namespace advi::tracing
