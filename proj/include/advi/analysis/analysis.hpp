#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advi/attack/adversarial_set.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/taxonomy/taxonomy.hpp"
#include "advi/zoo/model.hpp"
#include "json.hpp"

namespace advi::analysis {

using taxonomy::CategoricalDistribution;
using taxonomy::ClassId;
using taxonomy::CorrelationMatrix;

// How a feature channel is reduced to one activation per image.
enum class Reduction { Max, Mean };
std::string_view reduction_name(Reduction r);
Reduction parse_reduction(std::string_view s);

// Row-major (N, C): one activation per image and feature channel.
struct ActivationMatrix {
  std::size_t images = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t c) const { return values[i * channels + c]; }
  std::vector<double> column(std::size_t c) const;
};

ActivationMatrix reduce_features(const core::Tensor& features, Reduction r);
ActivationMatrix channel_activations(zoo::Model& model, const core::Tensor& batch, Reduction r);

// floor(fraction * n), at least 1.
std::size_t top_count(std::size_t n, double fraction);
// Indices of the top floor(fraction * N) (min 1) activations, descending;
// ties go to the smaller index.
std::vector<std::size_t> top_activations(std::span<const double> activations, double fraction);
// Label histogram of the selected entries.
CategoricalDistribution label_distribution(std::span<const ClassId> labels,
                                           std::span<const std::size_t> selected,
                                           std::size_t classes);

struct NeuronProfile {
  std::string model;
  std::size_t channel = 0;
  std::vector<std::size_t> real_top;  // indices into the real set
  std::vector<std::size_t> adv_top;   // indices into the adversarial set
  CategoricalDistribution p = CategoricalDistribution::uniform(1);
  CategoricalDistribution q = CategoricalDistribution::uniform(1);
  CategoricalDistribution q_tilde = CategoricalDistribution::uniform(1);
  double lc = 0.0;
  double cs1 = 0.0;
  double cs2 = 0.0;
  double entropy = 0.0;  // of p, reference only
};

struct LcBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_cs1 = 0.0;
  double mean_cs2 = 0.0;
};

struct ProfileSummary {
  std::vector<NeuronProfile> neurons;
  std::vector<LcBin> bins;  // equal width, empty bins omitted
  double fraction = 0.0;
  double bin_width = 0.05;
  Reduction reduction = Reduction::Max;
  double sigma = 1.0;
  double jitter = 0.0;
  double corr_lc_cs1 = 0.0;
  double corr_lc_cs2 = 0.0;
  double mean_cs1 = 0.0;
  double mean_cs2 = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;       // one row per neuron
  std::string bins_csv() const;     // one row per non-empty bin
};

// Inputs: per-image activations for the real set and the adversarial set,
// real labels, adversarial original labels y and targets y*. q and q~ are
// built from the same adversarial top set, labelled by y and y* respectively.
ProfileSummary profile_from_activations(const ActivationMatrix& real,
                                        std::span<const ClassId> real_labels,
                                        const ActivationMatrix& adv,
                                        std::span<const ClassId> adv_labels,
                                        std::span<const ClassId> adv_targets, double fraction,
                                        const CorrelationMatrix& c, double bin_width = 0.05,
                                        const std::string& model_name = "");

// Only successful adversarial records are profiled.
ProfileSummary profile_neurons(zoo::Model& model, std::span<const synthdata::LabeledImage> real,
                               const attack::AdversarialSet& adv, double fraction,
                               const CorrelationMatrix& c, Reduction r = Reduction::Max,
                               double bin_width = 0.05);

std::vector<LcBin> bin_by_lc(std::span<const NeuronProfile> neurons, double width);
// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// Representation-consistency ratios.
struct RatioRecord {
  std::size_t record = 0;  // index into the adversarial set
  ClassId label = 0;
  ClassId target = 0;
  double r1 = 0.0;
  double r2 = 0.0;
  std::size_t label_set_size = 0;
  std::size_t target_set_size = 0;
  std::string error;  // degenerate denominators
};

// Mean Euclidean distance from a point to each member of a set.
double mean_distance(std::span<const double> point, const std::vector<std::vector<double>>& set);
// Mean over all cross pairs of two different sets.
double mean_cross_distance(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b);
// Mean over unordered distinct pairs within one set (self-pairs excluded).
double mean_within_distance(const std::vector<std::vector<double>>& a);

// r1 = d(phi*, S_y) / d(S_y, S_y), r2 = d(phi*, S_t) / d(S_y, S_t).
RatioRecord repr_ratios(std::span<const double> phi_adv,
                        const std::vector<std::vector<double>>& label_set,
                        const std::vector<std::vector<double>>& target_set);

struct RatioSummary {
  std::vector<RatioRecord> records;
  double mean_r1 = 0.0;
  double mean_r2 = 0.0;
  std::size_t errors = 0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  // Histogram rows "lo,hi,r1_count,r2_count".
  std::string histogram_csv(double width = 0.05) const;
};

// One record per successful adversarial record.
RatioSummary ratios_for_set(zoo::Model& model, std::span<const synthdata::LabeledImage> real,
                            const attack::AdversarialSet& adv);

// Diagonal conditional Gaussian over flattened feature vectors.
struct DetectorModel {
  std::size_t classes = 0;
  std::size_t dims = 0;
  double floor = 1e-6;
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> variance;
  std::vector<std::size_t> counts;

  double log_density(std::span<const double> phi, ClassId k) const;
};

DetectorModel fit_detector(std::span<const std::vector<double>> features,
                           std::span<const ClassId> labels, std::size_t classes,
                           double floor = 1e-6);
DetectorModel fit_detector(zoo::Model& model, std::span<const synthdata::LabeledImage> train,
                           double floor = 1e-6);
// Log density of phi(x) under the class the model predicts for x.
std::vector<double> detector_scores(const DetectorModel& det, zoo::Model& model,
                                    const core::Tensor& batch);

inline constexpr std::uint32_t kDetectorVersion = 1;
std::string save_detector(const DetectorModel& det, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

struct RocPoint {
  double threshold = 0.0;
  double tpr = 0.0;  // adversarial flagged
  double fpr = 0.0;  // clean flagged
};

struct RocResult {
  std::vector<RocPoint> curve;
  double auc = 0.0;
  std::string to_csv() const;
};

// Positive class = adversarial, flagged when score < threshold. AUC is the
// rank statistic P(adv < clean) + P(adv == clean) / 2.
RocResult roc_auc(std::span<const double> clean, std::span<const double> adversarial);

// Flattened feature rows of a batch.
std::vector<std::vector<double>> feature_rows(zoo::Model& model, const core::Tensor& batch);

}  // namespace advi::analysis
