#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advi/core/tensor.hpp"
#include "advi/taxonomy/taxonomy.hpp"
#include "json.hpp"

namespace advi::synthdata {

using taxonomy::ClassId;

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kMaxDepth = 4;

struct DatasetConfig {
  std::size_t image_size = 32;  // square images, 3 channels
  std::size_t classes = 16;     // 2^depth leaves, depth 1..4
  std::size_t train_per_class = 150;
  std::size_t validation_per_class = 30;
  double position_jitter = 2.0;    // pixels, uniform +-
  double rotation_jitter = 3.14159265358979323846;  // radians, uniform +-
  double scale_jitter = 0.1;       // relative, uniform +-
  double noise_std = 8.0;          // additive Gaussian, pixel units
  std::uint64_t seed = 1;

  std::size_t depth() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

// The four generating attributes, one per taxonomy level (root first).
struct Attributes {
  bool angular = false;  // shape family: round / angular
  bool hollow = false;   // fill: solid / hollow
  bool dashed = false;   // stroke: plain / dashed
  bool small = false;    // size: large / small
};

// Level k of the tree splits on attribute k: bit (depth-1-k) of the class id.
// Attributes below the tree depth keep their default (first) value.
Attributes attributes_of(ClassId label, std::size_t depth);
ClassId class_of(const Attributes& a, std::size_t depth);
// The class tree for a given depth, with levels named after the attributes.
taxonomy::ClassTaxonomy attribute_taxonomy(std::size_t depth);

enum class Split : std::uint8_t { Train = 0, Validation = 1 };
std::string_view split_name(Split s);

struct LabeledImage {
  core::Tensor image;  // (3, H, W), values in [0, 255]
  ClassId label = 0;
  Split split = Split::Train;
  std::size_t sample_id = 0;  // unique across splits
};

struct Dataset {
  DatasetConfig config;
  taxonomy::ClassTaxonomy taxonomy = attribute_taxonomy(4);
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> validation;

  const std::vector<LabeledImage>& split(Split s) const {
    return s == Split::Train ? train : validation;
  }
  core::Shape image_shape() const { return {kChannels, config.image_size, config.image_size}; }
  // Per-channel mean pixel of the training split.
  std::vector<double> channel_means() const;
  // SHA-256 of the binary payload encoding.
  std::string content_hash() const;
};

// Renders one sample. With `noise` false the image is the exact geometric
// render (testing hook for attribute faithfulness).
core::Tensor render_sample(const DatasetConfig& config, ClassId label,
                           std::size_t sample_id, bool noise = true);

Dataset generate(const DatasetConfig& config, std::size_t workers = 1);

// Manifest (JSON text) at `manifest_path`; payload next to it with extension
// .bin: little-endian float32 images, train split first, then validation,
// each ordered by class id then sample id.
void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

struct DatasetManifest {
  DatasetConfig config;
  taxonomy::ClassTaxonomy taxonomy = attribute_taxonomy(4);
  std::string content_hash;
  std::filesystem::path payload_path;
};
// Reads only the manifest; the payload is not opened.
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

// (N, 3, H, W) batch of the selected images.
core::Tensor batch_images(std::span<const LabeledImage> images,
                          std::span<const std::size_t> indices);
core::Tensor batch_images(std::span<const LabeledImage> images);

}  // namespace advi::synthdata
