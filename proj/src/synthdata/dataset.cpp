#include <algorithm>
#include <cmath>

#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/util/parallel.hpp"

namespace advi::synthdata {

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
constexpr const char* kDatasetFormat = "advi-dataset";
}  // namespace

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "validation"; }

std::size_t DatasetConfig::depth() const {
  for (std::size_t d = 1; d <= kMaxDepth; ++d) {
    if (classes == (std::size_t{1} << d)) return d;
  }
  throw ConfigError("class count must be 2, 4, 8 or 16 (a balanced binary tree of depth 1..4)");
}

void DatasetConfig::validate() const {
  (void)depth();
  if (image_size < 16) throw ConfigError("image extents must be >= 16");
  if (image_size > 256) throw ConfigError("image extents must be <= 256");
  if (train_per_class < 1) throw ConfigError("train_per_class must be >= 1");
  if (validation_per_class < 2) {
    throw ConfigError("validation_per_class must be >= 2 (within-class distances need pairs)");
  }
  for (double v : {position_jitter, rotation_jitter, scale_jitter, noise_std}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("jitter parameters must be finite and >= 0");
  }
  if (scale_jitter >= 0.5) throw ConfigError("scale_jitter must be < 0.5");
  if (position_jitter > 0.15 * static_cast<double>(image_size)) {
    throw ConfigError("position_jitter would push objects out of the frame");
  }
}

nlohmann::json DatasetConfig::to_json() const {
  return {
      {"image_size", image_size},
      {"classes", classes},
      {"train_per_class", train_per_class},
      {"validation_per_class", validation_per_class},
      {"position_jitter", position_jitter},
      {"rotation_jitter", rotation_jitter},
      {"scale_jitter", scale_jitter},
      {"noise_std", noise_std},
      {"seed", seed},
  };
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  try {
    c.image_size = j.at("image_size").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.train_per_class = j.at("train_per_class").get<std::size_t>();
    c.validation_per_class = j.at("validation_per_class").get<std::size_t>();
    c.position_jitter = j.at("position_jitter").get<double>();
    c.rotation_jitter = j.at("rotation_jitter").get<double>();
    c.scale_jitter = j.at("scale_jitter").get<double>();
    c.noise_std = j.at("noise_std").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> Dataset::channel_means() const {
  std::vector<double> mean(kChannels, 0.0);
  if (train.empty()) return mean;
  const std::size_t plane = config.image_size * config.image_size;
  for (const auto& s : train) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += s.image[c * plane + i];
      mean[c] += acc;
    }
  }
  for (double& m : mean) m /= static_cast<double>(train.size() * plane);
  return mean;
}

namespace {

std::string encode_payload(const Dataset& ds) {
  io::Writer w;
  for (Split s : {Split::Train, Split::Validation}) {
    for (const auto& item : ds.split(s)) {
      for (double v : item.image.data()) w.f32(static_cast<float>(v));
    }
  }
  return w.take();
}

// Record order: class id, then sample id. Train ids come first, validation
// ids continue after them so every (class, sample id) pair is unique.
struct Slot {
  ClassId label;
  Split split;
  std::size_t sample_id;
};

std::vector<Slot> slots(const DatasetConfig& c) {
  std::vector<Slot> out;
  for (Split s : {Split::Train, Split::Validation}) {
    const std::size_t count = s == Split::Train ? c.train_per_class : c.validation_per_class;
    const std::size_t base = s == Split::Train ? 0 : c.train_per_class;
    for (ClassId k = 0; k < c.classes; ++k) {
      for (std::size_t i = 0; i < count; ++i) out.push_back({k, s, base + i});
    }
  }
  return out;
}

}  // namespace

std::string Dataset::content_hash() const { return io::sha256_hex(encode_payload(*this)); }

Dataset generate(const DatasetConfig& config, std::size_t workers) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.taxonomy = attribute_taxonomy(config.depth());
  const auto plan = slots(config);
  std::vector<LabeledImage> items(plan.size());
  parallel_for(plan.size(), workers, [&](std::size_t i) {
    const Slot& s = plan[i];
    items[i] = {render_sample(config, s.label, s.sample_id, true), s.label, s.split, s.sample_id};
  });
  for (auto& item : items) {
    (item.split == Split::Train ? ds.train : ds.validation).push_back(std::move(item));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path) {
  const std::string payload = encode_payload(ds);
  auto payload_path = manifest_path;
  payload_path.replace_extension(".bin");
  nlohmann::json m;
  m["format"] = kDatasetFormat;
  m["version"] = kDatasetVersion;
  m["config"] = ds.config.to_json();
  m["taxonomy"] = ds.taxonomy.to_json();
  m["image_shape"] = ds.image_shape();
  m["counts"] = {{"train", ds.train.size()}, {"validation", ds.validation.size()}};
  m["payload_file"] = payload_path.filename().string();
  m["payload_bytes"] = payload.size();
  m["payload_encoding"] = "float32-le";
  m["record_order"] = "split (train, validation), class id, sample id ascending";
  m["content_hash"] = io::sha256_hex(payload);
  io::write_file(payload_path, payload);
  io::write_file(manifest_path, m.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  if (m.value("format", "") != kDatasetFormat) throw FormatError("not a dataset manifest");
  if (m.value("version", 0u) != kDatasetVersion) {
    throw FormatError("dataset version mismatch: expected " + std::to_string(kDatasetVersion));
  }
  DatasetManifest out;
  out.config = DatasetConfig::from_json(m.at("config"));
  out.taxonomy = taxonomy::ClassTaxonomy::from_json(m.at("taxonomy"));
  out.content_hash = m.at("content_hash").get<std::string>();
  out.payload_path = manifest_path.parent_path() / m.at("payload_file").get<std::string>();
  if (out.taxonomy.class_count() != out.config.classes) {
    throw FormatError("manifest taxonomy does not match the class count");
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  DatasetManifest man = load_manifest(manifest_path);
  const std::string payload = io::read_file(man.payload_path);
  const auto plan = slots(man.config);
  const std::size_t per_image = kChannels * man.config.image_size * man.config.image_size;
  if (payload.size() != plan.size() * per_image * 4) {
    throw FormatError("dataset payload has " + std::to_string(payload.size()) +
                      " bytes, expected " + std::to_string(plan.size() * per_image * 4));
  }
  if (io::sha256_hex(payload) != man.content_hash) {
    throw FormatError("dataset content hash mismatch");
  }
  Dataset ds;
  ds.config = man.config;
  ds.taxonomy = man.taxonomy;
  io::Reader r(payload);
  const core::Shape shape{kChannels, man.config.image_size, man.config.image_size};
  for (const Slot& s : plan) {
    std::vector<double> px(per_image);
    for (double& v : px) {
      v = static_cast<double>(r.f32());
      if (!(v >= 0.0 && v <= 255.0)) throw FormatError("dataset pixel outside [0, 255]");
    }
    LabeledImage item{core::Tensor(shape, std::move(px)), s.label, s.split, s.sample_id};
    (s.split == Split::Train ? ds.train : ds.validation).push_back(std::move(item));
  }
  return ds;
}

core::Tensor batch_images(std::span<const LabeledImage> images,
                          std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("empty batch");
  const core::Shape& s = images[indices[0]].image.shape();
  core::Shape shape{indices.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  std::vector<double> data;
  data.reserve(core::shape_size(shape));
  for (std::size_t i : indices) {
    const auto& t = images[i].image;
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return core::Tensor(std::move(shape), std::move(data));
}

core::Tensor batch_images(std::span<const LabeledImage> images) {
  std::vector<std::size_t> idx(images.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch_images(images, idx);
}

}  // namespace advi::synthdata
