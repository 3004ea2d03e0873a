#include "advi/attack/adversarial_set.hpp"

#include <algorithm>
#include <cmath>

#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/util/parallel.hpp"

namespace advi::attack {

namespace {
constexpr const char* kFormat = "advi-adversarial-set";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::size_t AdversarialSet::successes() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return r.success; }));
}

std::vector<std::size_t> AdversarialSet::successful_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].success) out.push_back(i);
  }
  return out;
}

std::size_t AdversarialSet::failures() const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [](const auto& r) { return !r.error.empty(); }));
}

double AdversarialSet::success_rate() const {
  return records.empty() ? 0.0
                         : static_cast<double>(successes()) / static_cast<double>(records.size());
}

double AdversarialSet::mean_distance() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (!r.error.empty()) continue;
    s += r.distance;
    ++n;
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

const synthdata::LabeledImage& source_of(const synthdata::Dataset& ds,
                                         const AdversarialRecord& r) {
  const auto& items = ds.split(r.split);
  if (r.source_index >= items.size()) throw FormatError("adversarial record points past the split");
  const auto& s = items[r.source_index];
  if (s.label != r.label || s.sample_id != r.sample_id) {
    throw FormatError("adversarial record does not match the dataset it claims to come from");
  }
  return s;
}

AdversarialSet build_adversarial_set(const synthdata::Dataset& ds, std::span<zoo::Model> models,
                                     std::size_t n_targets, const AttackConfig& cfg,
                                     std::size_t per_class, std::size_t workers) {
  cfg.validate();
  if (models.empty()) throw ConfigError("empty ensemble");
  const std::size_t k = ds.config.classes;
  if (n_targets < 1 || n_targets >= k) throw ConfigError("n_targets must be in [1, K)");

  std::vector<std::size_t> chosen;
  std::vector<std::size_t> taken(k, 0);
  for (std::size_t i = 0; i < ds.validation.size(); ++i) {
    const auto& s = ds.validation[i];
    if (per_class != 0 && taken[s.label] >= per_class) continue;
    ++taken[s.label];
    chosen.push_back(i);
  }

  AdversarialSet out;
  out.config = cfg;
  out.n_targets = n_targets;
  out.per_class = per_class;
  out.dataset_hash = ds.content_hash();
  for (const auto& m : models) out.models.emplace_back(zoo::arch_name(m.spec().arch));
  out.records.resize(chosen.size() * n_targets);

  workers = std::max<std::size_t>(1, std::min(workers, chosen.size()));
  // Contiguous slices so each worker keeps one set of model copies.
  parallel_for(workers, workers, [&](std::size_t w) {
    std::vector<zoo::Model> local(models.begin(), models.end());
    EnsembleAttacker attacker(local, cfg);
    const std::size_t begin = chosen.size() * w / workers;
    const std::size_t end = chosen.size() * (w + 1) / workers;
    for (std::size_t c = begin; c < end; ++c) {
      const auto& src = ds.validation[chosen[c]];
      const auto targets = least_likely_targets(local, src.image, n_targets, src.label);
      for (std::size_t t = 0; t < n_targets; ++t) {
        AdversarialRecord& r = out.records[c * n_targets + t];
        r.split = synthdata::Split::Validation;
        r.label = src.label;
        r.sample_id = src.sample_id;
        r.source_index = chosen[c];
        r.target = targets[t];
        r.kind = AttackKind::Ensemble;
        try {
          AttackResult a = attacker.run(src.image, src.label, targets[t]);
          r.image = std::move(a.adversarial);
          r.iterations = a.iterations;
          r.distance = a.distance;
          r.target_probs = std::move(a.target_probs);
          r.success = a.success;
        } catch (const Error& e) {
          r.error = e.what();
          r.image = src.image;
          r.distance = 0.0;
          r.target_probs.assign(local.size(), 0.0);
        }
      }
    }
  });
  return out;
}

void save_adversarial_set(const AdversarialSet& set, const std::filesystem::path& manifest) {
  io::Writer w;
  core::Shape shape;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& r : set.records) {
    if (shape.empty()) shape = r.image.shape();
    if (r.image.shape() != shape) throw ShapeError("adversarial images differ in shape");
    for (double v : r.image.data()) w.f64(v);
    index.push_back({{"split", synthdata::split_name(r.split)},
                     {"label", r.label},
                     {"sample_id", r.sample_id},
                     {"source_index", r.source_index},
                     {"target", r.target},
                     {"kind", attack_kind_name(r.kind)},
                     {"iterations", r.iterations},
                     {"distance", r.distance},
                     {"target_probs", r.target_probs},
                     {"success", r.success},
                     {"error", r.error}});
  }
  const std::string payload = w.take();
  auto payload_path = manifest;
  payload_path.replace_extension(".bin");
  nlohmann::json m;
  m["format"] = kFormat;
  m["version"] = kVersion;
  m["config"] = set.config.to_json();
  m["n_targets"] = set.n_targets;
  m["per_class"] = set.per_class;
  m["models"] = set.models;
  m["dataset_hash"] = set.dataset_hash;
  m["image_shape"] = shape;
  m["stats"] = {{"records", set.records.size()},
                {"successes", set.successes()},
                {"failures", set.failures()},
                {"success_rate", set.success_rate()},
                {"mean_distance", set.mean_distance()}};
  m["payload_file"] = payload_path.filename().string();
  m["payload_encoding"] = "float64-le";
  m["content_hash"] = io::sha256_hex(payload);
  m["records"] = std::move(index);
  io::write_file(payload_path, payload);
  io::write_file(manifest, m.dump(1) + "\n");
}

AdversarialSet load_adversarial_set(const std::filesystem::path& manifest) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("adversarial set manifest is not valid JSON: " + std::string(e.what()));
  }
  if (m.value("format", "") != kFormat) throw FormatError("not an adversarial set manifest");
  if (m.value("version", 0u) != kVersion) {
    throw FormatError("adversarial set version mismatch: expected " + std::to_string(kVersion));
  }
  const std::string payload =
      io::read_file(manifest.parent_path() / m.at("payload_file").get<std::string>());
  if (io::sha256_hex(payload) != m.at("content_hash").get<std::string>()) {
    throw FormatError("adversarial set content hash mismatch");
  }
  AdversarialSet set;
  try {
    set.config = AttackConfig::from_json(m.at("config"));
    set.n_targets = m.at("n_targets").get<std::size_t>();
    set.per_class = m.at("per_class").get<std::size_t>();
    set.models = m.at("models").get<std::vector<std::string>>();
    set.dataset_hash = m.at("dataset_hash").get<std::string>();
    const auto shape = m.at("image_shape").get<core::Shape>();
    const auto& recs = m.at("records");
    const std::size_t per = recs.empty() ? 0 : core::shape_size(shape);
    if (payload.size() != recs.size() * per * 8) {
      throw FormatError("adversarial set payload length does not match the record count");
    }
    io::Reader r(payload);
    for (const auto& j : recs) {
      AdversarialRecord rec;
      const auto split = j.at("split").get<std::string>();
      rec.split = split == "train" ? synthdata::Split::Train : synthdata::Split::Validation;
      rec.label = j.at("label").get<ClassId>();
      rec.sample_id = j.at("sample_id").get<std::size_t>();
      rec.source_index = j.at("source_index").get<std::size_t>();
      rec.target = j.at("target").get<ClassId>();
      rec.kind = j.at("kind").get<std::string>() == "ensemble" ? AttackKind::Ensemble
                                                               : AttackKind::TargetedFgs;
      rec.iterations = j.at("iterations").get<std::size_t>();
      rec.distance = j.at("distance").get<double>();
      rec.target_probs = j.at("target_probs").get<std::vector<double>>();
      rec.success = j.at("success").get<bool>();
      rec.error = j.at("error").get<std::string>();
      std::vector<double> px(per);
      for (double& v : px) {
        v = r.f64();
        if (!(v >= 0.0 && v <= 255.0)) throw FormatError("adversarial pixel outside [0, 255]");
      }
      rec.image = core::Tensor(shape, std::move(px));
      if (rec.label == rec.target) throw FormatError("adversarial record with y* == y");
      set.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed adversarial set manifest: ") + e.what());
  }
  return set;
}

}  // namespace advi::attack
