#include <charconv>
#include <cmath>
#include <sstream>

#include "advi/cli/cli.hpp"
#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/util/parallel.hpp"

namespace advi::cli {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

// Keys double as the documentation of the config file format.
constexpr KeyDefault kDefaults[] = {
    {"run.out", ""},
    {"run.seed", "1"},
    {"run.workers", ""},
    {"in.dataset", ""},
    {"in.checkpoint", ""},
    {"in.adversarial", ""},
    {"in.runs", ""},
    {"data.image_size", "32"},
    {"data.classes", "16"},
    {"data.train_per_class", "150"},
    {"data.validation_per_class", "30"},
    {"data.position_jitter", "2"},
    {"data.rotation_jitter", "3.141592653589793"},
    {"data.scale_jitter", "0.1"},
    {"data.noise_std", "8"},
    {"train.arch", "cnn-a"},
    {"train.init_seed", ""},
    {"train.epochs", "10"},
    {"train.batch_size", "32"},
    {"train.optimizer", "sgd-momentum"},
    {"train.learning_rate", "0.05"},
    {"train.momentum", "0.9"},
    {"train.weight_decay", "5e-5"},
    {"train.lr_step", "4"},
    {"train.lr_gamma", "0.5"},
    {"train.alpha", "0.5"},
    {"train.beta", "0.1"},
    {"train.fgs_epsilon", "1"},
    {"train.fgs_steps", "10"},
    {"eval.fgs_eps", "1,5"},
    {"eval.top_k", "5"},
    {"attack.lambda", "1e-3"},
    {"attack.step_size", "5"},
    {"attack.max_iterations", "20"},
    {"attack.confidence", "0.9"},
    {"attack.distance", "l2"},
    {"attack.n_targets", "3"},
    {"attack.per_class", "0"},
    {"analysis.fraction", "0.05"},
    {"analysis.bin_width", "0.05"},
    {"analysis.reduction", "max"},
    {"analysis.sigma", "1"},
    {"analysis.floor", "1e-6"},
    {"trace.top_k", "2"},
    {"trace.threshold", ""},
    {"trace.tau_sim", "0.2"},
    {"trace.patch", "8"},
    {"trace.stride", "4"},
    {"trace.removal", "zero"},
    {"trace.space", "probabilities"},
    {"trace.count", "20"},
    {"trace.maps", "true"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& d : kDefaults) values_.emplace(d.key, d.value);
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> out;
  for (const auto& d : kDefaults) out.emplace_back(d.key);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second = trim(value);
}

void RunConfig::merge_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    try {
      set(trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  merge_text(io::read_file(path), path.string());
}

const std::string& RunConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

double RunConfig::number(std::string_view key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' needs a number, got '" + v + "'");
  }
}

std::uint64_t RunConfig::seed(std::string_view key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "' needs a nonnegative integer, got '" +
                      v + "'");
  }
  return out;
}

std::size_t RunConfig::count(std::string_view key) const {
  return static_cast<std::size_t>(seed(key));
}

bool RunConfig::flag(std::string_view key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "' needs true/false, got '" + v + "'");
}

std::vector<std::string> RunConfig::list(std::string_view key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

synthdata::DatasetConfig RunConfig::dataset() const {
  synthdata::DatasetConfig c;
  c.image_size = count("data.image_size");
  c.classes = count("data.classes");
  c.train_per_class = count("data.train_per_class");
  c.validation_per_class = count("data.validation_per_class");
  c.position_jitter = number("data.position_jitter");
  c.rotation_jitter = number("data.rotation_jitter");
  c.scale_jitter = number("data.scale_jitter");
  c.noise_std = number("data.noise_std");
  c.seed = seed("run.seed");
  c.validate();
  return c;
}

training::TrainConfig RunConfig::train() const {
  training::TrainConfig c;
  c.epochs = count("train.epochs");
  c.batch_size = count("train.batch_size");
  const auto& opt = get("train.optimizer");
  if (opt == "adam") {
    c.optimizer.kind = core::OptimizerKind::Adam;
  } else if (opt == "sgd-momentum") {
    c.optimizer.kind = core::OptimizerKind::SgdMomentum;
  } else {
    throw ConfigError("train.optimizer must be sgd-momentum or adam, got '" + opt + "'");
  }
  c.optimizer.learning_rate = number("train.learning_rate");
  c.optimizer.momentum = number("train.momentum");
  c.optimizer.weight_decay = number("train.weight_decay");
  c.lr_step = count("train.lr_step");
  c.lr_gamma = number("train.lr_gamma");
  c.seed = seed("run.seed");
  c.alpha = number("train.alpha");
  c.beta = number("train.beta");
  c.fgs_epsilon = number("train.fgs_epsilon");
  c.fgs_steps = count("train.fgs_steps");
  c.validate();
  return c;
}

attack::AttackConfig RunConfig::attack() const {
  attack::AttackConfig c;
  c.lambda = number("attack.lambda");
  c.step_size = number("attack.step_size");
  c.max_iterations = count("attack.max_iterations");
  c.confidence = number("attack.confidence");
  const auto& d = get("attack.distance");
  if (d == "l2") {
    c.distance = attack::DistanceKind::L2;
  } else if (d == "squared-l2") {
    c.distance = attack::DistanceKind::SquaredL2;
  } else {
    throw ConfigError("attack.distance must be l2 or squared-l2, got '" + d + "'");
  }
  c.validate();
  return c;
}

tracing::TraceOptions RunConfig::trace() const {
  tracing::TraceOptions o;
  o.selection.top_k.reset();
  if (has_value("trace.top_k")) o.selection.top_k = count("trace.top_k");
  if (has_value("trace.threshold")) o.selection.threshold = number("trace.threshold");
  if (!o.selection.top_k && !o.selection.threshold) {
    throw ConfigError("trace needs trace.top_k or trace.threshold");
  }
  o.tau_sim = number("trace.tau_sim");
  o.patch = count("trace.patch");
  o.stride = count("trace.stride");
  const auto& rem = get("trace.removal");
  if (rem != "zero" && rem != "mean") throw ConfigError("trace.removal must be zero or mean");
  o.pd.removal = rem == "zero" ? tracing::Removal::Zero : tracing::Removal::Mean;
  const auto& sp = get("trace.space");
  if (sp != "probabilities" && sp != "logits") {
    throw ConfigError("trace.space must be probabilities or logits");
  }
  o.pd.space = sp == "logits" ? tracing::OutputSpace::Logits : tracing::OutputSpace::Probabilities;
  o.with_maps = flag("trace.maps");
  return o;
}

}  // namespace advi::cli
