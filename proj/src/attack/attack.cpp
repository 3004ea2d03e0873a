#include "advi/attack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advi/core/optimizer.hpp"
#include "advi/error.hpp"
#include "advi/kernels.hpp"

namespace advi::attack {

using core::Tensor;

Tensor one_hot_rows(std::span<const ClassId> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ConfigError("label out of range");
    t[i * classes + labels[i]] = 1.0;
  }
  return t;
}

LossGraph::LossGraph(const zoo::Model& model)
    : graph(model.graph()),
      input(model.input_node()),
      logits(model.logits_node()),
      probs(model.probs_node()),
      classes(model.spec().classes) {
  target = graph.input("target", {classes});
  loss = graph.cross_entropy(logits, target);
}

void LossGraph::sync(const zoo::Model& model) {
  graph.set_flat_parameters(model.graph().flat_parameters());
}

double LossGraph::evaluate(const Tensor& images, std::span<const ClassId> labels) {
  core::Feed feed;
  feed.emplace("image", images);
  feed.emplace("target", one_hot_rows(labels, classes));
  graph.forward(std::move(feed));
  graph.backward(loss);
  return graph.value(loss)[0];
}

void AttackConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("attack lambda must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("attack step size must be > 0");
  if (max_iterations < 1) throw ConfigError("attack max_iterations must be >= 1");
  if (!(confidence > 0.0 && confidence <= 1.0)) {
    throw ConfigError("attack confidence must be in (0, 1]");
  }
}

nlohmann::json AttackConfig::to_json() const {
  return {{"lambda", lambda},
          {"step_size", step_size},
          {"max_iterations", max_iterations},
          {"confidence", confidence},
          {"distance", distance == DistanceKind::L2 ? "l2" : "squared-l2"}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  try {
    c.lambda = j.at("lambda").get<double>();
    c.step_size = j.at("step_size").get<double>();
    c.max_iterations = j.at("max_iterations").get<std::size_t>();
    c.confidence = j.at("confidence").get<double>();
    const auto d = j.at("distance").get<std::string>();
    if (d != "l2" && d != "squared-l2") throw FormatError("unknown distance '" + d + "'");
    c.distance = d == "l2" ? DistanceKind::L2 : DistanceKind::SquaredL2;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed attack config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view attack_kind_name(AttackKind k) {
  return k == AttackKind::Ensemble ? "ensemble" : "targeted-fgs";
}

double l2_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("l2_distance size mismatch");
  return std::sqrt(kernels::squared_distance(a.raw(), b.raw(), a.size()));
}

std::vector<ClassId> least_likely_from_probs(std::span<const double> mean_probs, std::size_t n,
                                             std::optional<ClassId> exclude) {
  if (n >= mean_probs.size()) throw ConfigError("least-likely target count must be < K");
  std::vector<ClassId> ids(mean_probs.size());
  std::iota(ids.begin(), ids.end(), ClassId{0});
  if (exclude) std::erase(ids, *exclude);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](ClassId a, ClassId b) { return mean_probs[a] < mean_probs[b]; });
  ids.resize(n);
  return ids;
}

std::vector<ClassId> least_likely_targets(std::span<zoo::Model> models, const Tensor& x,
                                          std::size_t n, std::optional<ClassId> exclude) {
  if (models.empty()) throw ConfigError("empty ensemble");
  const Tensor batch = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  std::vector<double> mean(models[0].spec().classes, 0.0);
  for (auto& m : models) {
    const Tensor p = m.predict(batch);
    if (p.size() != mean.size()) throw ShapeError("ensemble members disagree on K");
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += p[k];
  }
  for (double& v : mean) v /= static_cast<double>(models.size());
  return least_likely_from_probs(mean, n, exclude);
}

EnsembleAttacker::EnsembleAttacker(std::span<const zoo::Model> models, AttackConfig config)
    : config_(config) {
  config_.validate();
  if (models.empty()) throw ConfigError("empty ensemble");
  for (const auto& m : models) graphs_.emplace_back(m);
}

AttackResult EnsembleAttacker::run(const Tensor& x, ClassId y, ClassId target) {
  if (x.rank() != 3) throw ShapeError("attack expects a single (3, S, S) image");
  if (target == y) throw ConfigError("target class equals the true class");
  for (double v : x.data()) {
    if (!(v >= 0.0 && v <= 255.0)) throw ConfigError("attack input outside [0, 255]");
  }
  const std::size_t n = x.size();
  const core::Shape batch_shape{1, x.dim(0), x.dim(1), x.dim(2)};
  Tensor adv = x.reshaped(batch_shape);
  const std::array<ClassId, 1> tgt{target};

  core::OptimizerConfig oc;
  oc.kind = core::OptimizerKind::Adam;
  oc.learning_rate = config_.step_size;
  const std::array<std::size_t, 1> blocks{n};
  core::OptimizerState adam(oc, blocks);

  AttackResult r;
  std::vector<double> grad(n);
  for (std::size_t it = 0;; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    bool confident = true;
    r.target_probs.clear();
    std::size_t hits = 0;
    for (auto& g : graphs_) {
      loss += g.evaluate(adv, tgt);
      const auto gi = g.input_grad();
      for (std::size_t i = 0; i < n; ++i) grad[i] += gi[i];
      const Tensor& p = g.probabilities();
      r.target_probs.push_back(p[target]);
      confident = confident && p[target] > config_.confidence;
      if (zoo::argmax_rows(p)[0] == target) ++hits;
    }
    const double d2 = kernels::squared_distance(adv.raw(), x.raw(), n);
    const double d = std::sqrt(d2);
    if (config_.distance == DistanceKind::L2) {
      loss += config_.lambda * d;
      // The Euclidean norm has no gradient at 0; x* = x starts there.
      if (d > 0.0) {
        for (std::size_t i = 0; i < n; ++i) grad[i] += config_.lambda * (adv[i] - x[i]) / d;
      }
    } else {
      loss += config_.lambda * d2;
      for (std::size_t i = 0; i < n; ++i) grad[i] += 2.0 * config_.lambda * (adv[i] - x[i]);
    }
    if (!std::isfinite(loss)) {
      throw NumericError("ensemble attack diverged at iteration " + std::to_string(it));
    }
    r.losses.push_back(loss);
    r.success = hits == graphs_.size();
    r.distance = d;
    if (confident || it == config_.max_iterations) {
      r.iterations = it;
      break;
    }
    const std::array<std::span<double>, 1> params{adv.data()};
    const std::array<std::span<const double>, 1> grads{std::span<const double>(grad)};
    adam.step(params, grads);
    for (double& v : adv.data()) v = std::clamp(v, 0.0, 255.0);
  }
  r.adversarial = adv.reshaped(x.shape());
  return r;
}

AttackResult ensemble_attack(std::span<const zoo::Model> models, const Tensor& x, ClassId y,
                             ClassId target, const AttackConfig& config) {
  EnsembleAttacker a(models, config);
  return a.run(x, y, target);
}

Tensor signed_gradient_steps(LossGraph& graph, const Tensor& images,
                             std::span<const ClassId> labels, double eps, std::size_t steps,
                             double direction) {
  if (!(eps >= 0.0)) throw ConfigError("FGS epsilon must be >= 0");
  Tensor x = images;
  if (eps == 0.0) return x;
  for (std::size_t t = 0; t < steps; ++t) {
    graph.evaluate(x, labels);
    const auto g = graph.input_grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("non-finite input gradient in FGS");
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      x[i] = std::clamp(x[i] + direction * eps * s, 0.0, 255.0);
    }
  }
  return x;
}

Tensor targeted_fgs(const zoo::Model& model, const Tensor& images,
                    std::span<const ClassId> targets, double eps, std::size_t steps) {
  LossGraph g(model);
  return signed_gradient_steps(g, images, targets, eps, steps, -1.0);
}

Tensor untargeted_fgs(const zoo::Model& model, const Tensor& images,
                      std::span<const ClassId> labels, double eps) {
  LossGraph g(model);
  return signed_gradient_steps(g, images, labels, eps, 1, +1.0);
}

}  // namespace advi::attack
