#include "advi/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "advi/error.hpp"
#include "advi/util/rng.hpp"

namespace advi::training {

using core::NodeId;
using core::Tensor;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(lr_gamma > 0.0)) throw ConfigError("lr_gamma must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(fgs_epsilon >= 0.0)) throw ConfigError("fgs_epsilon must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", optimizer.kind == core::OptimizerKind::Adam ? "adam" : "sgd-momentum"},
          {"learning_rate", optimizer.learning_rate},
          {"momentum", optimizer.momentum},
          {"beta2", optimizer.beta2},
          {"epsilon", optimizer.epsilon},
          {"weight_decay", optimizer.weight_decay},
          {"lr_step", lr_step},
          {"lr_gamma", lr_gamma},
          {"seed", seed},
          {"alpha", alpha},
          {"beta", beta},
          {"fgs_epsilon", fgs_epsilon},
          {"fgs_steps", fgs_steps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    const auto opt = j.at("optimizer").get<std::string>();
    if (opt != "adam" && opt != "sgd-momentum") throw ConfigError("unknown optimizer " + opt);
    c.optimizer.kind = opt == "adam" ? core::OptimizerKind::Adam : core::OptimizerKind::SgdMomentum;
    c.optimizer.learning_rate = j.at("learning_rate").get<double>();
    c.optimizer.momentum = j.at("momentum").get<double>();
    c.optimizer.beta2 = j.at("beta2").get<double>();
    c.optimizer.epsilon = j.at("epsilon").get<double>();
    c.optimizer.weight_decay = j.at("weight_decay").get<double>();
    c.lr_step = j.at("lr_step").get<std::size_t>();
    c.lr_gamma = j.at("lr_gamma").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.fgs_epsilon = j.at("fgs_epsilon").get<double>();
    c.fgs_steps = j.at("fgs_steps").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json row{{"epoch", e.epoch},
                       {"learning_rate", e.learning_rate},
                       {"loss", e.loss},
                       {"clean_ce", e.clean_ce}};
    if (adversarial) {
      row["adversarial_ce"] = e.adversarial_ce;
      row["consistency"] = e.consistency;
    }
    ep.push_back(row);
  }
  // Wall-clock time is deliberately left out: reports must be reproducible
  // byte for byte, timing goes to the run log.
  nlohmann::json j{{"adversarial", adversarial},
                   {"initial_loss", initial_loss},
                   {"epochs", ep},
                   {"clean_accuracy", clean_accuracy},
                   {"config", config.to_json()}};
  if (adversarial_accuracy >= 0.0) j["adversarial_accuracy"] = adversarial_accuracy;
  return j;
}

zoo::TrainingMetadata metadata_for(const TrainConfig& cfg, bool adversarial) {
  zoo::TrainingMetadata m;
  m.epochs = cfg.epochs;
  m.seed = cfg.seed;
  m.adversarial = adversarial;
  if (adversarial) {
    m.alpha = cfg.alpha;
    m.beta = cfg.beta;
    m.fgs_steps = cfg.fgs_steps;
    m.fgs_epsilon = cfg.fgs_epsilon;
    m.target_rule = "uniform random class != y, per image per epoch";
  }
  m.extra = cfg.to_json();
  return m;
}

namespace {

std::vector<ClassId> labels_of(std::span<const synthdata::LabeledImage> items,
                               std::span<const std::size_t> idx) {
  std::vector<ClassId> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i].label);
  return out;
}

// A training objective over a copy of the model graph.
struct Objective {
  core::ComputeGraph graph;
  NodeId loss = 0, clean_ce = 0, adv_ce = 0, consistency = 0;
  bool adversarial = false;
  std::size_t classes = 0;

  // Plain cross-entropy on the logits.
  explicit Objective(const zoo::Model& m) : graph(m.graph()), classes(m.spec().classes) {
    const NodeId target = graph.input("target", {classes});
    clean_ce = loss = graph.cross_entropy(m.logits_node(), target);
  }

  // Batch rows [0, n) are clean images, rows [n, 2n) their adversarial
  // counterparts; both halves are labelled with y.
  Objective(const zoo::Model& m, std::size_t n, double alpha, double beta)
      : graph(m.graph()), adversarial(true), classes(m.spec().classes) {
    const NodeId target = graph.input("target", {classes});
    const NodeId logits = m.logits_node();
    clean_ce = graph.cross_entropy(graph.slice_rows(logits, 0, n), graph.slice_rows(target, 0, n));
    adv_ce = graph.cross_entropy(graph.slice_rows(logits, n, 2 * n),
                                 graph.slice_rows(target, n, 2 * n));
    const NodeId phi = graph.flatten(m.feature_node());
    consistency =
        graph.squared_distance(graph.slice_rows(phi, 0, n), graph.slice_rows(phi, n, 2 * n));
    loss = graph.weighted_sum({clean_ce, adv_ce, consistency}, {alpha, 1.0 - alpha, beta});
  }

  // Forward + backward with the given parameters; gradient written flat.
  void run(std::span<const double> theta, const Tensor& images, std::span<const ClassId> labels,
           std::vector<double>& grad) {
    graph.set_flat_parameters(theta);
    core::Feed feed;
    feed.emplace("image", images);
    feed.emplace("target", attack::one_hot_rows(labels, classes));
    graph.forward(std::move(feed));
    graph.backward(loss);
    grad.clear();
    for (NodeId p : graph.parameters()) {
      const auto g = graph.grad(p);
      grad.insert(grad.end(), g.begin(), g.end());
    }
  }

  double value(NodeId id) const { return graph.value(id)[0]; }
};

double mean_clean_ce(zoo::Model& model, std::span<const synthdata::LabeledImage> items) {
  const Tensor probs = model.predict(synthdata::batch_images(items));
  const std::size_t k = model.spec().classes;
  double s = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    s -= std::log(std::max(probs[i * k + items[i].label], 1e-300));
  }
  return s / static_cast<double>(items.size());
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.lr_step == 0) return cfg.optimizer.learning_rate;
  return cfg.optimizer.learning_rate *
         std::pow(cfg.lr_gamma, static_cast<double>(epoch / cfg.lr_step));
}

TrainReport train(zoo::Model& model, const synthdata::Dataset& ds, const TrainConfig& cfg,
                  bool adversarial) {
  cfg.validate();
  if (ds.train.empty()) throw ConfigError("training split is empty");
  if (model.spec().classes != ds.config.classes ||
      model.spec().image_size != ds.config.image_size) {
    throw ConfigError("model spec does not match the dataset");
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.adversarial = adversarial;
  report.config = cfg;
  report.initial_loss = mean_clean_ce(model, ds.train);

  // The degenerate objective is plain cross-entropy: take the standard path
  // so the update trajectory is identical, and never generate examples.
  const bool generate = adversarial && !(cfg.alpha == 1.0 && cfg.beta == 0.0);

  std::vector<double> theta = model.graph().flat_parameters();
  const std::array<std::size_t, 1> blocks{theta.size()};
  core::OptimizerState opt(cfg.optimizer, blocks);
  Objective standard(model);
  std::vector<std::pair<std::size_t, Objective>> adv_objectives;
  attack::LossGraph generator(model);
  std::vector<double> grad;

  const std::size_t n = ds.train.size();
  const std::size_t k = ds.config.classes;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5348u, epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    Rng target_rng(derive_seed(cfg.seed, 0x5447u, epoch));

    EpochStats st;
    st.epoch = epoch + 1;
    st.learning_rate = learning_rate_at(cfg, epoch);
    opt.set_learning_rate(st.learning_rate);
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = synthdata::batch_images(ds.train, idx);
      const auto y = labels_of(ds.train, idx);
      double loss = 0.0;
      if (!generate) {
        standard.run(theta, x, y, grad);
        loss = standard.value(standard.loss);
        st.clean_ce += loss;
      } else {
        std::vector<ClassId> targets(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
          ClassId t = target_rng.below(k - 1);
          targets[i] = t >= y[i] ? t + 1 : t;
        }
        generator.graph.set_flat_parameters(theta);
        const Tensor xs = attack::signed_gradient_steps(generator, x, targets, cfg.fgs_epsilon,
                                                        cfg.fgs_steps, -1.0);
        std::vector<ClassId> yy(y);
        yy.insert(yy.end(), y.begin(), y.end());
        auto it = std::find_if(adv_objectives.begin(), adv_objectives.end(),
                               [&](const auto& p) { return p.first == y.size(); });
        if (it == adv_objectives.end()) {
          adv_objectives.emplace_back(y.size(), Objective(model, y.size(), cfg.alpha, cfg.beta));
          it = adv_objectives.end() - 1;
        }
        Objective& obj = it->second;
        obj.run(theta, core::concat_rows(x, xs), yy, grad);
        loss = obj.value(obj.loss);
        st.clean_ce += obj.value(obj.clean_ce);
        st.adversarial_ce += obj.value(obj.adv_ce);
        st.consistency += obj.value(obj.consistency);
      }
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1));
      }
      st.loss += loss;
      ++batches;
      const std::array<std::span<double>, 1> params{std::span<double>(theta)};
      const std::array<std::span<const double>, 1> grads{std::span<const double>(grad)};
      opt.step(params, grads);
    }
    const double b = static_cast<double>(batches);
    st.loss /= b;
    st.clean_ce /= b;
    st.adversarial_ce /= b;
    st.consistency /= b;
    report.epochs.push_back(st);
  }
  model.graph().set_flat_parameters(theta);
  report.clean_accuracy = evaluate(model, ds.validation, 1).top1;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace

TrainReport train_standard(zoo::Model& model, const synthdata::Dataset& ds,
                           const TrainConfig& cfg) {
  return train(model, ds, cfg, false);
}

TrainReport train_adversarial(zoo::Model& model, const synthdata::Dataset& ds,
                              const TrainConfig& cfg) {
  return train(model, ds, cfg, true);
}

Accuracy top_k_accuracy(const Tensor& probs, std::span<const ClassId> labels, std::size_t k) {
  if (labels.empty()) throw ConfigError("accuracy of an empty set");
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("probability matrix does not match the label count");
  }
  const std::size_t classes = probs.dim(1);
  if (k < 1) throw ConfigError("top-k needs k >= 1");
  Accuracy a;
  a.k = std::min(k, classes);
  a.count = labels.size();
  std::size_t top1 = 0, topk = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double* row = probs.raw() + r * classes;
    const ClassId y = labels[r];
    std::size_t rank = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++rank;
    }
    top1 += rank == 0;
    topk += rank < a.k;
  }
  a.top1 = static_cast<double>(top1) / static_cast<double>(a.count);
  a.topk = static_cast<double>(topk) / static_cast<double>(a.count);
  return a;
}

Accuracy evaluate(zoo::Model& model, std::span<const synthdata::LabeledImage> images,
                  std::size_t k) {
  if (images.empty()) throw ConfigError("evaluate on an empty set");
  std::vector<ClassId> labels;
  for (const auto& s : images) labels.push_back(s.label);
  return top_k_accuracy(model.predict(synthdata::batch_images(images)), labels, k);
}

Accuracy evaluate(zoo::Model& model, const attack::AdversarialSet& set, std::size_t k) {
  if (set.records.empty()) throw ConfigError("evaluate on an empty adversarial set");
  std::vector<Tensor> imgs;
  std::vector<ClassId> labels;
  for (const auto& r : set.records) {
    imgs.push_back(r.image);
    labels.push_back(r.label);
  }
  return top_k_accuracy(model.predict(core::stack(imgs)), labels, k);
}

double evaluate_fgs(zoo::Model& model, std::span<const synthdata::LabeledImage> images,
                    double eps, std::size_t chunk) {
  if (images.empty()) throw ConfigError("evaluate on an empty set");
  if (!(eps >= 0.0)) throw ConfigError("FGS epsilon must be >= 0");
  attack::LossGraph g(model);
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
    const std::size_t end = std::min(images.size(), begin + chunk);
    const auto part = images.subspan(begin, end - begin);
    std::vector<ClassId> y;
    for (const auto& s : part) y.push_back(s.label);
    const Tensor x = synthdata::batch_images(part);
    const Tensor xs = attack::signed_gradient_steps(g, x, y, eps, 1, +1.0);
    const auto pred = zoo::argmax_rows(model.predict(xs));
    for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

}  // namespace advi::training
