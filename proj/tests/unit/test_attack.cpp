#include <algorithm>
#include <cmath>

#include "advi/attack/adversarial_set.hpp"
#include "advi/attack/attack.hpp"
#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/training/training.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace advi;
using namespace advi::attack;

namespace {

synthdata::Dataset tiny_dataset() {
  synthdata::DatasetConfig c;
  c.image_size = 16;
  c.classes = 4;
  c.train_per_class = 20;
  c.validation_per_class = 3;
  c.seed = 5;
  return synthdata::generate(c);
}

std::vector<zoo::Model> tiny_ensemble(std::size_t classes = 4) {
  std::vector<zoo::Model> ms;
  for (zoo::Arch a : zoo::kAllArchs) ms.push_back(zoo::Model::build(a, classes, 16, 21));
  return ms;
}

// A cnn-a briefly trained on the default 16-class data; shared by the
// tests that need a model with meaningful gradients.
zoo::Model& trained_model() {
  static zoo::Model m = [] {
    synthdata::DatasetConfig c;
    c.train_per_class = 40;
    c.validation_per_class = 2;
    const auto ds = synthdata::generate(c);
    auto model = zoo::Model::build(zoo::Arch::CnnA, 16, 32, 2);
    training::TrainConfig tc;
    tc.epochs = 3;
    training::train_standard(model, ds, tc);
    return model;
  }();
  return m;
}

}  // namespace

TEST_SUITE("attack") {

TEST_CASE("config validation and json") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(AttackConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.step_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.max_iterations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("least-likely targets") {
  std::vector<double> p{0.7, 0.2, 0.05, 0.05};
  CHECK(least_likely_from_probs(p, 2) == std::vector<ClassId>{2, 3});
  CHECK(least_likely_from_probs(p, 3) == std::vector<ClassId>{2, 3, 1});
  CHECK(least_likely_from_probs(p, 2, ClassId{2}) == std::vector<ClassId>{3, 1});
  std::vector<double> uniform(16, 1.0 / 16);
  CHECK(least_likely_from_probs(uniform, 5) == std::vector<ClassId>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(least_likely_from_probs(p, 4), ConfigError);

  auto ms = tiny_ensemble();
  const auto ds = tiny_dataset();
  const auto& x = ds.validation[0].image;
  const auto all = least_likely_targets(ms, x, 3);
  // n = K-1 drops exactly the class with the largest mean probability.
  const auto batch = x.reshaped({1, 3, 16, 16});
  std::vector<double> mean(4, 0.0);
  for (auto& m : ms) {
    const auto pr = m.predict(batch);
    for (std::size_t k = 0; k < 4; ++k) mean[k] += pr[k] / 3.0;
  }
  const auto top = static_cast<ClassId>(std::max_element(mean.begin(), mean.end()) - mean.begin());
  CHECK(std::find(all.begin(), all.end(), top) == all.end());
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(mean[all[i - 1]] <= mean[all[i]]);
}

TEST_CASE("huge lambda stays near the input and does not succeed") {
  auto ms = tiny_ensemble();
  const auto ds = tiny_dataset();
  const auto& s = ds.validation[1];
  AttackConfig cfg;
  cfg.lambda = 1e9;
  cfg.max_iterations = 1;
  const auto r = ensemble_attack(ms, s.image, s.label, (s.label + 1) % 4, cfg);
  CHECK(!r.success);
  CHECK(r.iterations == 1);
  // Adam's first step is at most the step size per pixel.
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    REQUIRE(std::abs(r.adversarial[i] - s.image[i]) <= cfg.step_size + 1e-9);
  }
  CHECK(r.distance == doctest::Approx(l2_distance(r.adversarial, s.image)).epsilon(1e-12));
  CHECK_THROWS_AS(ensemble_attack(ms, s.image, s.label, s.label, cfg), ConfigError);
}

TEST_CASE("a single model with lambda 0 lowers the target loss") {
  std::vector<zoo::Model> one{zoo::Model::build(zoo::Arch::CnnA, 16, 32, 9)};
  Rng rng(2);
  const auto x = testing::random_tensor({3, 32, 32}, rng, 0.0, 255.0);
  AttackConfig cfg;
  cfg.lambda = 0.0;
  cfg.max_iterations = 3;
  cfg.confidence = 1.0;
  const auto r = ensemble_attack(one, x, 0, 5, cfg);
  REQUIRE(r.losses.size() == 4);
  CHECK(r.losses[1] < r.losses[0]);
  CHECK(r.losses[2] < r.losses[1]);
  CHECK(r.losses[3] < r.losses[2]);
}

TEST_CASE("attack objective decreases step to step at default settings") {
  std::vector<zoo::Model> one{trained_model()};
  synthdata::DatasetConfig c;
  std::size_t pairs = 0, rising = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto label = static_cast<ClassId>(2 * i);
    const auto x = synthdata::render_sample(c, label, 1000 + i);
    const auto t = least_likely_targets(one, x, 1, label)[0];
    const auto r = ensemble_attack(one, x, label, t, {});
    for (std::size_t k = 1; k < r.losses.size(); ++k) {
      ++pairs;
      rising += r.losses[k] > r.losses[k - 1];
    }
    for (double v : r.adversarial.data()) REQUIRE((v >= 0.0 && v <= 255.0));
  }
  MESSAGE("objective rose in " << rising << " of " << pairs << " step pairs");
  CHECK(static_cast<double>(pairs - rising) >= 0.95 * static_cast<double>(pairs));
}

TEST_CASE("signed gradient steps") {
  auto& m = trained_model();
  synthdata::DatasetConfig c;
  core::Tensor x({2, 3, 32, 32});
  std::copy_n(synthdata::render_sample(c, 3, 5000).data().begin(), 3072, x.data().begin());
  std::copy_n(synthdata::render_sample(c, 12, 5001).data().begin(), 3072, x.data().begin() + 3072);
  const std::vector<ClassId> labels{3, 12}, targets{9, 0};

  CHECK(targeted_fgs(m, x, targets, 0.0, 5) == x);
  CHECK(untargeted_fgs(m, x, labels, 0.0) == x);
  CHECK(targeted_fgs(m, x, targets, 2.0, 0) == x);

  // One step against an independently computed input gradient.
  LossGraph g(m);
  g.evaluate(x, targets);
  const std::vector<double> grad(g.input_grad().begin(), g.input_grad().end());
  const auto once = targeted_fgs(m, x, targets, 2.0, 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = grad[i] > 0 ? 1.0 : (grad[i] < 0 ? -1.0 : 0.0);
    REQUIRE(once[i] == std::clamp(x[i] - 2.0 * s, 0.0, 255.0));
  }
  const auto away = untargeted_fgs(m, x, labels, 2.0);
  g.evaluate(x, labels);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gi = g.input_grad()[i];
    const double s = gi > 0 ? 1.0 : (gi < 0 ? -1.0 : 0.0);
    REQUIRE(away[i] == std::clamp(x[i] + 2.0 * s, 0.0, 255.0));
  }

  // Clipping: a bright image cannot leave [0, 255].
  core::Tensor bright({1, 3, 32, 32});
  std::fill(bright.data().begin(), bright.data().end(), 254.0);
  const std::vector<ClassId> one_target{4};
  const auto clipped = targeted_fgs(m, bright, one_target, 3.0, 4);
  for (double v : clipped.data()) REQUIRE((v >= 0.0 && v <= 255.0));
  CHECK(*std::max_element(clipped.data().begin(), clipped.data().end()) == 255.0);
}

TEST_CASE("adversarial set counting, persistence and determinism") {
  testing::TempDir dir("attack");
  const auto ds = tiny_dataset();
  auto ms = tiny_ensemble();
  AttackConfig cfg;
  cfg.max_iterations = 2;
  const auto set = build_adversarial_set(ds, ms, 2, cfg);
  CHECK(set.records.size() == 4 * 3 * 2);
  std::size_t wins = 0;
  for (const auto& r : set.records) {
    CHECK(r.error.empty());
    CHECK(r.target != r.label);
    CHECK(&source_of(ds, r) == &ds.validation[r.source_index]);
    CHECK(r.distance == doctest::Approx(l2_distance(r.image, source_of(ds, r).image)).epsilon(1e-9));
    wins += r.success;
  }
  CHECK(set.successes() == wins);
  CHECK(set.success_rate() == static_cast<double>(wins) / 24.0);

  const auto limited = build_adversarial_set(ds, ms, 1, cfg, 2, 2);
  CHECK(limited.records.size() == 4 * 2);

  save_adversarial_set(set, dir / "adv.json");
  const auto back = load_adversarial_set(dir / "adv.json");
  REQUIRE(back.records.size() == set.records.size());
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    CHECK(back.records[i].image == set.records[i].image);
    CHECK(back.records[i].target == set.records[i].target);
    CHECK(back.records[i].distance == set.records[i].distance);
    CHECK(back.records[i].success == set.records[i].success);
  }
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "adv.json"));
  CHECK(manifest["stats"]["success_rate"].get<double>() == set.success_rate());
  CHECK(manifest["stats"]["successes"].get<std::size_t>() == wins);

  // Same inputs, different worker counts: identical records.
  const auto again = build_adversarial_set(ds, ms, 2, cfg, 0, 3);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    CHECK(again.records[i].image == set.records[i].image);
  }

  std::string payload = io::read_file(dir / "adv.bin");
  payload[8] ^= 0x01;
  io::write_file(dir / "adv.bin", payload);
  CHECK_THROWS_AS(load_adversarial_set(dir / "adv.json"), FormatError);
}

}  // TEST_SUITE
