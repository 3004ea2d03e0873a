#include <cmath>

#include "advi/error.hpp"
#include "advi/tracing/tracing.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace advi;
using namespace advi::tracing;

namespace {

// cnn-a at 16 px has a (32, 4, 4) feature map feeding fc1 directly.
constexpr std::size_t kCh = 32, kCells = 16;

void zero_channel_weights(zoo::Model& m, std::size_t channel) {
  auto& w = m.graph().parameter_value(*m.graph().find("fc1.w"));
  const std::size_t classes = m.spec().classes;
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t j = 0; j < kCells; ++j) w[k * kCh * kCells + channel * kCells + j] = 0.0;
  }
}

}  // namespace

TEST_SUITE("tracing") {

TEST_CASE("channels that cannot reach the output have zero PD") {
  auto m = zoo::Model::build(zoo::Arch::CnnA, 16, 16, 4);
  const auto c = taxonomy::build_correlation(taxonomy::ClassTaxonomy::balanced_binary(4), 1.0);
  Rng rng(3);
  auto phi = testing::random_tensor({kCh, 4, 4}, rng, 0.0, 2.0);
  zero_channel_weights(m, 3);
  CHECK(prediction_difference(m, phi, 3, c) == 0.0);
  for (std::size_t j = 0; j < kCells; ++j) phi[5 * kCells + j] = 0.0;
  CHECK(prediction_difference(m, phi, 5, c) == 0.0);
  CHECK(prediction_difference(m, phi, 6, c) > 0.0);
  const auto all = prediction_differences(m, phi, c);
  REQUIRE(all.size() == kCh);
  for (std::size_t ch = 0; ch < kCh; ++ch) CHECK(all[ch] == prediction_difference(m, phi, ch, c));
  CHECK_THROWS_AS(prediction_difference(m, phi, kCh, c), Error);
}

TEST_CASE("two-class prediction difference by hand") {
  auto m = zoo::Model::build(zoo::Arch::CnnA, 2, 16, 1);
  auto& w = m.graph().parameter_value(*m.graph().find("fc1.w"));
  auto& b = m.graph().parameter_value(*m.graph().find("fc1.b"));
  std::fill(w.data().begin(), w.data().end(), 0.0);
  const double ln9 = std::log(9.0);
  for (std::size_t j = 0; j < kCells; ++j) w[j] = 2.0 * ln9 / kCells;
  b[0] = -ln9;
  b[1] = 0.0;
  core::Tensor phi({kCh, 4, 4});
  for (std::size_t j = 0; j < kCells; ++j) phi[j] = 1.0;
  // With channel 0 the output is (0.9, 0.1); without it (0.1, 0.9).
  const auto c = taxonomy::build_correlation(taxonomy::ClassTaxonomy::balanced_binary(1), 1.0);
  const double expect = 2 * 0.64 * (1 - std::exp(-2.0));
  CHECK(prediction_difference(m, phi, 0, c) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(prediction_difference(m, phi, 0, taxonomy::identity_correlation(2)) ==
        doctest::Approx(2 * 0.64).epsilon(1e-12));
  // Mean removal of a constant channel changes nothing.
  CHECK(prediction_difference(m, phi, 0, c, {Removal::Mean, OutputSpace::Probabilities}) == 0.0);
  // In logit space the change is 2 ln 9 on the first logit.
  CHECK(prediction_difference(m, phi, 0, taxonomy::identity_correlation(2),
                              {Removal::Zero, OutputSpace::Logits}) ==
        doctest::Approx(4 * ln9 * ln9).epsilon(1e-12));
}

TEST_CASE("selection rules") {
  const std::vector<double> pd{0.3, 0.9, 0.3, 0.1};
  auto channels = [](const std::vector<Influence>& v) {
    std::vector<std::size_t> out;
    for (const auto& i : v) out.push_back(i.channel);
    return out;
  };
  CHECK(select_influential(pd, {std::nullopt, 4}).size() == 4);
  CHECK(channels(select_influential(pd, {std::nullopt, 4})) == std::vector<std::size_t>{1, 0, 2, 3});
  CHECK(channels(select_influential(pd, {std::nullopt, 2})) == std::vector<std::size_t>{1, 0});
  CHECK(select_influential(pd, {1.0, std::nullopt}).empty());
  CHECK(channels(select_influential(pd, {0.2, std::nullopt})) == std::vector<std::size_t>{1, 0, 2});
  CHECK(channels(select_influential(pd, {0.2, 1})) == std::vector<std::size_t>{1});
}

TEST_CASE("occlusion grid") {
  CHECK(grid_extent(32, 8, 4) == 7);
  CHECK(grid_extent(30, 8, 4) == 7);
  CHECK(grid_extent(32, 32, 4) == 1);
  CHECK_THROWS_AS(grid_extent(8, 16, 4), ConfigError);

  auto m = zoo::Model::build(zoo::Arch::CnnA, 4, 16, 2);
  core::Tensor flat({3, 16, 16});
  std::fill(flat.data().begin(), flat.data().end(), 40.0);
  const std::vector<double> fill{40.0, 40.0, 40.0};
  const auto map = discrepancy_map(m, flat, MapTarget::ClassProbability, 1, 8, 4, fill);
  CHECK(map.rows == 3);
  CHECK(map.cols == 3);
  for (double v : map.drop) CHECK(v == 0.0);
  const auto pgm = map.to_pgm();
  CHECK(pgm.rfind("P5", 0) == 0);

  Rng rng(8);
  const auto img = testing::random_tensor({3, 16, 16}, rng, 0.0, 255.0);
  const auto act = discrepancy_map(m, img, MapTarget::ChannelActivation, 2, 16, 4, fill);
  REQUIRE(act.drop.size() == 1);
}

TEST_CASE("consistency of the selected neurons") {
  const auto eye = taxonomy::identity_correlation(16);
  std::vector<analysis::NeuronProfile> profiles(2);
  profiles[0].channel = 4;
  profiles[0].p = taxonomy::CategoricalDistribution::one_hot(16, 0);
  profiles[1].channel = 9;
  profiles[1].p = taxonomy::CategoricalDistribution::uniform(16);
  const std::vector<Influence> sel{{4, 1.0}, {9, 0.5}};
  const auto ok = influence_consistency(sel, profiles, 0, eye, 0.2);
  CHECK(!ok.inconsistent);
  CHECK(ok.label_similarity[0] == 1.0);
  CHECK(ok.label_similarity[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(ok.min_similarity == ok.label_similarity[1]);
  CHECK(ok.pairwise[1] == ok.pairwise[2]);
  CHECK(influence_consistency(sel, profiles, 0, eye, 0.3).inconsistent);
  CHECK(influence_consistency(sel, profiles, 5, eye, 0.2).inconsistent);
  const std::vector<Influence> missing{{7, 1.0}};
  CHECK_THROWS_AS(influence_consistency(missing, profiles, 0, eye), ConfigError);
}

}  // TEST_SUITE
