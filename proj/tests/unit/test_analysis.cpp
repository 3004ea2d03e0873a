#include <cmath>
#include <numbers>

#include "advi/analysis/analysis.hpp"
#include "advi/error.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace advi;
using namespace advi::analysis;

namespace {

using Rows = std::vector<std::vector<double>>;

double brute_auc(const std::vector<double>& clean, const std::vector<double>& adv) {
  double s = 0.0;
  for (double a : adv) {
    for (double c : clean) s += a < c ? 1.0 : (a == c ? 0.5 : 0.0);
  }
  return s / static_cast<double>(clean.size() * adv.size());
}

ActivationMatrix random_activations(std::size_t n, std::size_t ch, Rng& rng) {
  ActivationMatrix m;
  m.images = n;
  m.channels = ch;
  for (std::size_t i = 0; i < n * ch; ++i) m.values.push_back(rng.uniform());
  return m;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("top activation selection") {
  const std::vector<double> a{3, 1, 2, 0};
  CHECK(top_activations(a, 0.5) == std::vector<std::size_t>{0, 2});
  CHECK(top_activations(a, 1.0) == std::vector<std::size_t>{0, 2, 1, 3});
  CHECK(top_activations(a, 0.01) == std::vector<std::size_t>{0});
  const std::vector<double> zeros(4, 0.0);
  CHECK(top_activations(zeros, 0.5) == std::vector<std::size_t>{0, 1});
  CHECK(top_count(100, 0.05) == 5);
  CHECK(top_count(10, 0.05) == 1);

  const std::vector<ClassId> labels{2, 0, 2, 1};
  const auto p = label_distribution(labels, top_activations(a, 0.5), 4);
  CHECK(p.probs()[2] == 1.0);
  CHECK(p.probs()[0] == 0.0);
}

TEST_CASE("feature reduction") {
  core::Tensor f({1, 2, 2, 2}, {1, -2, 3, 0, 5, 5, 1, 1});
  const auto mx = reduce_features(f, Reduction::Max);
  const auto mean = reduce_features(f, Reduction::Mean);
  CHECK(mx.values == std::vector<double>{3, 5});
  CHECK(mean.values == std::vector<double>{0.5, 3});
  CHECK(parse_reduction(reduction_name(Reduction::Mean)) == Reduction::Mean);
  CHECK_THROWS_AS(parse_reduction("median"), ConfigError);
}

TEST_CASE("profiles: degenerate identities") {
  Rng rng(5);
  const auto tax = taxonomy::ClassTaxonomy::balanced_binary(2);
  const auto c = taxonomy::build_correlation(tax, 1.0);
  const auto real = random_activations(40, 6, rng);
  std::vector<ClassId> labels(40);
  for (auto& l : labels) l = static_cast<ClassId>(rng.below(4));

  // Targets equal to labels: q and q~ coincide.
  const auto adv = random_activations(30, 6, rng);
  std::vector<ClassId> y(30), t(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = t[i] = static_cast<ClassId>(rng.below(4));
  const auto same = profile_from_activations(real, labels, adv, y, t, 0.2, c);
  for (const auto& n : same.neurons) CHECK(n.cs1 == n.cs2);

  // The real set posing as the adversarial set: q == p, CS1 == 1.
  const auto mirror = profile_from_activations(real, labels, real, labels, labels, 0.2, c);
  REQUIRE(mirror.neurons.size() == 6);
  for (const auto& n : mirror.neurons) {
    CHECK(n.cs1 == 1.0);
    CHECK(n.lc == doctest::Approx(taxonomy::level_consistency(n.p, c)).epsilon(1e-15));
    CHECK(n.real_top.size() == 8);
  }
  std::size_t binned = 0;
  for (const auto& b : mirror.bins) binned += b.count;
  CHECK(binned == 6);
  CHECK(mirror.to_csv().find("channel") != std::string::npos);
}

TEST_CASE("pearson") {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, flat{1, 1, 1, 1};
  CHECK(pearson(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(a, flat) == 0.0);
}

TEST_CASE("representation ratios") {
  const Rows sy{{0.0}, {2.0}}, st{{1.0}, {3.0}};
  const std::vector<double> phi{1.0};
  const auto r = repr_ratios(phi, sy, st);
  CHECK(r.r1 == 0.5);
  CHECK(r.r2 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.error.empty());

  CHECK(mean_within_distance({{0.0}, {2.0}, {4.0}}) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  CHECK(mean_cross_distance(sy, st) == 1.5);
  CHECK(mean_distance(phi, sy) == 1.0);

  // Uniform rescaling of the whole space leaves both ratios unchanged.
  Rng rng(9);
  Rows a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    b.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  }
  const std::vector<double> p{0.3, 0.2, 0.9};
  const auto base = repr_ratios(p, a, b);
  auto scale = [](Rows rows) {
    for (auto& row : rows) {
      for (double& v : row) v *= 7.5;
    }
    return rows;
  };
  const auto scaled = repr_ratios(std::vector<double>{2.25, 1.5, 6.75}, scale(a), scale(b));
  CHECK(scaled.r1 == doctest::Approx(base.r1).epsilon(1e-12));
  CHECK(scaled.r2 == doctest::Approx(base.r2).epsilon(1e-12));

  // A single-member label set has no within-set pairs.
  CHECK_THROWS_AS(repr_ratios(phi, {{0.0}}, st), Error);
}

TEST_CASE("profiles and ratios skip failed adversarial records") {
  synthdata::DatasetConfig dc;
  dc.image_size = 16;
  dc.classes = 4;
  dc.train_per_class = 4;
  dc.validation_per_class = 3;
  dc.seed = 8;
  const auto ds = synthdata::generate(dc);
  auto m = zoo::Model::build(zoo::Arch::CnnA, 4, 16, 3);

  attack::AdversarialSet set;
  for (std::size_t i = 0; i < 6; ++i) {
    attack::AdversarialRecord r;
    r.label = ds.validation[i].label;
    r.target = (r.label + 1) % 4;
    r.source_index = i;
    r.image = ds.validation[i].image;
    r.success = i % 3 == 1;
    set.records.push_back(std::move(r));
  }
  CHECK(set.successful_indices() == std::vector<std::size_t>{1, 4});

  const auto ratios = ratios_for_set(m, ds.validation, set);
  REQUIRE(ratios.records.size() == 2);
  CHECK(ratios.records[0].record == 1);
  CHECK(ratios.records[1].record == 4);

  const auto c = taxonomy::build_correlation(ds.taxonomy);
  const auto prof = profile_neurons(m, ds.validation, set, 0.5, c);
  for (const auto& n : prof.neurons) {
    for (std::size_t i : n.adv_top) CHECK(set.records[i].success);
  }

  for (auto& r : set.records) r.success = false;
  CHECK_THROWS_AS(ratios_for_set(m, ds.validation, set), ConfigError);
  CHECK_THROWS_AS(profile_neurons(m, ds.validation, set, 0.5, c), ConfigError);
}

TEST_CASE("gaussian detector") {
  const Rows same{{1.0, 2.0}, {1.0, 2.0}, {4.0, 0.0}, {6.0, 2.0}};
  const std::vector<ClassId> labels{0, 0, 1, 1};
  const auto det = fit_detector(same, labels, 2, 1e-6);
  CHECK(det.mean[0] == std::vector<double>{1.0, 2.0});
  CHECK(det.variance[0] == std::vector<double>{1e-6, 1e-6});
  CHECK(det.mean[1] == std::vector<double>{5.0, 1.0});
  CHECK(det.variance[1] == std::vector<double>{1.0, 1.0});
  const double at_mean = -0.5 * 2 * std::log(2 * std::numbers::pi * 1e-6);
  CHECK(det.log_density(std::vector<double>{1.0, 2.0}, 0) == doctest::Approx(at_mean).epsilon(1e-14));
  CHECK(det.log_density(std::vector<double>{6.0, 1.0}, 1) <
        det.log_density(std::vector<double>{5.0, 1.0}, 1));
  CHECK_THROWS_AS(fit_detector(same, std::vector<ClassId>{0, 1, 1, 1}, 2), ConfigError);

  testing::TempDir dir("detector");
  save_detector(det, dir / "d.bin");
  const auto back = load_detector(dir / "d.bin");
  CHECK(back.mean == det.mean);
  CHECK(back.variance == det.variance);
  CHECK(back.counts == det.counts);
}

TEST_CASE("roc auc") {
  CHECK(roc_auc(std::vector<double>{3, 5}, std::vector<double>{1, 2, 4}).auc ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(roc_auc(std::vector<double>{10, 11}, std::vector<double>{1, 2}).auc == 1.0);
  CHECK(roc_auc(std::vector<double>{1, 2, 2}, std::vector<double>{2, 1, 2}).auc == 0.5);

  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> clean(1 + rng.below(25)), adv(1 + rng.below(25));
    for (double& v : clean) v = static_cast<double>(rng.below(10));
    for (double& v : adv) v = static_cast<double>(rng.below(10));
    const double auc = roc_auc(clean, adv).auc;
    REQUIRE(auc == doctest::Approx(brute_auc(clean, adv)).epsilon(1e-15));
    // Strictly monotone transforms keep the ranking.
    for (double& v : clean) v = std::exp(v / 3);
    for (double& v : adv) v = std::exp(v / 3);
    REQUIRE(roc_auc(clean, adv).auc == auc);
  }
  const auto roc = roc_auc(std::vector<double>{3, 5}, std::vector<double>{1, 2, 4});
  CHECK(roc.curve.front().tpr <= roc.curve.back().tpr);
  CHECK(roc.curve.back().tpr == 1.0);
  CHECK(roc.curve.back().fpr == 1.0);
}

}  // TEST_SUITE
