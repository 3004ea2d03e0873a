#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "advi/core/graph.hpp"
#include "advi/core/optimizer.hpp"
#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/zoo/model.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace advi;
using namespace advi::synthdata;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.classes = 4;
  c.train_per_class = 5;
  c.validation_per_class = 3;
  c.seed = 42;
  return c;
}

// Reads the four attributes back from a noise-free render. Pixels are
// background (all channels dim), stroke (all channels bright) or fill. The
// convex hull of the non-background pixels gives the shape family (isoperimetric
// quotient) and the size; stroke coverage of the outline band gives dashing.
struct Reading {
  Attributes attr;
  double roundness = 0.0;
  double radius = 0.0;
  double stroke_ratio = 0.0;
};

using Point = std::pair<double, double>;

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
}

std::vector<Point> convex_hull(std::vector<Point> p) {
  std::sort(p.begin(), p.end());
  std::vector<Point> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return h;
}

Reading read_attributes(const core::Tensor& img, std::size_t n) {
  auto px = [&](std::size_t c, std::size_t y, std::size_t x) { return img[(c * n + y) * n + x]; };
  auto all_channels = [&](std::size_t y, std::size_t x, auto pred) {
    return pred(px(0, y, x)) && pred(px(1, y, x)) && pred(px(2, y, x));
  };
  auto is_bg = [&](std::size_t y, std::size_t x) {
    return all_channels(y, x, [](double v) { return v <= 100.0; });
  };
  auto is_stroke = [&](std::size_t y, std::size_t x) {
    return all_channels(y, x, [](double v) { return v >= 185.0; });
  };
  std::vector<Point> pts;
  double strokes = 0, sx = 0, sy = 0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      if (is_bg(y, x)) continue;
      // Pixel corners, so the hull covers whole pixels.
      for (double dy : {0.0, 1.0}) {
        for (double dx : {0.0, 1.0}) pts.emplace_back(static_cast<double>(x) + dx, static_cast<double>(y) + dy);
      }
      sx += static_cast<double>(x) + 0.5;
      sy += static_cast<double>(y) + 0.5;
      strokes += is_stroke(y, x);
    }
  }
  const auto hull = convex_hull(pts);
  double area = 0, perimeter = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area += a.first * b.second - b.first * a.second;
    perimeter += std::hypot(b.first - a.first, b.second - a.second);
  }
  area = std::abs(area) / 2;
  // Area centroid of the hull, then the spread of its boundary around it:
  // a square reaches its corners at sqrt(2) times the edge distance.
  double gx = 0, gy = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    const double w = a.first * b.second - b.first * a.second;
    gx += (a.first + b.first) * w;
    gy += (a.second + b.second) * w;
  }
  double signed_area = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    signed_area += a.first * b.second - b.first * a.second;
  }
  gx /= 3 * signed_area;
  gy /= 3 * signed_area;
  double near = 1e9, far = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    far = std::max(far, std::hypot(a.first - gx, a.second - gy));
    const double ex = b.first - a.first, ey = b.second - a.second;
    const double t = std::clamp(((gx - a.first) * ex + (gy - a.second) * ey) / (ex * ex + ey * ey), 0.0, 1.0);
    near = std::min(near, std::hypot(a.first + t * ex - gx, a.second + t * ey - gy));
  }
  Reading out;
  out.roundness = far / near;
  out.attr.angular = out.roundness > 1.25;
  // Circle: area pi r^2; square with half-side r: 4 r^2.
  const double shape_const = out.attr.angular ? 4.0 : M_PI;
  out.radius = std::sqrt(area / shape_const);
  out.attr.small = out.radius < 8.6;
  const double width = 1.6;
  const double band = shape_const * (out.radius * out.radius - (out.radius - width) * (out.radius - width));
  out.stroke_ratio = strokes / band;
  out.attr.dashed = out.stroke_ratio < 0.75;
  const double count = static_cast<double>(pts.size() / 4);
  out.attr.hollow = is_bg(static_cast<std::size_t>(sy / count), static_cast<std::size_t>(sx / count));
  return out;
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("config validation") {
  DatasetConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.depth() == 4);
  c.classes = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.validation_per_class = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.image_size = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.noise_std = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(DatasetConfig::from_json(DatasetConfig{}.to_json()).to_json() == DatasetConfig{}.to_json());
}

TEST_CASE("attribute bits follow the tree levels") {
  for (ClassId k = 0; k < 16; ++k) CHECK(class_of(attributes_of(k, 4), 4) == k);
  const auto a = attributes_of(0b1010, 4);
  CHECK(a.angular);
  CHECK(!a.hollow);
  CHECK(a.dashed);
  CHECK(!a.small);
  // Two classes: only the shape family varies.
  CHECK(attributes_of(1, 1).angular);
  CHECK(!attributes_of(1, 1).small);
  const auto tax = attribute_taxonomy(4);
  CHECK(tax.tree_distance(0b0000, 0b0001) == 2);  // differ in size only
  CHECK(tax.tree_distance(0b0000, 0b1000) == 8);  // differ in shape family
}

TEST_CASE("generation is deterministic, balanced and in range") {
  const auto c = small_config();
  const auto a = generate(c, 1);
  const auto b = generate(c, 3);
  CHECK(a.content_hash() == b.content_hash());
  CHECK(a.train.size() == 20);
  CHECK(a.validation.size() == 12);
  std::vector<std::size_t> per(4, 0);
  std::set<std::pair<ClassId, std::size_t>> ids;
  for (const auto* split : {&a.train, &a.validation}) {
    for (const auto& s : *split) {
      ++per[s.label];
      ids.insert({s.label, s.sample_id});
      CHECK(s.image.shape() == core::Shape{3, 32, 32});
      for (double v : s.image.data()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 255.0);
      }
    }
  }
  for (std::size_t n : per) CHECK(n == 8);
  CHECK(ids.size() == 32);
  auto other = c;
  other.seed = 43;
  CHECK(generate(other).content_hash() != a.content_hash());
}

TEST_CASE("save, load and corruption") {
  testing::TempDir dir("synth");
  const auto ds = generate(small_config());
  save_dataset(ds, dir / "d.json");
  const auto back = load_dataset(dir / "d.json");
  CHECK(back.content_hash() == ds.content_hash());
  CHECK(back.taxonomy == ds.taxonomy);
  CHECK(back.train[3].image == ds.train[3].image);

  // Manifest only: works without the payload.
  std::filesystem::rename(dir / "d.bin", dir / "moved.bin");
  const auto m = load_manifest(dir / "d.json");
  CHECK(m.taxonomy.class_count() == 4);
  CHECK(m.content_hash == ds.content_hash());
  CHECK_THROWS_AS(load_dataset(dir / "d.json"), Error);
  std::filesystem::rename(dir / "moved.bin", dir / "d.bin");

  const std::string payload = io::read_file(dir / "d.bin");
  io::write_file(dir / "d.bin", payload.substr(0, payload.size() - 7));
  CHECK_THROWS_AS(load_dataset(dir / "d.json"), FormatError);
  std::string flipped = payload;
  flipped[100] ^= 0x01;
  io::write_file(dir / "d.bin", flipped);
  CHECK_THROWS_AS(load_dataset(dir / "d.json"), FormatError);

  io::write_file(dir / "d.bin", payload);
  auto manifest = nlohmann::json::parse(io::read_file(dir / "d.json"));
  manifest["version"] = 99;
  io::write_file(dir / "d.json", manifest.dump());
  CHECK_THROWS_AS(load_dataset(dir / "d.json"), FormatError);
}

TEST_CASE("attributes can be read back from noise-free renders") {
  DatasetConfig c;
  std::size_t wrong = 0;
  double lo[4][2], hi[4][2];
  for (auto& a : lo) a[0] = a[1] = 1e9;
  for (auto& a : hi) a[0] = a[1] = -1e9;
  for (ClassId k = 0; k < 16; ++k) {
    for (std::size_t id = 0; id < 25; ++id) {
      const auto img = render_sample(c, k, id, false);
      const auto r = read_attributes(img, c.image_size);
      const bool ok = class_of(r.attr, 4) == k;
      if (!ok) {
        ++wrong;
        MESSAGE("class " << k << " sample " << id << " read as " << class_of(r.attr, 4)
                         << " roundness " << r.roundness << " radius " << r.radius
                         << " stroke " << r.stroke_ratio);
      }
      const auto truth = attributes_of(k, 4);
      const double stat[3] = {r.roundness, r.radius, r.stroke_ratio};
      const bool bit[3] = {truth.angular, truth.small, truth.dashed};
      for (int a = 0; a < 3; ++a) {
        lo[a][bit[a]] = std::min(lo[a][bit[a]], stat[a]);
        hi[a][bit[a]] = std::max(hi[a][bit[a]], stat[a]);
      }
    }
  }
  for (int a = 0; a < 3; ++a) {
    MESSAGE("statistic " << a << ": false [" << lo[a][0] << ", " << hi[a][0] << "] true ["
                         << lo[a][1] << ", " << hi[a][1] << "]");
  }
  CHECK(wrong == 0);
}

TEST_CASE("a linear classifier on raw pixels beats chance by a wide margin") {
  DatasetConfig c;
  c.train_per_class = 150;
  c.validation_per_class = 30;
  const auto ds = generate(c, 2);
  core::ComputeGraph g;
  auto x = g.input("x", {3, 32, 32});
  auto t = g.input("t", {16});
  auto flat = g.flatten(g.scale_shift(x, 1.0 / 255.0, -0.5));
  auto logits = g.linear(flat, g.parameter("w", core::Tensor({16, 3072})),
                         g.parameter("b", core::Tensor({16})));
  auto loss = g.cross_entropy(logits, t);
  const auto params = g.parameters();
  std::vector<std::size_t> sizes;
  for (auto p : params) sizes.push_back(g.parameter_value(p).size());
  core::OptimizerState opt({core::OptimizerKind::Adam, 1e-3}, sizes);
  Rng rng(1);
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < 30; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < order.size(); b += 50) {
      std::vector<std::size_t> idx(order.begin() + b, order.begin() + std::min(order.size(), b + 50));
      core::Tensor tgt({idx.size(), 16});
      for (std::size_t i = 0; i < idx.size(); ++i) tgt[i * 16 + ds.train[idx[i]].label] = 1.0;
      g.forward({{"x", batch_images(ds.train, idx)}, {"t", tgt}});
      g.backward(loss);
      std::vector<std::span<double>> ps;
      std::vector<std::span<const double>> gs;
      for (auto p : params) {
        ps.push_back(g.parameter_value(p).data());
        gs.push_back(g.grad(p));
      }
      opt.step(ps, gs);
    }
  }
  core::Tensor tgt({ds.validation.size(), 16});
  g.forward({{"x", batch_images(ds.validation)}, {"t", tgt}});
  const auto pred = zoo::argmax_rows(g.value(logits));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.validation[i].label;
  const double acc = static_cast<double>(hit) / static_cast<double>(pred.size());
  MESSAGE("linear probe validation accuracy " << acc);
  CHECK(acc >= 0.60);
}

}  // TEST_SUITE
