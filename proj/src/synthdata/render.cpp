#include <algorithm>
#include <array>
#include <cmath>

#include "advi/error.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/util/rng.hpp"

namespace advi::synthdata {

Attributes attributes_of(ClassId label, std::size_t depth) {
  if (depth == 0 || depth > kMaxDepth || label >= (std::size_t{1} << depth)) {
    throw ConfigError("class id out of range for tree depth");
  }
  std::array<bool, kMaxDepth> bits{};
  for (std::size_t k = 0; k < depth; ++k) bits[k] = ((label >> (depth - 1 - k)) & 1u) != 0;
  return {bits[0], bits[1], bits[2], bits[3]};
}

ClassId class_of(const Attributes& a, std::size_t depth) {
  const std::array<bool, kMaxDepth> bits{a.angular, a.hollow, a.dashed, a.small};
  ClassId id = 0;
  for (std::size_t k = 0; k < depth; ++k) id = (id << 1) | (bits[k] ? 1u : 0u);
  return id;
}

taxonomy::ClassTaxonomy attribute_taxonomy(std::size_t depth) {
  if (depth == 0 || depth > kMaxDepth) throw ConfigError("tree depth must be 1..4");
  return taxonomy::ClassTaxonomy::balanced_binary(depth, {"shape", "fill", "stroke"});
}

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 6> kFillPalette{{
    {220, 40, 40},
    {40, 200, 60},
    {50, 90, 230},
    {230, 200, 30},
    {200, 50, 200},
    {30, 200, 210},
}};

double clamp_pixel(double v) { return std::clamp(v, 0.0, 255.0); }

}  // namespace

core::Tensor render_sample(const DatasetConfig& config, ClassId label,
                           std::size_t sample_id, bool noise) {
  const std::size_t depth = config.depth();
  const Attributes attr = attributes_of(label, depth);
  Rng rng(derive_seed(config.seed, label, sample_id));

  const double gray = rng.uniform(25.0, 75.0);
  Rgb bg{};
  for (double& c : bg) c = gray + rng.uniform(-10.0, 10.0);
  Rgb fill = kFillPalette[rng.below(kFillPalette.size())];
  for (double& c : fill) c = clamp_pixel(c + rng.uniform(-15.0, 15.0));
  Rgb stroke{};
  for (double& c : stroke) c = rng.uniform(200.0, 250.0);

  const double s = static_cast<double>(config.image_size);
  const double cx = s / 2.0 + rng.uniform(-config.position_jitter, config.position_jitter);
  const double cy = s / 2.0 + rng.uniform(-config.position_jitter, config.position_jitter);
  const double angle = rng.uniform(-config.rotation_jitter, config.rotation_jitter);
  const double scale = 1.0 + rng.uniform(-config.scale_jitter, config.scale_jitter);
  const double dash_phase = rng.uniform(0.0, 1.0);

  const double radius = (attr.small ? 0.21 : 0.33) * s * scale;
  // Squares use the radius as half-side: the corners are what separates the
  // shape families once rotated, so they are kept prominent.
  const double bound = radius;
  const double width = std::max(1.5, 0.05 * s);
  const double period = std::max(4.0, 0.15 * s);
  const double ca = std::cos(angle), sa = std::sin(angle);

  const std::size_t n = config.image_size;
  core::Tensor img({kChannels, n, n});
  for (std::size_t py = 0; py < n; ++py) {
    for (std::size_t px = 0; px < n; ++px) {
      const double x = static_cast<double>(px) + 0.5 - cx;
      const double y = static_cast<double>(py) + 0.5 - cy;
      const double u = ca * x + sa * y;
      const double v = -sa * x + ca * y;
      double r = 0.0, along = 0.0;
      if (attr.angular) {
        r = std::max(std::abs(u), std::abs(v));
        // Measured from the nearest corner, with each corner centred in a
        // dash, so dashing never erases a corner.
        along = bound - std::abs(std::abs(u) >= std::abs(v) ? v : u) + 0.25 * period;
      } else {
        r = std::hypot(u, v);
        along = std::atan2(v, u) * radius;
      }
      const Rgb* color = &bg;
      if (r <= bound) {
        color = attr.hollow ? &bg : &fill;
        if (r > bound - width) {
          const double offset = attr.angular ? 0.0 : dash_phase;
          const double phase = std::fmod(along / period + offset + 1000.0, 1.0);
          if (!attr.dashed || phase < 0.5) color = &stroke;
        }
      }
      for (std::size_t c = 0; c < kChannels; ++c) img[(c * n + py) * n + px] = (*color)[c];
    }
  }
  if (noise && config.noise_std > 0.0) {
    for (double& v : img.data()) v = clamp_pixel(v + config.noise_std * rng.normal());
  }
  // Stored as float32 on disk; keep memory and file bit-identical.
  for (double& v : img.data()) v = static_cast<double>(static_cast<float>(v));
  return img;
}

}  // namespace advi::synthdata
