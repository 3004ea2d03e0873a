#include "advi/tracing/tracing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advi/error.hpp"

namespace advi::tracing {

using core::Tensor;

namespace {

Tensor as_batch(const Tensor& t) {
  core::Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(std::move(s));
}

void remove_channel(double* slice, std::size_t plane, Removal r) {
  double fill = 0.0;
  if (r == Removal::Mean) {
    for (std::size_t k = 0; k < plane; ++k) fill += slice[k];
    fill /= static_cast<double>(plane);
  }
  std::fill(slice, slice + plane, fill);
}

void check_features(const zoo::Model& model, const Tensor& features) {
  if (features.shape() != model.spec().feature_shape) {
    throw ShapeError("expected single-image features of shape " +
                     core::shape_string(model.spec().feature_shape));
  }
}

double pd_of(std::span<const double> base, const double* edited, std::size_t k,
             const CorrelationMatrix& c) {
  std::vector<double> diff(k);
  for (std::size_t j = 0; j < k; ++j) diff[j] = base[j] - edited[j];
  const double pd = taxonomy::c_quadratic(diff, c);
  if (pd < -1e-9) throw NumericError("negative prediction difference under the repaired kernel");
  return pd;
}

}  // namespace

double prediction_difference(zoo::Model& model, const Tensor& features, std::size_t channel,
                             const CorrelationMatrix& c, const PdOptions& opt) {
  check_features(model, features);
  const std::size_t channels = features.dim(0);
  if (channel >= channels) throw ConfigError("channel index out of range");
  const std::size_t plane = features.size() / channels;
  const bool logits = opt.space == OutputSpace::Logits;
  const Tensor base = model.head(as_batch(features), logits);
  Tensor edited = as_batch(features);
  remove_channel(edited.raw() + channel * plane, plane, opt.removal);
  const Tensor out = model.head(edited, logits);
  return pd_of(base.data(), out.raw(), base.size(), c);
}

std::vector<double> prediction_differences(zoo::Model& model, const Tensor& features,
                                           const CorrelationMatrix& c, const PdOptions& opt) {
  check_features(model, features);
  const std::size_t channels = features.dim(0);
  const std::size_t plane = features.size() / channels;
  const bool logits = opt.space == OutputSpace::Logits;
  const Tensor base = model.head(as_batch(features), logits);
  std::vector<Tensor> copies(channels, features);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    remove_channel(copies[ch].raw() + ch * plane, plane, opt.removal);
  }
  const Tensor out = model.head(core::stack(copies), logits);
  const std::size_t k = base.size();
  std::vector<double> pd(channels);
  for (std::size_t ch = 0; ch < channels; ++ch) pd[ch] = pd_of(base.data(), out.raw() + ch * k, k, c);
  return pd;
}

std::vector<Influence> select_influential(std::span<const double> pd, const Selection& sel) {
  std::vector<Influence> all;
  for (std::size_t ch = 0; ch < pd.size(); ++ch) all.push_back({ch, pd[ch]});
  std::stable_sort(all.begin(), all.end(),
                   [](const Influence& a, const Influence& b) { return a.pd > b.pd; });
  if (sel.threshold) {
    std::erase_if(all, [&](const Influence& i) { return !(i.pd > *sel.threshold); });
  }
  if (sel.top_k && all.size() > *sel.top_k) all.resize(*sel.top_k);
  return all;
}

std::vector<Influence> influential_neurons(zoo::Model& model, const Tensor& image,
                                           const CorrelationMatrix& c, const Selection& sel,
                                           const PdOptions& opt) {
  const Tensor f = model.features(as_batch(image));
  const Tensor phi = f.reshaped(model.spec().feature_shape);
  return select_influential(prediction_differences(model, phi, c, opt), sel);
}

std::size_t grid_extent(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (patch == 0 || patch > extent) throw ConfigError("patch must be in [1, image extent]");
  if (stride == 0) throw ConfigError("stride must be >= 1");
  return (extent - patch + stride - 1) / stride + 1;
}

DiscrepancyMap discrepancy_map(zoo::Model& model, const Tensor& image, MapTarget target,
                               std::size_t index, std::size_t patch, std::size_t stride,
                               std::span<const double> fill) {
  if (image.rank() != 3) throw ShapeError("discrepancy_map expects a (3, H, W) image");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (fill.size() != ch) throw ShapeError("occlusion fill needs one value per channel");
  DiscrepancyMap m;
  m.patch = patch;
  m.stride = stride;
  m.rows = grid_extent(h, patch, stride);
  m.cols = grid_extent(w, patch, stride);

  std::vector<Tensor> batch{image};
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      Tensor occ = image;
      const std::size_t y0 = std::min(r * stride, h - patch);
      const std::size_t x0 = std::min(c * stride, w - patch);
      for (std::size_t k = 0; k < ch; ++k) {
        for (std::size_t y = y0; y < y0 + patch; ++y) {
          std::fill_n(occ.raw() + (k * h + y) * w + x0, patch, fill[k]);
        }
      }
      batch.push_back(std::move(occ));
    }
  }
  const Tensor stacked = core::stack(batch);
  std::vector<double> value(batch.size());
  if (target == MapTarget::ClassProbability) {
    if (index >= model.spec().classes) throw ConfigError("class index out of range");
    const Tensor p = model.predict(stacked);
    for (std::size_t i = 0; i < batch.size(); ++i) value[i] = p[i * model.spec().classes + index];
  } else {
    if (index >= model.spec().feature_channels()) throw ConfigError("channel index out of range");
    const auto a = analysis::channel_activations(model, stacked, analysis::Reduction::Max);
    for (std::size_t i = 0; i < batch.size(); ++i) value[i] = a(i, index);
  }
  m.drop.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.drop.size(); ++i) m.drop[i] = value[0] - value[i + 1];
  return m;
}

std::string DiscrepancyMap::to_pgm() const {
  const auto [lo, hi] = std::minmax_element(drop.begin(), drop.end());
  const double range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (double v : drop) {
    const double t = range > 0.0 ? (v - *lo) / range : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  return out;
}

ConsistencyResult influence_consistency(std::span<const Influence> selected,
                                        std::span<const analysis::NeuronProfile> profiles,
                                        ClassId predicted, const CorrelationMatrix& c,
                                        double tau_sim) {
  if (selected.empty()) throw ConfigError("consistency needs at least one selected neuron");
  auto profile_of = [&](std::size_t ch) -> const analysis::NeuronProfile& {
    for (const auto& p : profiles) {
      if (p.channel == ch) return p;
    }
    throw ConfigError("no profile for channel " + std::to_string(ch));
  };
  const auto target = taxonomy::CategoricalDistribution::one_hot(c.classes, predicted);
  ConsistencyResult r;
  const std::size_t n = selected.size();
  r.pairwise.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pi = profile_of(selected[i].channel).p;
    r.label_similarity.push_back(taxonomy::cosine_sim_C(pi, target, c));
    for (std::size_t j = 0; j < n; ++j) {
      r.pairwise[i * n + j] = taxonomy::cosine_sim_C(pi, profile_of(selected[j].channel).p, c);
    }
  }
  r.min_similarity = *std::min_element(r.label_similarity.begin(), r.label_similarity.end());
  r.inconsistent = r.min_similarity < tau_sim;
  return r;
}

TraceReport trace(zoo::Model& model, const Tensor& image,
                  std::span<const analysis::NeuronProfile> profiles, const CorrelationMatrix& c,
                  std::span<const double> fill, const TraceOptions& opt, std::string input_ref) {
  TraceReport t;
  t.input = std::move(input_ref);
  t.tau_sim = opt.tau_sim;
  t.psd_jitter = c.jitter;
  const Tensor batch = as_batch(image);
  const Tensor probs = model.predict(batch);
  t.predicted = zoo::argmax_rows(probs)[0];
  t.probability = probs[t.predicted];
  const Tensor phi = model.features(batch).reshaped(model.spec().feature_shape);
  t.pd = prediction_differences(model, phi, c, opt.pd);
  t.selected = select_influential(t.pd, opt.selection);
  if (opt.with_maps) {
    for (const auto& s : t.selected) {
      t.maps.push_back(discrepancy_map(model, image, MapTarget::ChannelActivation, s.channel,
                                       opt.patch, opt.stride, fill));
    }
  }
  if (!t.selected.empty() && !profiles.empty()) {
    t.consistency = influence_consistency(t.selected, profiles, t.predicted, c, opt.tau_sim);
  }
  return t;
}

nlohmann::json TraceReport::to_json() const {
  nlohmann::json sel = nlohmann::json::array();
  for (std::size_t i = 0; i < selected.size(); ++i) {
    nlohmann::json s{{"channel", selected[i].channel}, {"pd", selected[i].pd}};
    if (i < maps.size()) {
      s["map"] = {{"rows", maps[i].rows},
                  {"cols", maps[i].cols},
                  {"patch", maps[i].patch},
                  {"stride", maps[i].stride},
                  {"drop", maps[i].drop}};
    }
    if (i < consistency.label_similarity.size()) {
      s["label_similarity"] = consistency.label_similarity[i];
    }
    sel.push_back(s);
  }
  return {{"input", input},
          {"predicted", predicted},
          {"probability", probability},
          {"pd", pd},
          {"selected", sel},
          {"inconsistent", consistency.inconsistent},
          {"min_label_similarity", consistency.min_similarity},
          {"pairwise_similarity", consistency.pairwise},
          {"tau_sim", tau_sim},
          {"psd_jitter", psd_jitter}};
}

}  // namespace advi::tracing
