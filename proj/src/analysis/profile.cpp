#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "advi/analysis/analysis.hpp"
#include "advi/error.hpp"

namespace advi::analysis {

std::string_view reduction_name(Reduction r) { return r == Reduction::Max ? "max" : "mean"; }

Reduction parse_reduction(std::string_view s) {
  if (s == "max") return Reduction::Max;
  if (s == "mean") return Reduction::Mean;
  throw ConfigError("unknown reduction '" + std::string(s) + "' (expected max or mean)");
}

std::vector<double> ActivationMatrix::column(std::size_t c) const {
  std::vector<double> out(images);
  for (std::size_t i = 0; i < images; ++i) out[i] = values[i * channels + c];
  return out;
}

ActivationMatrix reduce_features(const core::Tensor& features, Reduction r) {
  if (features.rank() != 4) throw ShapeError("features must be (N, C, h, w)");
  ActivationMatrix m;
  m.images = features.dim(0);
  m.channels = features.dim(1);
  const std::size_t plane = features.dim(2) * features.dim(3);
  m.values.resize(m.images * m.channels);
  for (std::size_t i = 0; i < m.images * m.channels; ++i) {
    const double* p = features.raw() + i * plane;
    if (r == Reduction::Max) {
      m.values[i] = *std::max_element(p, p + plane);
    } else {
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      m.values[i] = s / static_cast<double>(plane);
    }
  }
  return m;
}

ActivationMatrix channel_activations(zoo::Model& model, const core::Tensor& batch, Reduction r) {
  return reduce_features(model.features(batch), r);
}

std::size_t top_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
  if (n == 0) throw ConfigError("top selection over an empty set");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> top_activations(std::span<const double> activations, double fraction) {
  const std::size_t k = top_count(activations.size(), fraction);
  std::vector<std::size_t> idx(activations.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return activations[a] > activations[b];
  });
  idx.resize(k);
  return idx;
}

CategoricalDistribution label_distribution(std::span<const ClassId> labels,
                                           std::span<const std::size_t> selected,
                                           std::size_t classes) {
  std::vector<ClassId> picked;
  picked.reserve(selected.size());
  for (std::size_t i : selected) picked.push_back(labels[i]);
  return CategoricalDistribution::from_labels(picked, classes);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<LcBin> bin_by_lc(std::span<const NeuronProfile> neurons, double width) {
  if (!(width > 0.0)) throw ConfigError("bin width must be > 0");
  std::vector<LcBin> bins;
  const auto nbins = static_cast<std::size_t>(std::ceil(1.0 / width));
  for (std::size_t b = 0; b < nbins; ++b) {
    LcBin bin;
    bin.lo = static_cast<double>(b) * width;
    bin.hi = std::min(1.0, static_cast<double>(b + 1) * width);
    for (const auto& n : neurons) {
      auto idx = static_cast<std::size_t>(std::floor(n.lc / width));
      idx = std::min(idx, nbins - 1);
      if (idx != b) continue;
      ++bin.count;
      bin.mean_cs1 += n.cs1;
      bin.mean_cs2 += n.cs2;
    }
    if (bin.count == 0) continue;
    bin.mean_cs1 /= static_cast<double>(bin.count);
    bin.mean_cs2 /= static_cast<double>(bin.count);
    bins.push_back(bin);
  }
  return bins;
}

ProfileSummary profile_from_activations(const ActivationMatrix& real,
                                        std::span<const ClassId> real_labels,
                                        const ActivationMatrix& adv,
                                        std::span<const ClassId> adv_labels,
                                        std::span<const ClassId> adv_targets, double fraction,
                                        const CorrelationMatrix& c, double bin_width,
                                        const std::string& model_name) {
  if (real.channels != adv.channels) throw ShapeError("real and adversarial channels differ");
  if (real_labels.size() != real.images || adv_labels.size() != adv.images ||
      adv_targets.size() != adv.images) {
    throw ShapeError("label count does not match the activation rows");
  }
  ProfileSummary s;
  s.fraction = fraction;
  s.bin_width = bin_width;
  s.sigma = c.sigma;
  s.jitter = c.jitter;
  for (std::size_t ch = 0; ch < real.channels; ++ch) {
    NeuronProfile n;
    n.model = model_name;
    n.channel = ch;
    n.real_top = top_activations(real.column(ch), fraction);
    n.adv_top = top_activations(adv.column(ch), fraction);
    n.p = label_distribution(real_labels, n.real_top, c.classes);
    // One selected set, two labellings.
    n.q = label_distribution(adv_labels, n.adv_top, c.classes);
    n.q_tilde = label_distribution(adv_targets, n.adv_top, c.classes);
    n.lc = taxonomy::level_consistency(n.p, c);
    n.cs1 = taxonomy::cosine_sim_C(n.p, n.q, c);
    n.cs2 = taxonomy::cosine_sim_C(n.p, n.q_tilde, c);
    n.entropy = n.p.entropy();
    s.neurons.push_back(std::move(n));
  }
  std::vector<double> lc, cs1, cs2;
  for (const auto& n : s.neurons) {
    lc.push_back(n.lc);
    cs1.push_back(n.cs1);
    cs2.push_back(n.cs2);
  }
  s.corr_lc_cs1 = pearson(lc, cs1);
  s.corr_lc_cs2 = pearson(lc, cs2);
  const double k = static_cast<double>(s.neurons.size());
  s.mean_cs1 = std::accumulate(cs1.begin(), cs1.end(), 0.0) / k;
  s.mean_cs2 = std::accumulate(cs2.begin(), cs2.end(), 0.0) / k;
  s.bins = bin_by_lc(s.neurons, bin_width);
  return s;
}

ProfileSummary profile_neurons(zoo::Model& model, std::span<const synthdata::LabeledImage> real,
                               const attack::AdversarialSet& adv, double fraction,
                               const CorrelationMatrix& c, Reduction r, double bin_width) {
  if (real.empty()) throw ConfigError("profiling needs a nonempty real set");
  const auto kept = adv.successful_indices();
  if (kept.empty()) throw ConfigError("profiling needs at least one successful adversarial record");
  std::vector<ClassId> real_labels, adv_labels, adv_targets;
  for (const auto& s : real) real_labels.push_back(s.label);
  std::vector<core::Tensor> imgs;
  for (std::size_t i : kept) {
    const auto& rec = adv.records[i];
    imgs.push_back(rec.image);
    adv_labels.push_back(rec.label);
    adv_targets.push_back(rec.target);
  }
  const auto ra = channel_activations(model, synthdata::batch_images(real), r);
  const auto aa = channel_activations(model, core::stack(imgs), r);
  auto s = profile_from_activations(ra, real_labels, aa, adv_labels, adv_targets, fraction, c,
                                    bin_width, std::string(zoo::arch_name(model.spec().arch)));
  s.reduction = r;
  for (auto& n : s.neurons) {
    for (auto& i : n.adv_top) i = kept[i];
  }
  return s;
}

namespace {
std::string dist_string(const CategoricalDistribution& d) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t k = 0; k < d.size(); ++k) os << (k ? ";" : "") << d[k];
  return os.str();
}
}  // namespace

nlohmann::json ProfileSummary::to_json() const {
  nlohmann::json bj = nlohmann::json::array();
  for (const auto& b : bins) {
    bj.push_back({{"lc_lo", b.lo}, {"lc_hi", b.hi}, {"count", b.count},
                  {"mean_cs1", b.mean_cs1}, {"mean_cs2", b.mean_cs2}});
  }
  return {{"neurons", neurons.size()},   {"fraction", fraction},
          {"bin_width", bin_width},      {"reduction", reduction_name(reduction)},
          {"sigma", sigma},              {"psd_jitter", jitter},
          {"corr_lc_cs1", corr_lc_cs1},  {"corr_lc_cs2", corr_lc_cs2},
          {"mean_cs1", mean_cs1},        {"mean_cs2", mean_cs2},
          {"bins", bj}};
}

std::string ProfileSummary::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "model,channel,lc,cs1,cs2,entropy_p,real_top,adv_top,p,q,q_tilde\n";
  for (const auto& n : neurons) {
    os << n.model << ',' << n.channel << ',' << n.lc << ',' << n.cs1 << ',' << n.cs2 << ','
       << n.entropy << ',' << n.real_top.size() << ',' << n.adv_top.size() << ','
       << dist_string(n.p) << ',' << dist_string(n.q) << ',' << dist_string(n.q_tilde) << '\n';
  }
  return os.str();
}

std::string ProfileSummary::bins_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "lc_lo,lc_hi,count,mean_cs1,mean_cs2\n";
  for (const auto& b : bins) {
    os << b.lo << ',' << b.hi << ',' << b.count << ',' << b.mean_cs1 << ',' << b.mean_cs2 << '\n';
  }
  return os.str();
}

}  // namespace advi::analysis
