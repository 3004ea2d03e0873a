#include <cmath>
#include <map>
#include <sstream>

#include "advi/analysis/analysis.hpp"
#include "advi/error.hpp"
#include "advi/kernels.hpp"

namespace advi::analysis {

namespace {
double dist(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("representation lengths differ");
  return std::sqrt(kernels::squared_distance(a.data(), b.data(), a.size()));
}
}  // namespace

double mean_distance(std::span<const double> point, const std::vector<std::vector<double>>& set) {
  if (set.empty()) throw ConfigError("mean distance to an empty set");
  double s = 0.0;
  for (const auto& v : set) s += dist(point, v);
  return s / static_cast<double>(set.size());
}

double mean_cross_distance(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw ConfigError("mean distance between empty sets");
  double s = 0.0;
  for (const auto& u : a) {
    for (const auto& v : b) s += dist(u, v);
  }
  return s / static_cast<double>(a.size() * b.size());
}

double mean_within_distance(const std::vector<std::vector<double>>& a) {
  if (a.size() < 2) throw ConfigError("within-set distance needs at least 2 members");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) s += dist(a[i], a[j]);
  }
  return s / static_cast<double>(a.size() * (a.size() - 1) / 2);
}

RatioRecord repr_ratios(std::span<const double> phi_adv,
                        const std::vector<std::vector<double>>& label_set,
                        const std::vector<std::vector<double>>& target_set) {
  RatioRecord r;
  r.label_set_size = label_set.size();
  r.target_set_size = target_set.size();
  if (label_set.size() < 2 || target_set.size() < 2) {
    throw ConfigError("ratios need at least 2 representations per class");
  }
  const double within = mean_within_distance(label_set);
  const double between = mean_cross_distance(label_set, target_set);
  if (within == 0.0 || between == 0.0) {
    r.error = "degenerate class set: zero mean distance";
    return r;
  }
  r.r1 = mean_distance(phi_adv, label_set) / within;
  r.r2 = mean_distance(phi_adv, target_set) / between;
  return r;
}

std::vector<std::vector<double>> feature_rows(zoo::Model& model, const core::Tensor& batch) {
  const core::Tensor f = model.features(batch);
  const std::size_t n = f.dim(0), per = f.size() / n;
  std::vector<std::vector<double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i].assign(f.raw() + i * per, f.raw() + (i + 1) * per);
  return rows;
}

RatioSummary ratios_for_set(zoo::Model& model, std::span<const synthdata::LabeledImage> real,
                            const attack::AdversarialSet& adv) {
  const auto kept = adv.successful_indices();
  if (real.empty() || kept.empty()) {
    throw ConfigError("ratios need real images and successful adversarial records");
  }
  const auto rows = feature_rows(model, synthdata::batch_images(real));
  std::map<ClassId, std::vector<std::vector<double>>> by_class;
  for (std::size_t i = 0; i < real.size(); ++i) by_class[real[i].label].push_back(rows[i]);

  std::vector<core::Tensor> imgs;
  for (std::size_t i : kept) imgs.push_back(adv.records[i].image);
  const auto adv_rows = feature_rows(model, core::stack(imgs));

  // Denominators depend only on the class pair.
  std::map<ClassId, double> within;
  std::map<std::pair<ClassId, ClassId>, double> between;
  RatioSummary s;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& rec = adv.records[kept[i]];
    RatioRecord r;
    r.record = kept[i];
    r.label = rec.label;
    r.target = rec.target;
    const auto& ly = by_class[rec.label];
    const auto& lt = by_class[rec.target];
    r.label_set_size = ly.size();
    r.target_set_size = lt.size();
    if (ly.size() < 2 || lt.size() < 2) {
      r.error = "class set with fewer than 2 representations";
    } else {
      if (!within.count(rec.label)) within[rec.label] = mean_within_distance(ly);
      const auto key = std::make_pair(rec.label, rec.target);
      if (!between.count(key)) between[key] = mean_cross_distance(ly, lt);
      if (within[rec.label] == 0.0 || between[key] == 0.0) {
        r.error = "degenerate class set: zero mean distance";
      } else {
        r.r1 = mean_distance(adv_rows[i], ly) / within[rec.label];
        r.r2 = mean_distance(adv_rows[i], lt) / between[key];
      }
    }
    if (r.error.empty()) {
      s1 += r.r1;
      s2 += r.r2;
    } else {
      ++s.errors;
    }
    s.records.push_back(std::move(r));
  }
  const std::size_t ok = s.records.size() - s.errors;
  if (ok > 0) {
    s.mean_r1 = s1 / static_cast<double>(ok);
    s.mean_r2 = s2 / static_cast<double>(ok);
  }
  return s;
}

nlohmann::json RatioSummary::to_json() const {
  return {{"records", records.size()},
          {"errors", errors},
          {"mean_r1", mean_r1},
          {"mean_r2", mean_r2}};
}

std::string RatioSummary::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "record,label,target,r1,r2,label_set_size,target_set_size,error\n";
  for (const auto& r : records) {
    os << r.record << ',' << r.label << ',' << r.target << ',' << r.r1 << ',' << r.r2 << ','
       << r.label_set_size << ',' << r.target_set_size << ',' << r.error << '\n';
  }
  return os.str();
}

std::string RatioSummary::histogram_csv(double width) const {
  if (!(width > 0.0)) throw ConfigError("histogram width must be > 0");
  std::map<long, std::pair<std::size_t, std::size_t>> h;
  for (const auto& r : records) {
    if (!r.error.empty()) continue;
    ++h[static_cast<long>(std::floor(r.r1 / width))].first;
    ++h[static_cast<long>(std::floor(r.r2 / width))].second;
  }
  std::ostringstream os;
  os.precision(17);
  os << "lo,hi,r1_count,r2_count\n";
  for (const auto& [b, c] : h) {
    os << static_cast<double>(b) * width << ',' << static_cast<double>(b + 1) * width << ','
       << c.first << ',' << c.second << '\n';
  }
  return os.str();
}

}  // namespace advi::analysis
