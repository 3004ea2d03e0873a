#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "advi/analysis/analysis.hpp"
#include "advi/error.hpp"
#include "advi/io/binary.hpp"

namespace advi::analysis {

double DetectorModel::log_density(std::span<const double> phi, ClassId k) const {
  if (k >= classes) throw ConfigError("detector class out of range");
  if (phi.size() != dims) throw ShapeError("detector feature length mismatch");
  const auto& mu = mean[k];
  const auto& var = variance[k];
  double s = 0.0;
  for (std::size_t d = 0; d < dims; ++d) {
    const double diff = phi[d] - mu[d];
    s += std::log(2.0 * std::numbers::pi * var[d]) + diff * diff / var[d];
  }
  return -0.5 * s;
}

DetectorModel fit_detector(std::span<const std::vector<double>> features,
                           std::span<const ClassId> labels, std::size_t classes, double floor) {
  if (!(floor > 0.0)) throw ConfigError("variance floor must be > 0");
  if (features.size() != labels.size()) throw ShapeError("feature/label count mismatch");
  if (features.empty()) throw ConfigError("detector needs training features");
  DetectorModel det;
  det.classes = classes;
  det.dims = features[0].size();
  det.floor = floor;
  det.mean.assign(classes, std::vector<double>(det.dims, 0.0));
  det.variance.assign(classes, std::vector<double>(det.dims, 0.0));
  det.counts.assign(classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != det.dims) throw ShapeError("feature lengths differ");
    if (labels[i] >= classes) throw ConfigError("label out of range");
    ++det.counts[labels[i]];
    for (std::size_t d = 0; d < det.dims; ++d) det.mean[labels[i]][d] += features[i][d];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (det.counts[k] < 2) {
      throw ConfigError("class " + std::to_string(k) + " has fewer than 2 training images");
    }
    for (double& m : det.mean[k]) m /= static_cast<double>(det.counts[k]);
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& mu = det.mean[labels[i]];
    auto& var = det.variance[labels[i]];
    for (std::size_t d = 0; d < det.dims; ++d) {
      const double diff = features[i][d] - mu[d];
      var[d] += diff * diff;
    }
  }
  for (std::size_t k = 0; k < classes; ++k) {
    for (double& v : det.variance[k]) {
      v = std::max(v / static_cast<double>(det.counts[k]), floor);
    }
  }
  return det;
}

DetectorModel fit_detector(zoo::Model& model, std::span<const synthdata::LabeledImage> train,
                           double floor) {
  const auto rows = feature_rows(model, synthdata::batch_images(train));
  std::vector<ClassId> labels;
  for (const auto& s : train) labels.push_back(s.label);
  return fit_detector(rows, labels, model.spec().classes, floor);
}

std::vector<double> detector_scores(const DetectorModel& det, zoo::Model& model,
                                    const core::Tensor& batch) {
  const auto rows = feature_rows(model, batch);
  const auto pred = zoo::argmax_rows(model.predict(batch));
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = det.log_density(rows[i], pred[i]);
  return out;
}

namespace {
constexpr std::string_view kMagic = "ADVIDETR";
}

std::string save_detector(const DetectorModel& det, const std::filesystem::path& path) {
  nlohmann::json h{{"classes", det.classes},
                   {"dims", det.dims},
                   {"floor", det.floor},
                   {"counts", det.counts},
                   {"covariance", "diagonal"}};
  std::vector<double> flat;
  for (std::size_t k = 0; k < det.classes; ++k) {
    flat.insert(flat.end(), det.mean[k].begin(), det.mean[k].end());
    flat.insert(flat.end(), det.variance[k].begin(), det.variance[k].end());
  }
  const std::string bytes =
      io::encode_framed(kMagic, kDetectorVersion, h.dump(), io::encode_f64(flat));
  io::write_file(path, bytes);
  return io::decode_framed(bytes, kMagic, kDetectorVersion).hash;
}

DetectorModel load_detector(const std::filesystem::path& path) {
  const auto f = io::decode_framed(io::read_file(path), kMagic, kDetectorVersion);
  DetectorModel det;
  try {
    const auto h = nlohmann::json::parse(f.header);
    det.classes = h.at("classes").get<std::size_t>();
    det.dims = h.at("dims").get<std::size_t>();
    det.floor = h.at("floor").get<double>();
    det.counts = h.at("counts").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed detector header: ") + e.what());
  }
  const auto flat = io::decode_f64(f.payload);
  if (flat.size() != 2 * det.classes * det.dims || det.counts.size() != det.classes) {
    throw FormatError("detector payload length does not match its header");
  }
  for (std::size_t k = 0; k < det.classes; ++k) {
    const auto* p = flat.data() + 2 * k * det.dims;
    det.mean.emplace_back(p, p + det.dims);
    det.variance.emplace_back(p + det.dims, p + 2 * det.dims);
  }
  return det;
}

RocResult roc_auc(std::span<const double> clean, std::span<const double> adversarial) {
  if (clean.empty() || adversarial.empty()) throw ConfigError("ROC needs two nonempty score sets");
  std::vector<double> c(clean.begin(), clean.end()), a(adversarial.begin(), adversarial.end());
  std::sort(c.begin(), c.end());
  std::sort(a.begin(), a.end());
  RocResult r;
  // Rank statistic via merge: for each adversarial score count clean scores
  // strictly above it, and ties at half weight.
  double wins = 0.0;
  std::size_t lo = 0, hi = 0;
  for (double s : a) {
    while (lo < c.size() && c[lo] < s) ++lo;
    while (hi < c.size() && c[hi] <= s) ++hi;
    wins += static_cast<double>(c.size() - hi) + 0.5 * static_cast<double>(hi - lo);
  }
  r.auc = wins / (static_cast<double>(c.size()) * static_cast<double>(a.size()));

  // Flag when score < threshold; one point per distinct score plus +inf.
  std::vector<double> thr(c);
  thr.insert(thr.end(), a.begin(), a.end());
  std::sort(thr.begin(), thr.end());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  thr.push_back(std::numeric_limits<double>::infinity());
  for (double t : thr) {
    const auto na = static_cast<double>(std::lower_bound(a.begin(), a.end(), t) - a.begin());
    const auto nc = static_cast<double>(std::lower_bound(c.begin(), c.end(), t) - c.begin());
    r.curve.push_back({t, na / static_cast<double>(a.size()), nc / static_cast<double>(c.size())});
  }
  return r;
}

std::string RocResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,tpr,fpr\n";
  for (const auto& p : curve) os << p.threshold << ',' << p.tpr << ',' << p.fpr << '\n';
  return os.str();
}

}  // namespace advi::analysis
