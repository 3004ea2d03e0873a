#include "advi/taxonomy/taxonomy.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

#include "advi/error.hpp"

namespace advi::taxonomy {

namespace {

constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();

void collect_ids(const TaxonomyNode& n, std::vector<ClassId>& ids) {
  if (n.children.empty()) {
    if (!n.class_id) throw ConfigError("taxonomy leaf '" + n.name + "' has no class id");
    ids.push_back(*n.class_id);
    return;
  }
  if (n.class_id) {
    throw ConfigError("internal taxonomy node '" + n.name + "' carries a class id");
  }
  for (const auto& c : n.children) collect_ids(c, ids);
}

}  // namespace

ClassTaxonomy::ClassTaxonomy(TaxonomyNode root) : root_(std::move(root)) {
  std::vector<ClassId> ids;
  collect_ids(root_, ids);
  std::vector<ClassId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != i) {
      throw ConfigError("taxonomy class ids must be exactly 0..K-1, each at one leaf");
    }
  }
  leaf_of_class_.assign(ids.size(), 0);
  index(root_, kNoParent, 0);
}

void ClassTaxonomy::index(const TaxonomyNode& n, std::size_t parent, std::size_t depth) {
  const std::size_t me = names_.size();
  names_.push_back(n.name);
  parent_.push_back(parent);
  depth_.push_back(depth);
  if (n.class_id) leaf_of_class_[*n.class_id] = me;
  for (const auto& c : n.children) index(c, me, depth + 1);
}

ClassTaxonomy ClassTaxonomy::balanced_binary(std::size_t depth,
                                             const std::vector<std::string>& level_names) {
  if (depth == 0 || depth > 20) throw ConfigError("balanced tree depth must be in 1..20");
  auto build = [&](auto&& self, std::size_t level, std::size_t prefix) -> TaxonomyNode {
    TaxonomyNode n;
    if (level == depth) {
      n.name = "class" + std::to_string(prefix);
      n.class_id = prefix;
      return n;
    }
    n.name = level == 0 ? "root"
                        : (level - 1 < level_names.size() ? level_names[level - 1] : "node") +
                              "_" + std::to_string(prefix);
    n.children.push_back(self(self, level + 1, prefix << 1));
    n.children.push_back(self(self, level + 1, (prefix << 1) | 1));
    return n;
  };
  return ClassTaxonomy(build(build, 0, 0));
}

std::size_t ClassTaxonomy::depth() const {
  return *std::max_element(depth_.begin(), depth_.end());
}

std::size_t ClassTaxonomy::tree_distance(ClassId a, ClassId b) const {
  if (a >= class_count() || b >= class_count()) {
    throw ConfigError("unknown class id in tree_distance");
  }
  std::size_t x = leaf_of_class_[a], y = leaf_of_class_[b];
  std::size_t d = 0;
  while (x != y) {
    if (depth_[x] >= depth_[y]) {
      x = parent_[x];
    } else {
      y = parent_[y];
    }
    ++d;
  }
  return d;
}

const std::string& ClassTaxonomy::class_name(ClassId id) const {
  if (id >= class_count()) throw ConfigError("unknown class id");
  return names_[leaf_of_class_[id]];
}

namespace {

nlohmann::json node_to_json(const TaxonomyNode& n) {
  nlohmann::json j;
  j["name"] = n.name;
  if (n.class_id) {
    j["class_id"] = *n.class_id;
  } else {
    j["children"] = nlohmann::json::array();
    for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
  }
  return j;
}

TaxonomyNode node_from_json(const nlohmann::json& j) {
  TaxonomyNode n;
  n.name = j.at("name").get<std::string>();
  if (j.contains("class_id")) n.class_id = j.at("class_id").get<ClassId>();
  if (j.contains("children")) {
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
  }
  return n;
}

}  // namespace

nlohmann::json ClassTaxonomy::to_json() const { return node_to_json(root_); }

ClassTaxonomy ClassTaxonomy::from_json(const nlohmann::json& j) {
  try {
    return ClassTaxonomy(node_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed taxonomy: ") + e.what());
  }
}

double min_eigenvalue(std::span<const double> symmetric, std::size_t n) {
  if (symmetric.size() != n * n) throw ShapeError("min_eigenvalue: not an n x n matrix");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      symmetric.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

double repair_psd(std::vector<double>& symmetric, std::size_t n) {
  const double lmin = min_eigenvalue(symmetric, n);
  if (lmin >= 0.0) return 0.0;
  const double jitter = -lmin + 1e-9;
  for (std::size_t i = 0; i < n; ++i) symmetric[i * n + i] += jitter;
  for (double& v : symmetric) v /= 1.0 + jitter;
  for (std::size_t i = 0; i < n; ++i) symmetric[i * n + i] = 1.0;
  return jitter;
}

CorrelationMatrix correlation_from_distances(std::span<const std::size_t> distances,
                                             std::size_t classes, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
  if (distances.size() != classes * classes) throw ShapeError("distance matrix must be K x K");
  CorrelationMatrix c;
  c.classes = classes;
  c.sigma = sigma;
  c.values.resize(classes * classes);
  for (std::size_t k = 0; k < distances.size(); ++k) {
    const double d = static_cast<double>(distances[k]);
    c.values[k] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  c.jitter = repair_psd(c.values, classes);
  return c;
}

CorrelationMatrix build_correlation(const ClassTaxonomy& tax, double sigma) {
  const std::size_t k = tax.class_count();
  std::vector<std::size_t> d(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) d[i * k + j] = tax.tree_distance(i, j);
  }
  return correlation_from_distances(d, k, sigma);
}

CorrelationMatrix identity_correlation(std::size_t classes) {
  CorrelationMatrix c;
  c.classes = classes;
  c.values.assign(classes * classes, 0.0);
  for (std::size_t i = 0; i < classes; ++i) c.values[i * classes + i] = 1.0;
  return c;
}

CategoricalDistribution CategoricalDistribution::from_weights(std::vector<double> w) {
  if (w.empty()) throw ConfigError("categorical distribution needs at least one class");
  double mass = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("categorical weights must be finite and nonnegative");
    }
    mass += v;
  }
  if (mass <= 0.0) throw ConfigError("categorical distribution with zero total mass");
  for (double& v : w) v /= mass;
  return CategoricalDistribution(std::move(w));
}

CategoricalDistribution CategoricalDistribution::from_labels(std::span<const ClassId> labels,
                                                             std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (ClassId y : labels) {
    if (y >= classes) throw ConfigError("label out of range");
    counts[y] += 1.0;
  }
  return from_weights(std::move(counts));
}

CategoricalDistribution CategoricalDistribution::one_hot(std::size_t classes, ClassId k) {
  if (k >= classes) throw ConfigError("one_hot index out of range");
  std::vector<double> p(classes, 0.0);
  p[k] = 1.0;
  return CategoricalDistribution(std::move(p));
}

CategoricalDistribution CategoricalDistribution::uniform(std::size_t classes) {
  return from_weights(std::vector<double>(classes, 1.0));
}

double CategoricalDistribution::entropy() const {
  double h = 0.0;
  for (double v : p_) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double c_inner(std::span<const double> u, std::span<const double> v,
               const CorrelationMatrix& c) {
  if (u.size() != c.classes || v.size() != c.classes) {
    throw ShapeError("vector length does not match the correlation matrix");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < c.classes; ++i) {
    if (u[i] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < c.classes; ++j) row += c(i, j) * v[j];
    s += u[i] * row;
  }
  return s;
}

double c_quadratic(std::span<const double> v, const CorrelationMatrix& c) {
  return c_inner(v, v, c);
}

double level_consistency(const CategoricalDistribution& p, const CorrelationMatrix& c) {
  return c_quadratic(p.probs(), c);
}

double cosine_sim_C(const CategoricalDistribution& p, const CategoricalDistribution& q,
                    const CorrelationMatrix& c) {
  const double pq = c_inner(p.probs(), q.probs(), c);
  const double pp = c_quadratic(p.probs(), c);
  const double qq = c_quadratic(q.probs(), c);
  if (pp <= 0.0 || qq <= 0.0) throw NumericError("cosine_sim_C: zero C-norm");
  // sqrt(pp * qq) rather than sqrt(pp) * sqrt(qq): the former is exactly pp
  // when q == p, so CS(p, p) == 1.
  return pq / std::sqrt(pp * qq);
}

}  // namespace advi::taxonomy
