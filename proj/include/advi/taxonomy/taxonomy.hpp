#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace advi::taxonomy {

using ClassId = std::size_t;

// Nested description of a class tree. Leaves carry a class id; internal
// nodes carry children.
struct TaxonomyNode {
  std::string name;
  std::optional<ClassId> class_id;
  std::vector<TaxonomyNode> children;
};

// Rooted tree whose leaves are the classes 0..K-1.
class ClassTaxonomy {
 public:
  // Validates: every class id in 0..K-1 at exactly one leaf, leaves have no
  // children, internal nodes have no class id.
  explicit ClassTaxonomy(TaxonomyNode root);

  // Complete binary tree of the given depth; leaf k has class id k, where the
  // bits of k (most significant first) are the left/right turns from the root.
  static ClassTaxonomy balanced_binary(std::size_t depth,
                                       const std::vector<std::string>& level_names = {});

  std::size_t class_count() const { return leaf_of_class_.size(); }
  // Longest root-to-leaf edge count.
  std::size_t depth() const;
  // Number of edges on the unique path between two leaves.
  std::size_t tree_distance(ClassId a, ClassId b) const;
  const std::string& class_name(ClassId id) const;
  const TaxonomyNode& root() const { return root_; }

  nlohmann::json to_json() const;
  static ClassTaxonomy from_json(const nlohmann::json& j);

  friend bool operator==(const ClassTaxonomy& a, const ClassTaxonomy& b) {
    return a.to_json() == b.to_json();
  }

 private:
  void index(const TaxonomyNode& n, std::size_t parent, std::size_t depth);

  TaxonomyNode root_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> depth_;
  std::vector<std::string> names_;
  std::vector<std::size_t> leaf_of_class_;
};

// Symmetric K x K class-correlation kernel c_ij = exp(-d_ij^2 / (2 sigma^2)),
// made positive semidefinite if needed. `jitter` is the diagonal shift that
// was applied before renormalising the diagonal back to 1 (0 when the raw
// kernel was already PSD).
struct CorrelationMatrix {
  std::size_t classes = 0;
  std::vector<double> values;  // row-major
  double sigma = 1.0;
  double jitter = 0.0;

  double operator()(std::size_t i, std::size_t j) const { return values[i * classes + j]; }
};

CorrelationMatrix build_correlation(const ClassTaxonomy& tax, double sigma = 1.0);
// Same construction from an explicit integer distance matrix (row-major K x K).
CorrelationMatrix correlation_from_distances(std::span<const std::size_t> distances,
                                             std::size_t classes, double sigma);
CorrelationMatrix identity_correlation(std::size_t classes);

double min_eigenvalue(std::span<const double> symmetric, std::size_t n);
// If lambda_min < 0: C <- (C + (|lambda_min| + 1e-9) I) / (1 + |lambda_min| + 1e-9).
// Returns the jitter applied.
double repair_psd(std::vector<double>& symmetric, std::size_t n);

// Nonnegative length-K vector with unit mass.
class CategoricalDistribution {
 public:
  // Normalises nonnegative weights; zero total mass is rejected.
  static CategoricalDistribution from_weights(std::vector<double> weights);
  static CategoricalDistribution from_labels(std::span<const ClassId> labels,
                                             std::size_t classes);
  static CategoricalDistribution one_hot(std::size_t classes, ClassId k);
  static CategoricalDistribution uniform(std::size_t classes);

  std::span<const double> probs() const { return p_; }
  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t k) const { return p_[k]; }
  // Shannon entropy in nats.
  double entropy() const;

 private:
  explicit CategoricalDistribution(std::vector<double> p) : p_(std::move(p)) {}
  std::vector<double> p_;
};

// u^T C v
double c_inner(std::span<const double> u, std::span<const double> v,
               const CorrelationMatrix& c);
// v^T C v
double c_quadratic(std::span<const double> v, const CorrelationMatrix& c);
// Level-and-consistency score p^T C p of a neuron's class distribution.
double level_consistency(const CategoricalDistribution& p, const CorrelationMatrix& c);
// p^T C q / (sqrt(p^T C p) sqrt(q^T C q))
double cosine_sim_C(const CategoricalDistribution& p, const CategoricalDistribution& q,
                    const CorrelationMatrix& c);

}  // namespace advi::taxonomy
