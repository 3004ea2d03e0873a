#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advi/core/tensor.hpp"

namespace advi::core {

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  Input,
  Parameter,
  Conv2d,
  Relu,
  MaxPool2,
  Linear,
  Softmax,
  Flatten,
  Add,
  ScaleShift,
  SliceRows,
  CrossEntropy,
  SquaredDistance,
  SumAll,
  WeightedSum,
};

std::string_view op_name(Op op);

// Named input tensors for one evaluation. Input nodes declare a per-sample
// shape; the leading (batch) axis of the fed tensor is free.
using Feed = std::map<std::string, Tensor, std::less<>>;

// A declared, statically ordered computation. Nodes are appended by the
// builder methods; a node's inputs always have smaller ids, so construction
// order is a topological order and backward simply walks it in reverse.
//
// Not thread-safe: forward/backward mutate cached values. Copy the graph to
// evaluate it concurrently.
class ComputeGraph {
 public:
  // Builders.
  NodeId input(std::string name, Shape per_sample);
  NodeId parameter(std::string name, Tensor init);
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t stride = 1,
                std::size_t padding = 0);
  NodeId relu(NodeId x);
  NodeId max_pool2(NodeId x);
  NodeId linear(NodeId x, NodeId weight, NodeId bias);
  NodeId softmax(NodeId x);
  NodeId flatten(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale_shift(NodeId x, double scale, double shift);
  NodeId slice_rows(NodeId x, std::size_t begin, std::size_t end);
  // Mean over rows of -sum_k target[k] * log softmax(logits)[k].
  NodeId cross_entropy(NodeId logits, NodeId target);
  // Mean over rows of the squared Euclidean distance between rows of a and b.
  NodeId squared_distance(NodeId a, NodeId b);
  NodeId sum_all(NodeId x);
  NodeId weighted_sum(std::vector<NodeId> scalars, std::vector<double> coeffs);

  // Evaluates nodes [0, until] (default: all). Every input node in that range
  // must be fed.
  void forward(Feed feed, std::optional<NodeId> until = std::nullopt);
  // Replaces the value of `node` and re-evaluates (node, until]. Every node
  // after `node` may only depend on nodes >= `node` or on parameters. Nodes
  // before `node` are not touched, and a following backward stops at `node`.
  void forward_from(NodeId node, const Tensor& value,
                    std::optional<NodeId> until = std::nullopt);
  // Reverse sweep from a scalar node of the last forward pass. Afterwards
  // every node <= loss holds d(loss)/d(node); unreachable nodes hold zeros.
  void backward(NodeId loss);

  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return node(id).op; }
  const std::string& name(NodeId id) const { return node(id).name; }
  std::span<const NodeId> inputs(NodeId id) const { return node(id).inputs; }
  std::optional<NodeId> find(std::string_view name) const;

  const Tensor& value(NodeId id) const;
  std::span<const double> grad(NodeId id) const;

  std::vector<NodeId> parameters() const;
  std::size_t parameter_count() const;
  Tensor& parameter_value(NodeId id);
  const Shape& declared_shape(NodeId input_id) const;

  // Concatenation of every parameter in node order.
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  // Which side of every ReLU kink and which max-pool winner the last forward
  // pass took. Finite-difference checks are only valid while this is stable.
  std::vector<std::uint32_t> kink_signature() const;

 private:
  struct Node {
    Op op = Op::Input;
    std::string name;
    std::vector<NodeId> inputs;
    Tensor value;
    Shape declared;
    std::size_t stride = 1;
    std::size_t padding = 0;
    double scale = 1.0;
    double shift = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<double> coeffs;
    std::vector<std::uint32_t> argmax;
    std::vector<double> cache;
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);
  void evaluate(NodeId id);
  void propagate(NodeId id);

  std::vector<Node> nodes_;
  std::size_t evaluated_ = 0;
  std::optional<NodeId> spliced_;
};

}  // namespace advi::core
