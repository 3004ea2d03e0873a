#include "advi/core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advi/error.hpp"
#include "advi/kernels.hpp"

namespace advi::core {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Conv2d: return "conv2d";
    case Op::Relu: return "relu";
    case Op::MaxPool2: return "max_pool2";
    case Op::Linear: return "linear";
    case Op::Softmax: return "softmax";
    case Op::Flatten: return "flatten";
    case Op::Add: return "add";
    case Op::ScaleShift: return "scale_shift";
    case Op::SliceRows: return "slice_rows";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::SquaredDistance: return "squared_distance";
    case Op::SumAll: return "sum_all";
    case Op::WeightedSum: return "weighted_sum";
  }
  return "unknown";
}

const ComputeGraph::Node& ComputeGraph::node(NodeId id) const {
  if (id >= nodes_.size()) throw ConfigError("node id out of range: " + std::to_string(id));
  return nodes_[id];
}

ComputeGraph::Node& ComputeGraph::node(NodeId id) {
  if (id >= nodes_.size()) throw ConfigError("node id out of range: " + std::to_string(id));
  return nodes_[id];
}

NodeId ComputeGraph::push(Node n) {
  for (NodeId in : n.inputs) {
    if (in >= nodes_.size()) throw ConfigError("node input refers to a later node");
  }
  nodes_.push_back(std::move(n));
  evaluated_ = std::min(evaluated_, nodes_.size() - 1);
  return nodes_.size() - 1;
}

NodeId ComputeGraph::input(std::string name, Shape per_sample) {
  Node n;
  n.op = Op::Input;
  n.name = std::move(name);
  n.declared = std::move(per_sample);
  return push(std::move(n));
}

NodeId ComputeGraph::parameter(std::string name, Tensor init) {
  Node n;
  n.op = Op::Parameter;
  n.name = std::move(name);
  n.value = std::move(init);
  n.declared = n.value.shape();
  return push(std::move(n));
}

NodeId ComputeGraph::conv2d(NodeId x, NodeId weight, NodeId bias,
                            std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("conv2d stride must be positive");
  Node n;
  n.op = Op::Conv2d;
  n.inputs = {x, weight, bias};
  n.stride = stride;
  n.padding = padding;
  return push(std::move(n));
}

NodeId ComputeGraph::relu(NodeId x) {
  Node n;
  n.op = Op::Relu;
  n.inputs = {x};
  return push(std::move(n));
}

NodeId ComputeGraph::max_pool2(NodeId x) {
  Node n;
  n.op = Op::MaxPool2;
  n.inputs = {x};
  return push(std::move(n));
}

NodeId ComputeGraph::linear(NodeId x, NodeId weight, NodeId bias) {
  Node n;
  n.op = Op::Linear;
  n.inputs = {x, weight, bias};
  return push(std::move(n));
}

NodeId ComputeGraph::softmax(NodeId x) {
  Node n;
  n.op = Op::Softmax;
  n.inputs = {x};
  return push(std::move(n));
}

NodeId ComputeGraph::flatten(NodeId x) {
  Node n;
  n.op = Op::Flatten;
  n.inputs = {x};
  return push(std::move(n));
}

NodeId ComputeGraph::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Add;
  n.inputs = {a, b};
  return push(std::move(n));
}

NodeId ComputeGraph::scale_shift(NodeId x, double scale, double shift) {
  Node n;
  n.op = Op::ScaleShift;
  n.inputs = {x};
  n.scale = scale;
  n.shift = shift;
  return push(std::move(n));
}

NodeId ComputeGraph::slice_rows(NodeId x, std::size_t begin, std::size_t end) {
  if (begin >= end) throw ConfigError("slice_rows needs begin < end");
  Node n;
  n.op = Op::SliceRows;
  n.inputs = {x};
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

NodeId ComputeGraph::cross_entropy(NodeId logits, NodeId target) {
  Node n;
  n.op = Op::CrossEntropy;
  n.inputs = {logits, target};
  return push(std::move(n));
}

NodeId ComputeGraph::squared_distance(NodeId a, NodeId b) {
  Node n;
  n.op = Op::SquaredDistance;
  n.inputs = {a, b};
  return push(std::move(n));
}

NodeId ComputeGraph::sum_all(NodeId x) {
  Node n;
  n.op = Op::SumAll;
  n.inputs = {x};
  return push(std::move(n));
}

NodeId ComputeGraph::weighted_sum(std::vector<NodeId> scalars,
                                  std::vector<double> coeffs) {
  if (scalars.empty() || scalars.size() != coeffs.size()) {
    throw ConfigError("weighted_sum needs one coefficient per term");
  }
  Node n;
  n.op = Op::WeightedSum;
  n.inputs = std::move(scalars);
  n.coeffs = std::move(coeffs);
  return push(std::move(n));
}

std::optional<NodeId> ComputeGraph::find(std::string_view name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].name.empty() && nodes_[i].name == name) return i;
  }
  return std::nullopt;
}

const Tensor& ComputeGraph::value(NodeId id) const {
  const Node& n = node(id);
  if (n.op != Op::Parameter && id >= evaluated_) {
    throw ConfigError("node " + std::to_string(id) + " has not been evaluated");
  }
  return n.value;
}

std::span<const double> ComputeGraph::grad(NodeId id) const {
  return node(id).value.grad();
}

std::vector<NodeId> ComputeGraph::parameters() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Parameter) out.push_back(i);
  }
  return out;
}

std::size_t ComputeGraph::parameter_count() const {
  std::size_t n = 0;
  for (const Node& nd : nodes_) {
    if (nd.op == Op::Parameter) n += nd.value.size();
  }
  return n;
}

Tensor& ComputeGraph::parameter_value(NodeId id) {
  Node& n = node(id);
  if (n.op != Op::Parameter) throw ConfigError("node is not a parameter");
  return n.value;
}

const Shape& ComputeGraph::declared_shape(NodeId input_id) const {
  return node(input_id).declared;
}

std::vector<double> ComputeGraph::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Node& nd : nodes_) {
    if (nd.op == Op::Parameter) {
      flat.insert(flat.end(), nd.value.data().begin(), nd.value.data().end());
    }
  }
  return flat;
}

void ComputeGraph::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("flat parameter length " + std::to_string(flat.size()) +
                     " != parameter count " + std::to_string(parameter_count()));
  }
  std::size_t off = 0;
  for (Node& nd : nodes_) {
    if (nd.op != Op::Parameter) continue;
    std::copy_n(flat.begin() + off, nd.value.size(), nd.value.data().begin());
    off += nd.value.size();
  }
  evaluated_ = 0;
}

std::vector<std::uint32_t> ComputeGraph::kink_signature() const {
  std::vector<std::uint32_t> sig;
  for (NodeId i = 0; i < evaluated_; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::Relu) {
      for (double v : nodes_[n.inputs[0]].value.data()) {
        sig.push_back(v > 0.0 ? 2u : (v == 0.0 ? 1u : 0u));
      }
    } else if (n.op == Op::MaxPool2) {
      sig.insert(sig.end(), n.argmax.begin(), n.argmax.end());
    }
  }
  return sig;
}

void ComputeGraph::forward(Feed feed, std::optional<NodeId> until) {
  if (nodes_.empty()) throw ConfigError("forward on an empty graph");
  const NodeId last = until.value_or(nodes_.size() - 1);
  if (last >= nodes_.size()) throw ConfigError("forward target out of range");
  for (NodeId i = 0; i <= last; ++i) {
    Node& n = nodes_[i];
    if (n.op != Op::Input) continue;
    auto it = feed.find(n.name);
    if (it == feed.end()) throw ConfigError("missing input '" + n.name + "'");
    const Shape& s = it->second.shape();
    if (s.size() != n.declared.size() + 1 ||
        !std::equal(n.declared.begin(), n.declared.end(), s.begin() + 1)) {
      throw ShapeError("input '" + n.name + "' has shape " + shape_string(s) +
                       ", expected (N, ...) with per-sample " +
                       shape_string(n.declared));
    }
    if (!it->second.all_finite()) {
      throw NumericError("input '" + n.name + "' contains non-finite values");
    }
    n.value = std::move(it->second);
  }
  evaluated_ = 0;
  spliced_.reset();
  for (NodeId i = 0; i <= last; ++i) {
    evaluate(i);
    evaluated_ = i + 1;
  }
}

void ComputeGraph::forward_from(NodeId id, const Tensor& value,
                                std::optional<NodeId> until) {
  const NodeId last = until.value_or(nodes_.size() - 1);
  if (id >= nodes_.size() || last >= nodes_.size() || last < id) {
    throw ConfigError("forward_from range out of bounds");
  }
  for (NodeId i = id + 1; i <= last; ++i) {
    if (nodes_[i].op == Op::Input) {
      throw ConfigError("forward_from range contains an unfed input node");
    }
    for (NodeId in : nodes_[i].inputs) {
      if (in < id && nodes_[in].op != Op::Parameter) {
        throw ConfigError("node " + std::to_string(i) +
                          " depends on a node before the splice point");
      }
    }
  }
  // The batch extent may differ from the last full pass; per-sample extents
  // may not.
  const Shape& prev = nodes_[id].value.shape();
  if (evaluated_ > id && nodes_[id].op != Op::Parameter &&
      (value.rank() != prev.size() || value.rank() == 0 ||
       !std::equal(prev.begin() + 1, prev.end(), value.shape().begin() + 1))) {
    throw ShapeError("spliced value shape " + shape_string(value.shape()) +
                     " does not match node shape " + shape_string(prev));
  }
  if (!value.all_finite()) throw NumericError("spliced value is non-finite");
  nodes_[id].value = value;
  spliced_ = id;
  for (NodeId i = id + 1; i <= last; ++i) evaluate(i);
  evaluated_ = std::max(evaluated_, last + 1);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::size_t rows(const Tensor& t) { return t.dim(0); }
std::size_t row_size(const Tensor& t) { return t.size() / t.dim(0); }

}  // namespace

void ComputeGraph::evaluate(NodeId id) {
  Node& n = nodes_[id];
  const std::string where = std::string(op_name(n.op)) + " node " + std::to_string(id);
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Input:
    case Op::Parameter:
      break;

    case Op::Conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      require(x.rank() == 4, where + ": input must be (N, C, H, W)");
      require(w.rank() == 4 && w.dim(1) == x.dim(1),
              where + ": weight must be (O, C, KH, KW) with matching C");
      require(b.rank() == 1 && b.dim(0) == w.dim(0), where + ": bias must be (O)");
      const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
      const std::size_t p = n.padding, s = n.stride;
      require(H + 2 * p >= KH && W + 2 * p >= KW, where + ": kernel larger than padded input");
      const std::size_t OH = (H + 2 * p - KH) / s + 1, OW = (W + 2 * p - KW) / s + 1;
      n.value = Tensor({N, O, OH, OW});
      double* out = n.value.raw();
      const double* xd = x.raw();
      const double* wd = w.raw();
      for (std::size_t img = 0; img < N; ++img) {
        for (std::size_t o = 0; o < O; ++o) {
          double* plane = out + (img * O + o) * OH * OW;
          std::fill(plane, plane + OH * OW, b[o]);
          for (std::size_t c = 0; c < C; ++c) {
            const double* src = xd + (img * C + c) * H * W;
            for (std::size_t ky = 0; ky < KH; ++ky) {
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const double wv = wd[((o * C + c) * KH + ky) * KW + kx];
                if (s == 1) {
                  // Output columns whose tap lands inside the input row.
                  const std::size_t lo = kx < p ? p - kx : 0;
                  const std::size_t hi = std::min(OW, W + p - kx);
                  if (lo >= hi) continue;
                  for (std::size_t oy = 0; oy < OH; ++oy) {
                    const std::size_t iy = oy + ky;
                    if (iy < p || iy - p >= H) continue;
                    kernels::axpy(wv, src + (iy - p) * W + (lo + kx - p),
                                  plane + oy * OW + lo, hi - lo);
                  }
                } else {
                  for (std::size_t oy = 0; oy < OH; ++oy) {
                    const std::size_t iy = oy * s + ky;
                    if (iy < p || iy - p >= H) continue;
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                      const std::size_t ix = ox * s + kx;
                      if (ix < p || ix - p >= W) continue;
                      plane[oy * OW + ox] += wv * src[(iy - p) * W + (ix - p)];
                    }
                  }
                }
              }
            }
          }
        }
      }
      break;
    }

    case Op::Relu: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    }

    case Op::MaxPool2: {
      const Tensor& x = in(0);
      require(x.rank() == 4 && x.dim(2) >= 2 && x.dim(3) >= 2,
              where + ": input must be (N, C, H>=2, W>=2)");
      const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t OH = H / 2, OW = W / 2;
      n.value = Tensor({N, C, OH, OW});
      n.argmax.assign(n.value.size(), 0);
      std::size_t k = 0;
      for (std::size_t plane = 0; plane < N * C; ++plane) {
        const double* src = x.raw() + plane * H * W;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          for (std::size_t ox = 0; ox < OW; ++ox, ++k) {
            // First maximum in scan order wins ties.
            std::size_t best = (2 * oy) * W + 2 * ox;
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = (2 * oy + dy) * W + 2 * ox + dx;
                if (src[idx] > src[best]) best = idx;
              }
            }
            n.value[k] = src[best];
            n.argmax[k] = static_cast<std::uint32_t>(plane * H * W + best);
          }
        }
      }
      break;
    }

    case Op::Linear: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      require(x.rank() == 2, where + ": input must be (N, In)");
      require(w.rank() == 2 && w.dim(1) == x.dim(1), where + ": weight must be (Out, In)");
      require(b.rank() == 1 && b.dim(0) == w.dim(0), where + ": bias must be (Out)");
      const std::size_t N = x.dim(0), In = x.dim(1), Out = w.dim(0);
      n.value = Tensor({N, Out});
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t o = 0; o < Out; ++o) {
          n.value[r * Out + o] = b[o] + kernels::dot(w.raw() + o * In, x.raw() + r * In, In);
        }
      }
      break;
    }

    case Op::Softmax: {
      const Tensor& x = in(0);
      require(x.rank() == 2, where + ": input must be (N, K)");
      const std::size_t N = x.dim(0), K = x.dim(1);
      n.value = Tensor(x.shape());
      for (std::size_t r = 0; r < N; ++r) {
        const double* z = x.raw() + r * K;
        double* y = n.value.raw() + r * K;
        const double m = *std::max_element(z, z + K);
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) sum += (y[k] = std::exp(z[k] - m));
        for (std::size_t k = 0; k < K; ++k) y[k] /= sum;
      }
      break;
    }

    case Op::Flatten: {
      const Tensor& x = in(0);
      n.value = x.reshaped({rows(x), row_size(x)});
      break;
    }

    case Op::Add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.shape() == b.shape(), where + ": operand shapes differ");
      n.value = a;
      n.value.drop_grad();
      kernels::axpy(1.0, b.raw(), n.value.raw(), b.size());
      break;
    }

    case Op::ScaleShift: {
      const Tensor& x = in(0);
      n.value = Tensor(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = n.scale * x[i] + n.shift;
      break;
    }

    case Op::SliceRows: {
      const Tensor& x = in(0);
      require(n.end <= rows(x), where + ": slice beyond batch");
      n.value = x.slice_rows(n.begin, n.end);
      break;
    }

    case Op::CrossEntropy: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      require(z.rank() == 2 && z.shape() == t.shape(), where + ": logits and target must be (N, K)");
      const std::size_t N = z.dim(0), K = z.dim(1);
      n.cache.assign(z.size(), 0.0);  // log-softmax
      double loss = 0.0;
      for (std::size_t r = 0; r < N; ++r) {
        const double* zr = z.raw() + r * K;
        double* ls = n.cache.data() + r * K;
        const double m = *std::max_element(zr, zr + K);
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) sum += std::exp(zr[k] - m);
        const double lse = m + std::log(sum);
        for (std::size_t k = 0; k < K; ++k) {
          ls[k] = zr[k] - lse;
          loss -= t[r * K + k] * ls[k];
        }
      }
      n.value = Tensor({1}, loss / static_cast<double>(N));
      break;
    }

    case Op::SquaredDistance: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.shape() == b.shape(), where + ": operand shapes differ");
      n.value = Tensor({1}, kernels::squared_distance(a.raw(), b.raw(), a.size()) /
                                static_cast<double>(rows(a)));
      break;
    }

    case Op::SumAll: {
      const Tensor& x = in(0);
      double s = 0.0;
      for (double v : x.data()) s += v;
      n.value = Tensor({1}, s);
      break;
    }

    case Op::WeightedSum: {
      double s = 0.0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& x = in(k);
        require(x.size() == 1, where + ": terms must be scalars");
        s += n.coeffs[k] * x[0];
      }
      n.value = Tensor({1}, s);
      break;
    }
  }

  if (!n.value.all_finite()) {
    throw NumericError("non-finite value produced by " + where);
  }
}

void ComputeGraph::backward(NodeId loss) {
  if (loss >= nodes_.size()) throw ConfigError("loss node out of range");
  if (loss >= evaluated_) throw ConfigError("backward called before forward");
  if (nodes_[loss].value.size() != 1) throw ShapeError("loss node must be scalar");
  for (Node& n : nodes_) n.value.zero_grad();
  nodes_[loss].value.grad()[0] = 1.0;
  // After a splice, nodes before the splice point belong to an older pass;
  // the sweep stops at the spliced node, which still receives its gradient.
  const NodeId stop = spliced_.value_or(0);
  for (NodeId id = loss; id > stop; --id) propagate(id);
  if (!spliced_) propagate(0);
  for (NodeId id = 0; id <= loss; ++id) {
    for (double g : nodes_[id].value.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient at " +
                           std::string(op_name(nodes_[id].op)) + " node " +
                           std::to_string(id));
      }
    }
  }
}

void ComputeGraph::propagate(NodeId id) {
  Node& n = nodes_[id];
  std::span<const double> gy = n.value.grad();
  auto in = [&](std::size_t k) -> Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Input:
    case Op::Parameter:
      break;

    case Op::Conv2d: {
      Tensor& x = in(0);
      Tensor& w = in(1);
      Tensor& b = in(2);
      const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
      const std::size_t OH = n.value.dim(2), OW = n.value.dim(3);
      const std::size_t p = n.padding, s = n.stride;
      double* gx = x.grad().data();
      double* gw = w.grad().data();
      double* gb = b.grad().data();
      const double* xd = x.raw();
      const double* wd = w.raw();
      for (std::size_t img = 0; img < N; ++img) {
        for (std::size_t o = 0; o < O; ++o) {
          const double* gplane = gy.data() + (img * O + o) * OH * OW;
          for (std::size_t k = 0; k < OH * OW; ++k) gb[o] += gplane[k];
          for (std::size_t c = 0; c < C; ++c) {
            const double* src = xd + (img * C + c) * H * W;
            double* gsrc = gx + (img * C + c) * H * W;
            for (std::size_t ky = 0; ky < KH; ++ky) {
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const std::size_t widx = ((o * C + c) * KH + ky) * KW + kx;
                const double wv = wd[widx];
                double acc = 0.0;
                if (s == 1) {
                  const std::size_t lo = kx < p ? p - kx : 0;
                  const std::size_t hi = std::min(OW, W + p - kx);
                  if (lo >= hi) continue;
                  for (std::size_t oy = 0; oy < OH; ++oy) {
                    const std::size_t iy = oy + ky;
                    if (iy < p || iy - p >= H) continue;
                    const std::size_t xoff = (iy - p) * W + (lo + kx - p);
                    acc += kernels::dot(gplane + oy * OW + lo, src + xoff, hi - lo);
                    kernels::axpy(wv, gplane + oy * OW + lo, gsrc + xoff, hi - lo);
                  }
                } else {
                  for (std::size_t oy = 0; oy < OH; ++oy) {
                    const std::size_t iy = oy * s + ky;
                    if (iy < p || iy - p >= H) continue;
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                      const std::size_t ix = ox * s + kx;
                      if (ix < p || ix - p >= W) continue;
                      const std::size_t xoff = (iy - p) * W + (ix - p);
                      acc += gplane[oy * OW + ox] * src[xoff];
                      gsrc[xoff] += wv * gplane[oy * OW + ox];
                    }
                  }
                }
                gw[widx] += acc;
              }
            }
          }
        }
      }
      break;
    }

    case Op::Relu: {
      Tensor& x = in(0);
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[i] > 0.0) gx[i] += gy[i];
      }
      break;
    }

    case Op::MaxPool2: {
      auto gx = in(0).grad();
      for (std::size_t k = 0; k < gy.size(); ++k) gx[n.argmax[k]] += gy[k];
      break;
    }

    case Op::Linear: {
      Tensor& x = in(0);
      Tensor& w = in(1);
      Tensor& b = in(2);
      const std::size_t N = x.dim(0), In = x.dim(1), Out = w.dim(0);
      double* gx = x.grad().data();
      double* gw = w.grad().data();
      double* gb = b.grad().data();
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t o = 0; o < Out; ++o) {
          const double g = gy[r * Out + o];
          if (g == 0.0) continue;
          gb[o] += g;
          kernels::axpy(g, x.raw() + r * In, gw + o * In, In);
          kernels::axpy(g, w.raw() + o * In, gx + r * In, In);
        }
      }
      break;
    }

    case Op::Softmax: {
      auto gx = in(0).grad();
      const std::size_t N = n.value.dim(0), K = n.value.dim(1);
      for (std::size_t r = 0; r < N; ++r) {
        const double* y = n.value.raw() + r * K;
        const double* g = gy.data() + r * K;
        double inner = 0.0;
        for (std::size_t k = 0; k < K; ++k) inner += g[k] * y[k];
        for (std::size_t k = 0; k < K; ++k) gx[r * K + k] += y[k] * (g[k] - inner);
      }
      break;
    }

    case Op::Flatten: {
      auto gx = in(0).grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      break;
    }

    case Op::Add: {
      auto ga = in(0).grad();
      auto gb = in(1).grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i];
        gb[i] += gy[i];
      }
      break;
    }

    case Op::ScaleShift: {
      auto gx = in(0).grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += n.scale * gy[i];
      break;
    }

    case Op::SliceRows: {
      Tensor& x = in(0);
      auto gx = x.grad();
      const std::size_t off = n.begin * row_size(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
      break;
    }

    case Op::CrossEntropy: {
      Tensor& z = in(0);
      Tensor& t = in(1);
      const std::size_t N = z.dim(0), K = z.dim(1);
      const double scale = gy[0] / static_cast<double>(N);
      auto gz = z.grad();
      auto gt = t.grad();
      for (std::size_t r = 0; r < N; ++r) {
        const double* ls = n.cache.data() + r * K;
        double mass = 0.0;
        for (std::size_t k = 0; k < K; ++k) mass += t[r * K + k];
        for (std::size_t k = 0; k < K; ++k) {
          gz[r * K + k] += scale * (std::exp(ls[k]) * mass - t[r * K + k]);
          gt[r * K + k] -= scale * ls[k];
        }
      }
      break;
    }

    case Op::SquaredDistance: {
      Tensor& a = in(0);
      Tensor& b = in(1);
      const double scale = 2.0 * gy[0] / static_cast<double>(rows(a));
      auto ga = a.grad();
      auto gb = b.grad();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = scale * (a[i] - b[i]);
        ga[i] += d;
        gb[i] -= d;
      }
      break;
    }

    case Op::SumAll: {
      auto gx = in(0).grad();
      for (double& g : gx) g += gy[0];
      break;
    }

    case Op::WeightedSum: {
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        in(k).grad()[0] += n.coeffs[k] * gy[0];
      }
      break;
    }
  }
}

}  // namespace advi::core
