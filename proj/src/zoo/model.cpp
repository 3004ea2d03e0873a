#include "advi/zoo/model.hpp"

#include <algorithm>
#include <cmath>

#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/util/rng.hpp"

namespace advi::zoo {

using core::NodeId;
using core::Shape;
using core::Tensor;

std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::CnnA: return "cnn-a";
    case Arch::CnnB: return "cnn-b";
    case Arch::CnnC: return "cnn-c";
  }
  return "unknown";
}

Arch parse_arch(std::string_view name) {
  for (Arch a : kAllArchs) {
    if (arch_name(a) == name) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(name) +
                    "' (expected cnn-a, cnn-b or cnn-c)");
}

nlohmann::json ModelSpec::to_json() const {
  return {{"arch", arch_name(arch)},        {"classes", classes},
          {"image_size", image_size},       {"layers", layers},
          {"feature_layer", feature_layer}, {"feature_shape", feature_shape}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  try {
    s.arch = parse_arch(j.at("arch").get<std::string>());
    s.classes = j.at("classes").get<std::size_t>();
    s.image_size = j.at("image_size").get<std::size_t>();
    s.layers = j.at("layers").get<std::vector<std::string>>();
    s.feature_layer = j.at("feature_layer").get<std::string>();
    s.feature_shape = j.at("feature_shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
  return s;
}

namespace {

class Builder {
 public:
  Builder(core::ComputeGraph& g, ModelSpec& spec, std::uint64_t seed)
      : g_(g), spec_(spec), rng_(seed) {}

  // 3x3 convolution, zero padding 1, followed by ReLU.
  NodeId conv_relu(NodeId x, const std::string& name, std::size_t cin, std::size_t cout) {
    const double fan_in = static_cast<double>(cin * 9);
    NodeId w = g_.parameter(name + ".w", init({cout, cin, 3, 3}, std::sqrt(6.0 / fan_in)));
    NodeId b = g_.parameter(name + ".b", Tensor({cout}));
    spec_.layers.push_back("conv3x3 " + std::to_string(cin) + "->" + std::to_string(cout) + " pad1");
    spec_.layers.push_back("relu");
    return g_.relu(g_.conv2d(x, w, b, 1, 1));
  }

  NodeId pool(NodeId x) {
    spec_.layers.push_back("maxpool2");
    return g_.max_pool2(x);
  }

  NodeId fc(NodeId x, const std::string& name, std::size_t in, std::size_t out, bool last) {
    const double fan_in = static_cast<double>(in);
    const double bound = last ? std::sqrt(3.0 / fan_in) : std::sqrt(6.0 / fan_in);
    NodeId w = g_.parameter(name + ".w", init({out, in}, bound));
    NodeId b = g_.parameter(name + ".b", Tensor({out}));
    spec_.layers.push_back("fc " + std::to_string(in) + "->" + std::to_string(out));
    return g_.linear(x, w, b);
  }

 private:
  Tensor init(Shape shape, double bound) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng_.uniform(-bound, bound);
    return t;
  }

  core::ComputeGraph& g_;
  ModelSpec& spec_;
  Rng rng_;
};

}  // namespace

Model Model::build(Arch arch, std::size_t classes, std::size_t image_size, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("a model needs at least 2 classes");
  if (image_size < 16 || image_size % 8 != 0) {
    throw ConfigError("model image size must be a multiple of 8 and >= 16");
  }
  Model m;
  m.spec_.arch = arch;
  m.spec_.classes = classes;
  m.spec_.image_size = image_size;
  auto& g = m.graph_;
  Builder b(g, m.spec_, derive_seed(seed, static_cast<std::uint64_t>(arch) + 1));

  m.input_ = g.input("image", {3, image_size, image_size});
  // Pixels arrive in [0, 255].
  NodeId x = g.scale_shift(m.input_, 1.0 / 255.0, -0.5);
  m.spec_.layers.push_back("scale 1/255 shift -0.5");
  std::size_t channels = 0, side = image_size;

  switch (arch) {
    case Arch::CnnA:
      x = b.pool(b.conv_relu(x, "conv1", 3, 16));
      x = b.pool(b.conv_relu(x, "conv2", 16, 32));
      channels = 32;
      side /= 4;
      break;
    case Arch::CnnB:
      x = b.pool(b.conv_relu(x, "conv1", 3, 8));
      x = b.pool(b.conv_relu(x, "conv2", 8, 12));
      x = b.conv_relu(x, "conv3", 12, 16);
      x = b.pool(b.conv_relu(x, "conv4", 16, 24));
      channels = 24;
      side /= 8;
      break;
    case Arch::CnnC: {
      NodeId h1 = b.pool(b.conv_relu(x, "conv1", 3, 12));
      NodeId h2 = b.conv_relu(h1, "conv2", 12, 12);
      x = g.add(h1, h2);
      m.spec_.layers.push_back("add skip(conv2)");
      x = b.pool(b.conv_relu(x, "conv3", 12, 24));
      channels = 24;
      side /= 4;
      break;
    }
  }
  m.feature_ = x;
  m.spec_.feature_layer = "feature";
  m.spec_.feature_shape = {channels, side, side};
  const std::size_t flat = channels * side * side;
  x = g.flatten(x);
  m.spec_.layers.push_back("flatten");
  if (arch == Arch::CnnB) {
    x = g.relu(b.fc(x, "fc1", flat, 32, false));
    m.spec_.layers.push_back("relu");
    x = b.fc(x, "fc2", 32, classes, true);
  } else {
    x = b.fc(x, "fc1", flat, classes, true);
  }
  m.logits_ = x;
  m.probs_ = g.softmax(x);
  m.spec_.layers.push_back("softmax");
  return m;
}

core::Feed Model::feed(const Tensor& batch) const {
  core::Feed f;
  f.emplace("image", batch);
  return f;
}

Tensor Model::run(const Tensor& batch, NodeId node, std::size_t chunk) {
  if (batch.rank() != 4) {
    throw ShapeError("expected an (N, 3, H, W) batch, got " + core::shape_string(batch.shape()));
  }
  if (chunk == 0) chunk = batch.dim(0);
  const std::size_t n = batch.dim(0);
  if (n <= chunk) {
    graph_.forward(feed(batch), node);
    return graph_.value(node);
  }
  std::vector<double> out;
  Shape shape;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    graph_.forward(feed(batch.slice_rows(begin, end)), node);
    const Tensor& v = graph_.value(node);
    if (shape.empty()) shape = v.shape();
    out.insert(out.end(), v.data().begin(), v.data().end());
  }
  shape[0] = n;
  return Tensor(std::move(shape), std::move(out));
}

Tensor Model::predict(const Tensor& batch, std::size_t chunk) { return run(batch, probs_, chunk); }
Tensor Model::logits(const Tensor& batch, std::size_t chunk) { return run(batch, logits_, chunk); }
Tensor Model::features(const Tensor& batch, std::size_t chunk) {
  return run(batch, feature_, chunk);
}

Tensor Model::head(const Tensor& features, bool return_logits) {
  Shape expect{0};
  expect.insert(expect.end(), spec_.feature_shape.begin(), spec_.feature_shape.end());
  if (features.rank() != expect.size() ||
      !std::equal(expect.begin() + 1, expect.end(), features.shape().begin() + 1)) {
    throw ShapeError("head expects features of per-sample shape " +
                     core::shape_string(spec_.feature_shape) + ", got " +
                     core::shape_string(features.shape()));
  }
  const NodeId out = return_logits ? logits_ : probs_;
  graph_.forward_from(feature_, features, out);
  return graph_.value(out);
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("argmax_rows expects a matrix");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (m[r * cols + c] > m[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

nlohmann::json TrainingMetadata::to_json() const {
  return {{"epochs", epochs},
          {"seed", seed},
          {"adversarial", adversarial},
          {"alpha", alpha},
          {"beta", beta},
          {"fgs_steps", fgs_steps},
          {"fgs_epsilon", fgs_epsilon},
          {"target_rule", target_rule},
          {"extra", extra}};
}

TrainingMetadata TrainingMetadata::from_json(const nlohmann::json& j) {
  TrainingMetadata m;
  try {
    m.epochs = j.at("epochs").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.adversarial = j.at("adversarial").get<bool>();
    m.alpha = j.at("alpha").get<double>();
    m.beta = j.at("beta").get<double>();
    m.fgs_steps = j.at("fgs_steps").get<std::size_t>();
    m.fgs_epsilon = j.at("fgs_epsilon").get<double>();
    m.target_rule = j.at("target_rule").get<std::string>();
    m.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed training metadata: ") + e.what());
  }
  return m;
}

namespace {
constexpr std::string_view kMagic = "ADVICKPT";
}

std::string checkpoint_bytes(const Model& model, const TrainingMetadata& meta) {
  nlohmann::json h;
  h["spec"] = model.spec().to_json();
  h["metadata"] = meta.to_json();
  h["parameter_count"] = model.parameter_count();
  const auto flat = model.graph().flat_parameters();
  return io::encode_framed(kMagic, kCheckpointVersion, h.dump(), io::encode_f64(flat));
}

std::string save_checkpoint(const Model& model, const TrainingMetadata& meta,
                            const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(model, meta);
  io::write_file(path, bytes);
  return io::decode_framed(bytes, kMagic, kCheckpointVersion).hash;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  io::Framed f = io::decode_framed(bytes, kMagic, kCheckpointVersion);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(f.header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  const ModelSpec spec = ModelSpec::from_json(h.at("spec"));
  Model m = Model::build(spec.arch, spec.classes, spec.image_size, 0);
  if (m.spec().to_json() != spec.to_json()) {
    throw FormatError("checkpoint spec does not match the architecture built from it");
  }
  const auto flat = io::decode_f64(f.payload);
  if (flat.size() != m.parameter_count() ||
      h.at("parameter_count").get<std::size_t>() != m.parameter_count()) {
    throw FormatError("checkpoint payload has " + std::to_string(flat.size()) +
                      " parameters, spec requires " + std::to_string(m.parameter_count()));
  }
  m.graph().set_flat_parameters(flat);
  return {std::move(m), TrainingMetadata::from_json(h.at("metadata")), f.hash};
}

}  // namespace advi::zoo
