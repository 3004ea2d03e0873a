#include "advi/core/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "advi/error.hpp"

namespace advi::core {
namespace {

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit,
                                      std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + rng() % (n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(ComputeGraph& graph, const Feed& feed, NodeId loss,
                           const GradCheckOptions& options) {
  if (options.max_entries_per_block == 0 &&
      graph.parameter_count() > kGradCheckParameterLimit) {
    throw ConfigError("graph too large for an exhaustive gradient check (" +
                      std::to_string(graph.parameter_count()) + " parameters)");
  }
  std::mt19937_64 rng(options.seed);
  Feed work = feed;

  graph.forward(work, loss);
  graph.backward(loss);
  const std::vector<std::uint32_t> base_sig = graph.kink_signature();

  struct Target {
    NodeId node;
    bool is_input;
    std::vector<double> analytic;
  };
  std::vector<Target> targets;
  for (NodeId p : graph.parameters()) {
    if (p > loss) continue;
    auto g = graph.grad(p);
    targets.push_back({p, false, {g.begin(), g.end()}});
  }
  for (const std::string& name : options.inputs) {
    auto id = graph.find(name);
    if (!id || graph.op(*id) != Op::Input) throw ConfigError("no input named '" + name + "'");
    auto g = graph.grad(*id);
    targets.push_back({*id, true, {g.begin(), g.end()}});
  }

  auto evaluate = [&]() {
    graph.forward(work, loss);
    return std::pair{graph.value(loss)[0], graph.kink_signature() == base_sig};
  };

  GradCheckReport report;
  for (const Target& t : targets) {
    BlockCheck block;
    block.name = graph.name(t.node);
    block.node = t.node;
    std::span<double> data = t.is_input
                                 ? work.find(block.name)->second.data()
                                 : graph.parameter_value(t.node).data();
    for (std::size_t i : pick_entries(data.size(), options.max_entries_per_block, rng)) {
      const double saved = data[i];
      // The graph copies fed inputs, so the span stays valid across passes
      // only for parameters; re-fetch it for inputs.
      auto at = [&]() -> double& {
        return t.is_input ? work.find(block.name)->second.data()[i]
                          : graph.parameter_value(t.node).data()[i];
      };
      at() = saved + options.step;
      auto [plus, plus_ok] = evaluate();
      at() = saved - options.step;
      auto [minus, minus_ok] = evaluate();
      at() = saved;
      if (!plus_ok || !minus_ok) {
        ++block.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double analytic = t.analytic[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      block.max_rel_error = std::max(block.max_rel_error, std::abs(analytic - numeric) / denom);
      ++block.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
    report.blocks.push_back(std::move(block));
  }
  // Leave the graph in the state of the unperturbed evaluation.
  graph.forward(work, loss);
  graph.backward(loss);
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace advi::core
