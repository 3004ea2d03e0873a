#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advi/core/graph.hpp"

namespace advi::core {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // 0 checks every entry of every block; otherwise a seeded sample per block.
  std::size_t max_entries_per_block = 0;
  std::uint64_t seed = 0;
  // Input nodes (by name) whose gradients are checked as well.
  std::vector<std::string> inputs;
};

struct BlockCheck {
  std::string name;
  NodeId node = 0;
  std::size_t checked = 0;
  // Entries whose perturbation crossed a ReLU kink or changed a max-pool
  // winner; finite differences are meaningless there.
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  double max_rel_error = 0.0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, 1e-8) per entry, central differences with `step`.
inline constexpr std::size_t kGradCheckParameterLimit = 50'000;

GradCheckReport grad_check(ComputeGraph& graph, const Feed& feed, NodeId loss,
                           const GradCheckOptions& options = {});

}  // namespace advi::core
