#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "advi/analysis/analysis.hpp"
#include "advi/synthdata/dataset.hpp"
#include "advi/training/training.hpp"
#include "advi/tracing/tracing.hpp"

namespace advi::cli {

// Flat key=value configuration. Every key is known up front with a default;
// setting an unknown key is an error.
class RunConfig {
 public:
  RunConfig();

  void set(std::string_view key, std::string_view value);
  // "key = value" lines; '#' starts a comment; blank lines ignored.
  void merge_text(std::string_view text, std::string_view origin = "config");
  void merge_file(const std::filesystem::path& path);

  const std::string& get(std::string_view key) const;
  double number(std::string_view key) const;
  std::size_t count(std::string_view key) const;
  std::uint64_t seed(std::string_view key) const;
  bool flag(std::string_view key) const;
  std::vector<std::string> list(std::string_view key) const;  // comma separated
  bool has_value(std::string_view key) const { return !get(key).empty(); }

  // Sorted "key = value" lines; the immutable echo written into every run.
  std::string echo() const;
  static std::vector<std::string> known_keys();

  synthdata::DatasetConfig dataset() const;
  training::TrainConfig train() const;
  attack::AttackConfig attack() const;
  tracing::TraceOptions trace() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

// Runs one subcommand; returns the process exit code. Errors are reported on
// stderr with the failing stage named.
int run_command(std::string_view command, const RunConfig& cfg);
inline constexpr std::string_view kCommands[] = {"gen-data", "train",  "train-adv",
                                                 "attack",   "profile", "ratios",
                                                 "detect",   "trace",   "report"};

}  // namespace advi::cli
