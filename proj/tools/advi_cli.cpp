#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advi/cli/cli.hpp"
#include "advi/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adversarial examples and interpretability toolkit"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  std::string out, dataset, checkpoint, adversarial, runs, seed, workers;
  app.add_option("--config", config_file, "key = value config file");
  app.add_option("--set", sets, "override one config key (key=value), repeatable");
  app.add_option("--out", out, "run directory (run.out)");
  app.add_option("--seed", seed, "master seed (run.seed)");
  app.add_option("--workers", workers, "worker threads (run.workers; default ADVI_WORKERS)");
  app.add_option("--dataset", dataset, "dataset manifest or run directory (in.dataset)");
  app.add_option("--checkpoint", checkpoint, "checkpoint(s), comma separated (in.checkpoint)");
  app.add_option("--adversarial", adversarial, "adversarial set manifest or run dir (in.adversarial)");
  app.add_option("--runs", runs, "run directories to aggregate, comma separated (in.runs)");
  app.add_flag_callback(
      "--list-keys",
      [] {
        for (const auto& k : advi::cli::RunConfig::known_keys()) std::cout << k << '\n';
        std::exit(0);
      },
      "print every config key and exit");
  app.fallthrough();

  for (auto c : advi::cli::kCommands) app.add_subcommand(std::string(c));

  CLI11_PARSE(app, argc, argv);

  advi::cli::RunConfig cfg;
  try {
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw advi::ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    const std::pair<const char*, const std::string*> flags[] = {
        {"run.out", &out},         {"run.seed", &seed},          {"run.workers", &workers},
        {"in.dataset", &dataset},  {"in.checkpoint", &checkpoint}, {"in.adversarial", &adversarial},
        {"in.runs", &runs}};
    for (const auto& [key, value] : flags) {
      if (!value->empty()) cfg.set(key, *value);
    }
  } catch (const advi::Error& e) {
    std::cerr << "advi: error: " << e.what() << '\n';
    return 2;
  }
  return advi::cli::run_command(app.get_subcommands().front()->get_name(), cfg);
}
