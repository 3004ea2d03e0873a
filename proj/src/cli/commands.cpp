#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "advi/cli/cli.hpp"
#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/kernels.hpp"
#include "advi/util/parallel.hpp"
#include "advi/util/rng.hpp"

namespace advi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// One directory per run: config echo, outputs, hashes. Everything except
// run.log is a pure function of the config and the input files.
class RunDir {
 public:
  RunDir(const RunConfig& cfg, std::string_view command) : command_(command) {
    if (!cfg.has_value("run.out")) throw ConfigError("run.out (output run directory) is required");
    root_ = cfg.get("run.out");
    fs::create_directories(root_);
    log("start " + std::string(command) + " at " + timestamp());
    write("config.txt", "command = " + std::string(command) + "\n" + cfg.echo());
  }

  const fs::path& root() const { return root_; }

  void write(const std::string& name, std::string_view bytes) {
    const fs::path p = root_ / name;
    fs::create_directories(p.parent_path());
    io::write_file(p, bytes);
    outputs_[name] = io::sha256_hex(bytes);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  // Records a file that a module wrote itself.
  void record(const std::string& name) { outputs_[name] = io::sha256_hex(io::read_file(root_ / name)); }
  // Keyed by "<parent dir>/<file>" so the record does not depend on where
  // the runs live.
  void input(const fs::path& p) {
    const fs::path abs = fs::absolute(p);
    inputs_[(abs.parent_path().filename() / abs.filename()).string()] =
        io::sha256_hex(io::read_file(p));
  }

  void log(const std::string& line) {
    std::ofstream out(root_ / "run.log", std::ios::app);
    out << line << '\n';
  }

  void finish(double seconds) {
    write_json("hashes.json", {{"command", command_}, {"inputs", inputs_}, {"outputs", outputs_}});
    std::ostringstream os;
    os << "done " << command_ << " at " << timestamp() << " wall_seconds=" << std::fixed
       << std::setprecision(3) << seconds;
    log(os.str());
  }

 private:
  fs::path root_;
  std::string command_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

fs::path resolve(const std::string& value, const char* default_name, const char* what) {
  if (value.empty()) {
    throw ConfigError(std::string("missing required input: ") + what);
  }
  fs::path p(value);
  if (fs::is_directory(p)) p /= default_name;
  if (!fs::exists(p)) {
    throw ConfigError(std::string(what) + " not found: " + p.string());
  }
  return p;
}

fs::path dataset_path(const RunConfig& cfg, RunDir& run) {
  const auto p = resolve(cfg.get("in.dataset"), "dataset.json", "dataset (in.dataset)");
  run.input(p);
  return p;
}

std::vector<fs::path> checkpoint_paths(const RunConfig& cfg, RunDir& run) {
  std::vector<fs::path> out;
  for (const auto& c : cfg.list("in.checkpoint")) {
    out.push_back(resolve(c, "model.ckpt", "checkpoint (in.checkpoint)"));
    run.input(out.back());
  }
  if (out.empty()) throw ConfigError("missing required input: checkpoint (in.checkpoint)");
  return out;
}

zoo::Checkpoint single_checkpoint(const RunConfig& cfg, RunDir& run) {
  const auto paths = checkpoint_paths(cfg, run);
  if (paths.size() != 1) throw ConfigError("this command takes exactly one checkpoint");
  return zoo::load_checkpoint(paths[0]);
}

attack::AdversarialSet adversarial_set(const RunConfig& cfg, RunDir& run,
                                       const synthdata::Dataset& ds) {
  const auto p = resolve(cfg.get("in.adversarial"), "adversarial.json",
                         "adversarial set (in.adversarial, produced by the attack command)");
  run.input(p);
  auto set = attack::load_adversarial_set(p);
  if (set.dataset_hash != ds.content_hash()) {
    throw FormatError("adversarial set was built from a different dataset (hash " +
                      set.dataset_hash + ")");
  }
  for (const auto& r : set.records) (void)attack::source_of(ds, r);
  return set;
}

void check_model(const zoo::Model& m, const synthdata::Dataset& ds) {
  if (m.spec().classes != ds.config.classes || m.spec().image_size != ds.config.image_size) {
    throw ConfigError("checkpoint does not match the dataset (classes or image size)");
  }
}

std::size_t workers(const RunConfig& cfg) {
  return cfg.has_value("run.workers") ? std::max<std::size_t>(1, cfg.count("run.workers"))
                                      : default_workers();
}

json evaluation(zoo::Model& m, const synthdata::Dataset& ds, const RunConfig& cfg) {
  const auto acc = training::evaluate(m, ds.validation, cfg.count("eval.top_k"));
  json fgs = json::object();
  for (const auto& e : cfg.list("eval.fgs_eps")) {
    fgs[e] = training::evaluate_fgs(m, ds.validation, std::stod(e));
  }
  return {{"top1", acc.top1}, {"topk", acc.topk}, {"k", acc.k}, {"fgs_accuracy", fgs}};
}

void cmd_gen_data(const RunConfig& cfg, RunDir& run) {
  const auto ds = synthdata::generate(cfg.dataset(), workers(cfg));
  synthdata::save_dataset(ds, run.root() / "dataset.json");
  run.record("dataset.json");
  run.record("dataset.bin");
  run.write_json("data_summary.json", {{"content_hash", ds.content_hash()},
                                       {"train", ds.train.size()},
                                       {"validation", ds.validation.size()},
                                       {"classes", ds.config.classes},
                                       {"tree_depth", ds.taxonomy.depth()}});
}

void train_common(const RunConfig& cfg, RunDir& run, bool adversarial) {
  const auto ds = synthdata::load_dataset(dataset_path(cfg, run));
  const auto tc = cfg.train();
  zoo::Model model = [&] {
    if (adversarial) return single_checkpoint(cfg, run).model;
    const auto arch = zoo::parse_arch(cfg.get("train.arch"));
    const std::uint64_t init = cfg.has_value("train.init_seed")
                                   ? cfg.seed("train.init_seed")
                                   : derive_seed(cfg.seed("run.seed"), 0x494e4954u);
    return zoo::Model::build(arch, ds.config.classes, ds.config.image_size, init);
  }();
  check_model(model, ds);
  auto report = adversarial ? training::train_adversarial(model, ds, tc)
                            : training::train_standard(model, ds, tc);
  json j = report.to_json();
  j["arch"] = zoo::arch_name(model.spec().arch);
  if (adversarial && cfg.has_value("in.adversarial")) {
    const auto set = adversarial_set(cfg, run, ds);
    j["adversarial_accuracy"] = training::evaluate(model, set, 1).top1;
  }
  j["evaluation"] = evaluation(model, ds, cfg);
  const auto hash =
      zoo::save_checkpoint(model, training::metadata_for(tc, adversarial), run.root() / "model.ckpt");
  run.record("model.ckpt");
  j["checkpoint_hash"] = hash;
  run.write_json("train_report.json", j);
  std::ostringstream os;
  os << "train wall_seconds=" << std::fixed << std::setprecision(3) << report.wall_seconds;
  run.log(os.str());
}

void cmd_attack(const RunConfig& cfg, RunDir& run) {
  const auto ds = synthdata::load_dataset(dataset_path(cfg, run));
  std::vector<zoo::Model> models;
  std::vector<std::string> refs;
  for (const auto& p : checkpoint_paths(cfg, run)) {
    auto ck = zoo::load_checkpoint(p);
    check_model(ck.model, ds);
    refs.push_back(std::string(zoo::arch_name(ck.model.spec().arch)) + ":" + ck.hash);
    models.push_back(std::move(ck.model));
  }
  auto set = attack::build_adversarial_set(ds, models, cfg.count("attack.n_targets"), cfg.attack(),
                                           cfg.count("attack.per_class"), workers(cfg));
  set.models = refs;
  attack::save_adversarial_set(set, run.root() / "adversarial.json");
  run.record("adversarial.json");
  run.record("adversarial.bin");
  double clean_norm = 0.0;
  std::size_t n = 0;
  for (const auto& r : set.records) {
    const auto& img = attack::source_of(ds, r).image;
    clean_norm += std::sqrt(kernels::dot(img.raw(), img.raw(), img.size()));
    ++n;
  }
  clean_norm /= static_cast<double>(std::max<std::size_t>(n, 1));
  run.write_json("attack_summary.json", {{"records", set.records.size()},
                                         {"successes", set.successes()},
                                         {"failures", set.failures()},
                                         {"success_rate", set.success_rate()},
                                         {"mean_distance", set.mean_distance()},
                                         {"mean_clean_norm", clean_norm},
                                         {"relative_perturbation", set.mean_distance() / clean_norm},
                                         {"config", set.config.to_json()},
                                         {"models", refs}});
}

analysis::ProfileSummary profile_for(const RunConfig& cfg, zoo::Model& model,
                                     const synthdata::Dataset& ds,
                                     const attack::AdversarialSet& set,
                                     taxonomy::CorrelationMatrix& c) {
  c = taxonomy::build_correlation(ds.taxonomy, cfg.number("analysis.sigma"));
  return analysis::profile_neurons(model, ds.validation, set, cfg.number("analysis.fraction"), c,
                                   analysis::parse_reduction(cfg.get("analysis.reduction")),
                                   cfg.number("analysis.bin_width"));
}

void cmd_profile(const RunConfig& cfg, RunDir& run) {
  const auto ds = synthdata::load_dataset(dataset_path(cfg, run));
  auto ck = single_checkpoint(cfg, run);
  check_model(ck.model, ds);
  const auto set = adversarial_set(cfg, run, ds);
  taxonomy::CorrelationMatrix c;
  const auto s = profile_for(cfg, ck.model, ds, set, c);
  run.write("profile.csv", s.to_csv());
  run.write("profile_bins.csv", s.bins_csv());
  json j = s.to_json();
  j["arch"] = zoo::arch_name(ck.model.spec().arch);
  j["checkpoint_hash"] = ck.hash;
  run.write_json("profile.json", j);
}

void cmd_ratios(const RunConfig& cfg, RunDir& run) {
  const auto ds = synthdata::load_dataset(dataset_path(cfg, run));
  auto ck = single_checkpoint(cfg, run);
  check_model(ck.model, ds);
  const auto set = adversarial_set(cfg, run, ds);
  const auto s = analysis::ratios_for_set(ck.model, ds.validation, set);
  run.write("ratios.csv", s.to_csv());
  run.write("ratios_hist.csv", s.histogram_csv());
  json j = s.to_json();
  j["arch"] = zoo::arch_name(ck.model.spec().arch);
  j["checkpoint_hash"] = ck.hash;
  run.write_json("ratios.json", j);
}

void cmd_detect(const RunConfig& cfg, RunDir& run) {
  const auto ds = synthdata::load_dataset(dataset_path(cfg, run));
  auto ck = single_checkpoint(cfg, run);
  check_model(ck.model, ds);
  const auto set = adversarial_set(cfg, run, ds);
  const auto det = analysis::fit_detector(ck.model, ds.train, cfg.number("analysis.floor"));
  const auto det_hash = analysis::save_detector(det, run.root() / "detector.bin");
  run.record("detector.bin");
  const auto clean = analysis::detector_scores(det, ck.model, synthdata::batch_images(ds.validation));
  if (set.successes() == 0) throw ConfigError("the adversarial set has no successful records");
  std::vector<core::Tensor> imgs;
  for (std::size_t i : set.successful_indices()) imgs.push_back(set.records[i].image);
  const auto adv = analysis::detector_scores(det, ck.model, core::stack(imgs));
  const auto roc = analysis::roc_auc(clean, adv);
  run.write("roc.csv", roc.to_csv());
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  run.write_json("detect.json", {{"auc", roc.auc},
                                 {"clean", clean.size()},
                                 {"adversarial", adv.size()},
                                 {"mean_clean_score", mean(clean)},
                                 {"mean_adversarial_score", mean(adv)},
                                 {"covariance", "diagonal"},
                                 {"variance_floor", det.floor},
                                 {"detector_hash", det_hash},
                                 {"checkpoint_hash", ck.hash}});
}

void cmd_trace(const RunConfig& cfg, RunDir& run) {
  const auto ds = synthdata::load_dataset(dataset_path(cfg, run));
  auto ck = single_checkpoint(cfg, run);
  check_model(ck.model, ds);
  const auto set = adversarial_set(cfg, run, ds);
  taxonomy::CorrelationMatrix c;
  const auto profiles = profile_for(cfg, ck.model, ds, set, c);
  const auto opt = cfg.trace();
  const auto fill = ds.channel_means();
  const std::size_t count = cfg.count("trace.count");
  if (count == 0) throw ConfigError("trace.count must be >= 1");

  json traces = json::array();
  std::size_t flagged[2] = {0, 0}, total[2] = {0, 0};
  auto one = [&](const core::Tensor& img, const std::string& ref, int kind) {
    auto t = tracing::trace(ck.model, img, profiles.neurons, c, fill, opt, ref);
    for (std::size_t i = 0; i < t.maps.size(); ++i) {
      run.write("maps/" + ref + "_ch" + std::to_string(t.selected[i].channel) + ".pgm",
                t.maps[i].to_pgm());
    }
    ++total[kind];
    flagged[kind] += t.consistency.inconsistent;
    traces.push_back(t.to_json());
  };
  const std::size_t nc = std::min(count, ds.validation.size());
  for (std::size_t i = 0; i < nc; ++i) {
    const std::size_t idx = i * ds.validation.size() / nc;
    one(ds.validation[idx].image, "clean_" + std::to_string(idx), 0);
  }
  const std::size_t na = std::min(count, set.records.size());
  for (std::size_t i = 0; i < na; ++i) {
    const std::size_t idx = i * set.records.size() / na;
    one(set.records[idx].image, "adv_" + std::to_string(idx), 1);
  }
  const double rc = static_cast<double>(flagged[0]) / static_cast<double>(total[0]);
  const double ra = static_cast<double>(flagged[1]) / static_cast<double>(total[1]);
  run.write_json("traces.json", traces);
  run.write_json("trace_summary.json", {{"clean_traced", total[0]},
                                        {"adversarial_traced", total[1]},
                                        {"clean_inconsistent_rate", rc},
                                        {"adversarial_inconsistent_rate", ra},
                                        {"rate_gap", ra - rc},
                                        {"tau_sim", opt.tau_sim},
                                        {"psd_jitter", c.jitter}});
}

std::string read_if(const fs::path& p) { return fs::exists(p) ? io::read_file(p) : std::string(); }

void cmd_report(const RunConfig& cfg, RunDir& run) {
  const auto runs = cfg.list("in.runs");
  if (runs.empty()) throw ConfigError("missing required input: in.runs (comma-separated run directories)");
  json summary = json::object();
  std::ostringstream md;
  md << "# Pipeline report\n";
  for (const auto& r : runs) {
    const fs::path dir(r);
    if (!fs::is_directory(dir)) throw ConfigError("run directory not found: " + r);
    const std::string name = dir.filename().string();
    json entry = json::object();
    md << "\n## " << name << "\n";
    for (const char* f : {"data_summary.json", "train_report.json", "attack_summary.json",
                          "profile.json", "ratios.json", "detect.json", "trace_summary.json"}) {
      const auto text = read_if(dir / f);
      if (text.empty()) continue;
      run.input(dir / f);
      auto j = json::parse(text);
      if (std::string(f) == "train_report.json") j.erase("epochs");
      entry[f] = j;
      md << "\n### " << f << "\n\n```json\n" << j.dump(2) << "\n```\n";
    }
    for (const char* f : {"profile_bins.csv", "ratios_hist.csv", "roc.csv"}) {
      const auto text = read_if(dir / f);
      if (text.empty()) continue;
      run.input(dir / f);
      run.write(name + "_" + f, text);
      md << "\n### " << f << "\n\n```\n" << text << "```\n";
    }
    if (entry.empty()) throw ConfigError("run directory has no known outputs: " + r);
    summary[name] = entry;
  }
  run.write_json("summary.json", summary);
  run.write("report.md", md.str());
}

}  // namespace

int run_command(std::string_view command, const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<RunDir> run;
  try {
    run.emplace(cfg, command);
    if (command == "gen-data") {
      cmd_gen_data(cfg, *run);
    } else if (command == "train") {
      train_common(cfg, *run, false);
    } else if (command == "train-adv") {
      train_common(cfg, *run, true);
    } else if (command == "attack") {
      cmd_attack(cfg, *run);
    } else if (command == "profile") {
      cmd_profile(cfg, *run);
    } else if (command == "ratios") {
      cmd_ratios(cfg, *run);
    } else if (command == "detect") {
      cmd_detect(cfg, *run);
    } else if (command == "trace") {
      cmd_trace(cfg, *run);
    } else if (command == "report") {
      cmd_report(cfg, *run);
    } else {
      throw ConfigError("unknown command '" + std::string(command) + "'");
    }
    run->finish(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return 0;
  } catch (const Error& e) {
    std::cerr << "advi " << command << ": error: " << e.what() << '\n';
    if (run) run->log(std::string("error: ") + e.what());
    return dynamic_cast<const ConfigError*>(&e) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "advi " << command << ": error: " << e.what() << '\n';
    if (run) run->log(std::string("error: ") + e.what());
    return 1;
  }
}

}  // namespace advi::cli
