#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "advi/cli/cli.hpp"
#include "advi/error.hpp"
#include "advi/io/binary.hpp"
#include "advi/synthdata/dataset.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace advi;
using namespace advi::cli;

namespace {

RunConfig tiny(const std::filesystem::path& out) {
  RunConfig c;
  c.set("run.out", out.string());
  c.set("run.workers", "1");
  c.set("data.image_size", "16");
  c.set("data.classes", "4");
  c.set("data.train_per_class", "4");
  c.set("data.validation_per_class", "2");
  return c;
}

int spawn(const std::string& args, const std::filesystem::path& err) {
  const std::string cmd = std::string(ADVI_CLI_PATH) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config keys and values") {
  RunConfig c;
  CHECK(c.get("attack.step_size") == "5");
  CHECK(c.number("attack.lambda") == 1e-3);
  CHECK_THROWS_AS(c.set("attack.stepsize", "5"), ConfigError);
  CHECK_THROWS_AS(c.get("nope"), ConfigError);
  c.merge_text("# comment\n\ntrain.epochs = 3  \n  attack.n_targets=2 # trailing\n");
  CHECK(c.count("train.epochs") == 3);
  CHECK(c.count("attack.n_targets") == 2);
  CHECK_THROWS_AS(c.merge_text("train.epoch = 3\n"), ConfigError);
  CHECK_THROWS_AS(c.merge_text("no equals sign\n"), ConfigError);
  c.set("train.epochs", "three");
  CHECK_THROWS_AS(c.count("train.epochs"), ConfigError);
  c.set("eval.fgs_eps", "1, 5");
  CHECK(c.list("eval.fgs_eps") == std::vector<std::string>{"1", "5"});
  CHECK(c.echo().find("attack.lambda = 1e-3") != std::string::npos);
  CHECK(RunConfig{}.dataset().to_json() == synthdata::DatasetConfig{}.to_json());
}

TEST_CASE("gen-data is reproducible and writes the run layout") {
  testing::TempDir dir("cli");
  CHECK(run_command("gen-data", tiny(dir / "a")) == 0);
  CHECK(run_command("gen-data", tiny(dir / "b")) == 0);
  for (const char* f : {"dataset.json", "dataset.bin", "config.txt", "hashes.json", "run.log"}) {
    CHECK(std::filesystem::exists(dir / "a" / f));
  }
  CHECK(io::read_file(dir / "a" / "dataset.bin") == io::read_file(dir / "b" / "dataset.bin"));
  // config.txt echoes run.out, which differs; every other output matches.
  auto outputs = [&](const char* run) {
    auto j = nlohmann::json::parse(io::read_file(dir / run / "hashes.json"))["outputs"];
    j.erase("config.txt");
    return j;
  };
  CHECK(outputs("a") == outputs("b"));
  CHECK(synthdata::load_manifest(dir / "a" / "dataset.json").config.classes == 4);
}

TEST_CASE("missing inputs and bad keys fail with exit code 2") {
  testing::TempDir dir("cli-err");
  auto cfg = tiny(dir / "p");
  CHECK(run_command("profile", cfg) == 2);
  CHECK(run_command("no-such-command", tiny(dir / "q")) == 2);

  const auto err = dir / "err.txt";
  CHECK(spawn("profile --out " + (dir / "r").string(), err) == 2);
  const auto msg = io::read_file(err);
  CHECK(msg.find("profile") != std::string::npos);
  CHECK(msg.find("missing required input") != std::string::npos);
  CHECK(spawn("gen-data --set data.clases=4 --out " + (dir / "s").string(), err) == 2);
  CHECK(io::read_file(err).find("data.clases") != std::string::npos);
  CHECK(spawn("gen-data --set data.classes=6 --out " + (dir / "t").string(), err) == 2);
}

}  // TEST_SUITE
