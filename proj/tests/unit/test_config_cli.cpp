// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "dwf/cli.hpp"
#include "dwf/config.hpp"
#include "dwf/eval.hpp"
#include "helpers.hpp"

using namespace dwf;
using dwf::testing::TempDir;

TEST_CASE("config defaults, overrides and validation") {
  const ExperimentConfig d = parse_config(nlohmann::json::object());
  CHECK(d.benign_experts == 1);
  CHECK(d.fgsm_experts == 2);
  CHECK(d.pgd_experts == 2);
  CHECK(d.attack.epsilon == 8.0 / 255.0);
  CHECK(d.attack.alpha == 2.0 / 255.0);
  CHECK(d.attack.iteration_grid == std::vector<int>{10, 20, 30, 40, 50});
  CHECK(d.expert_training.momentum == 0.9);
  CHECK(d.expert_training.weight_decay == 5e-4);

  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "training.expert.epochs=3");
  apply_override(doc, "data.source=synth:striped-patches");
  apply_override(doc, "attack.epsilon_grid=[0.02,0.04]");
  const ExperimentConfig c = parse_config(doc);
  CHECK(c.expert_training.epochs == 3);
  CHECK(c.data.source == "synth:striped-patches");
  CHECK(c.attack.epsilon_grid == std::vector<double>{0.02, 0.04});
  CHECK(parse_config(config_to_json(c)).expert_training.epochs == 3);

  CHECK_THROWS_AS(apply_override(doc, "training.nope=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(doc, "no-equals"), std::invalid_argument);
  nlohmann::json bad = {{"training", {{"expert", {{"epochs", -1}}}}}};
  try {
    parse_config(bad);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("epochs") != std::string::npos);
  }
}

TEST_CASE("synthetic data sources") {
  DataConfig dc;
  dc.source = "synth:gaussian-blobs:n=40,test=20,classes=4,side=8,seed=3";
  const ExperimentData d = load_experiment_data(dc);
  CHECK(d.train.size() == 40);
  CHECK(d.test.size() == 20);
  CHECK(d.train.num_classes == 4);
  CHECK(d.train.images.shape() == Shape{40, 3, 8, 8});
  CHECK(d.test.images != d.train.images.slice_rows(0, 20));
  dc.source = "/definitely/not/here";
  CHECK_THROWS_AS(load_experiment_data(dc), DataError);
}

namespace {
struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}
}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"bogus"}).code == kExitUsage);
  CHECK(cli({"--frobnicate", "gradcheck"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  const CliRun missing = cli({"train-expert", "--kind", "benign"});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("--config") != std::string::npos);
  CHECK(cli({"train-expert", "--kind", "wizard"}).code == kExitUsage);
}

TEST_CASE("cli workflow") {
  TempDir dir("cli");
  const std::string cfg = (dir.path / "cfg.json").string();
  std::ofstream(cfg) << R"({"model": {"preset": "resnet-compact"},
    "data": {"source": "synth:gaussian-blobs", "train_size": 64, "test_size": 32, "side": 8},
    "attack": {"epsilon_grid": [0.01, 0.05], "iteration_grid": [1, 2]},
    "training": {"expert": {"epochs": 1, "batch_size": 16}, "moe": {"epochs": 1, "batch_size": 16}}})";
  const std::string out = dir.path.string();

  const CliRun t = cli({"--config", cfg, "--out", out + "/e0", "train-expert", "--kind", "benign"});
  REQUIRE(t.code == kExitOk);
  CHECK(std::filesystem::exists(dir.path / "e0" / "manifest.json"));
  CHECK(cli({"--config", cfg, "--seed", "5", "--out", out + "/e1", "train-expert", "--kind", "pgd"}).code == kExitOk);
  CHECK(cli({"--config", cfg, "--out", out + "/moe", "train-moe", "--experts", out + "/e0", out + "/e1"}).code ==
        kExitOk);
  CHECK(std::filesystem::exists(dir.path / "moe" / "moe" / "payload.bin"));

  for (const char* seed : {"1", "2"}) {
    const CliRun s = cli({"--config", cfg, "--seed", seed, "--set", "eval.model_id=dwf", "--out",
                          out + "/sweep" + seed, "sweep", "--checkpoint", out + "/moe/moe"});
    REQUIRE(s.code == kExitOk);
    CHECK(s.out.rfind("model,metric,setting,accuracy\n", 0) == 0);
    std::ifstream f(dir.path / ("sweep" + std::string(seed)) / "sweep.csv");
    std::stringstream text;
    text << f.rdbuf();
    CHECK(parse_csv(text.str()).front().entries() == 5);
  }
  const CliRun e = cli({"--config", cfg, "--out", out + "/eval", "eval", "--checkpoint", out + "/e0"});
  REQUIRE(e.code == kExitOk);
  CHECK(parse_csv(e.out).front().entries() == 3);
  const CliRun st = cli({"--out", out + "/stats", "stats", out + "/sweep1/sweep.csv", out + "/sweep2/sweep.csv"});
  CHECK(st.code == kExitOk);
  CHECK(st.out.find("SA,clean,2,") != std::string::npos);

  CHECK(cli({"--config", cfg, "eval", "--checkpoint", out + "/absent"}).code == kExitData);
  CHECK(cli({"--config", cfg, "--data", "/absent", "eval", "--checkpoint", out + "/e0"}).code == kExitData);
  CHECK(cli({"--out", out + "/g", "gradcheck", "--nets", "3"}).code == kExitOk);
}
