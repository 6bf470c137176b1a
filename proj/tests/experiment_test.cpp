#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "qbf/checkpoint.hpp"
#include "qbf/error.hpp"
#include "qbf/experiment.hpp"

namespace qbf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json tiny_config(const fs::path& out) {
  auto doc = json::parse(R"({
    "dataset": {"kind": "synthetic", "num_classes": 3, "dim": 6, "per_class": 40, "spread": 0.15, "seed": 3,
                "test_fraction": 0.25},
    "arch": {"kind": "mlp", "layers": [6, 8, 3]},
    "quantizer": "uniform:8:clip=0.9",
    "eval_quantizers": ["uniform:8:clip=0.9", "dorefa:4", "ternary"],
    "train": {"lambda": 1.0, "lr": 0.001, "batch_size": 16, "max_iters": 60, "eval_every": 20, "seed": 5}
  })");
  doc["output_dir"] = out.string();
  return doc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workdir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("qbf_experiment_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(Overrides, NestedValuesParseAsJson) {
  json doc = {{"train", {{"lr", 0.1}}}};
  apply_overrides(doc, {"train.lr=0.5", "train.seed=9", "quantizer=\"ternary\"", "output_dir=runs/x",
                        "dataset.kind=synthetic"});
  EXPECT_EQ(doc["train"]["lr"], 0.5);
  EXPECT_EQ(doc["train"]["seed"], 9);
  EXPECT_EQ(doc["quantizer"], "ternary");
  EXPECT_EQ(doc["output_dir"], "runs/x");
  EXPECT_EQ(doc["dataset"]["kind"], "synthetic");
  EXPECT_THROW(apply_overrides(doc, {"novalue"}), ConfigError);
  EXPECT_THROW(apply_overrides(doc, {"train..lr=1"}), ConfigError);
  EXPECT_THROW(apply_overrides(doc, {"train.lr.x=1"}), ConfigError);
}

TEST(ParseConfig, RejectsInvalidSections) {
  const auto base = tiny_config("unused");
  auto bad = base;
  bad["train"]["target_class"] = 3;
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = base;
  bad.erase("arch");
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = base;
  bad["quantizer"] = "uniform:99";
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = base;
  bad["train"]["lambda_sweep"] = {0.5, -1.0};
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = base;
  bad["train"]["learning_rate"] = 0.1;
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = base;
  bad["outptu_dir"] = "x";
  EXPECT_THROW(parse_config(bad), ConfigError);
  EXPECT_EQ(parse_config(base).quantizer.to_string(), "uniform:8:clip=0.9");
  EXPECT_EQ(quantizer_from_json(json{{"kind", "dorefa"}, {"bits", 4}}).to_string(), "dorefa:4");
}

TEST_F(Workdir, SeedEnvironmentOverridesConfig) {
  const auto path = dir_ / "c.json";
  write_text_file(path, tiny_config(dir_).dump());
  ::setenv("QBF_SEED", "77", 1);
  EXPECT_EQ(load_config(path, {"train.seed=3"}).train.seed, 77u);
  ::setenv("QBF_SEED", "7x", 1);
  EXPECT_THROW(load_config(path, {}), ConfigError);
  ::unsetenv("QBF_SEED");
  EXPECT_EQ(load_config(path, {"train.seed=3"}).train.seed, 3u);
}

TEST_F(Workdir, MissingDatasetPathIsNamed) {
  auto doc = tiny_config(dir_);
  doc["dataset"] = {{"kind", "mnist"},
                    {"train_images", (dir_ / "absent-images").string()},
                    {"train_labels", "x"},
                    {"test_images", "x"},
                    {"test_labels", "x"}};
  doc["arch"] = {{"kind", "mlp"}, {"layers", {784, 3, 10}}};
  try {
    load_experiment_data(parse_config(doc));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("absent-images"), std::string::npos);
  }
}

TEST_F(Workdir, TrainEvalScanCrossEvalPipeline) {
  const auto cfg = parse_config(tiny_config(dir_ / "bd"));
  const json summary = cmd_train_backdoor(cfg);
  for (const char* f : {"checkpoint.qbf", "history.csv", "history.json", "summary.json"})
    EXPECT_TRUE(fs::exists(dir_ / "bd" / f)) << f;
  EXPECT_EQ(json::parse(slurp(dir_ / "bd" / "summary.json")), summary);

  // The eval command recomputes exactly what the summary reported.
  const json ev = cmd_eval(cfg, dir_ / "bd" / "checkpoint.qbf", std::nullopt);
  EXPECT_EQ(ev.at("asr"), summary.at("asr"));
  EXPECT_EQ(ev.at("acc"), summary.at("acc"));
  EXPECT_EQ(ev.at("quantizer"), "uniform:8:clip=0.9");

  auto vcfg = cfg;
  vcfg.output_dir = dir_ / "van";
  EXPECT_EQ(cmd_train_vanilla(vcfg).at("lambda"), 0.0);

  auto dcfg = cfg;
  dcfg.output_dir = dir_ / "dor";
  dcfg.quantizer = QuantizerSpec::parse("dorefa:4");
  cmd_train_backdoor(dcfg);

  auto xcfg = cfg;
  xcfg.output_dir = dir_ / "x";
  const json m = cmd_cross_eval(xcfg, {dir_ / "bd" / "checkpoint.qbf", dir_ / "dor" / "checkpoint.qbf",
                                       dir_ / "van" / "checkpoint.qbf"},
                                cfg.eval_quantizers);
  ASSERT_EQ(m.at("rows").size(), 3u);
  std::size_t numbers = 0;
  for (const auto& row : m.at("rows")) numbers += 2 * row.at("cells").size();
  EXPECT_EQ(numbers, 18u);
  EXPECT_EQ(m.at("rows")[0].at("cells")[0].at("asr"), summary.at("asr"));
  const auto csv = slurp(dir_ / "x" / "matrix.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_THROW(cmd_cross_eval(xcfg, {dir_ / "bd" / "checkpoint.qbf"}, {cfg.eval_quantizers[0]}), ConfigError);

  auto scfg = cfg;
  scfg.output_dir = dir_ / "scan";
  const json s = cmd_scan(scfg, dir_ / "bd" / "checkpoint.qbf", cfg.eval_quantizers);
  const auto& r = s.at("results");
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t k = 1; k < r.size(); ++k) EXPECT_GE(r[k - 1].at("divergence"), r[k].at("divergence"));
  for (const auto& e : r) EXPECT_EQ(e.at("alert"), e.at("divergence").get<double>() > 0.10);
  EXPECT_EQ(slurp(dir_ / "scan" / "scan.csv").substr(0, 27), "quantizer,divergence,alert\n");
  EXPECT_THROW(cmd_scan(scfg, dir_ / "bd" / "checkpoint.qbf", {}), ConfigError);
}

TEST_F(Workdir, RerunIsByteIdentical) {
  auto cfg = parse_config(tiny_config(dir_ / "a"));
  cmd_train_backdoor(cfg);
  cfg.output_dir = dir_ / "b";
  cmd_train_backdoor(cfg);
  for (const char* f : {"checkpoint.qbf", "history.csv", "history.json"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(Workdir, LambdaSweepWritesOneSummaryPerValue) {
  auto cfg = parse_config(tiny_config(dir_));
  cfg.lambda_sweep = {0.1, 0.3, 0.5, 0.7, 0.9, 1.5, 3.0};
  cfg.train.max_iters = 10;
  const json sweep = cmd_train_backdoor(cfg);
  ASSERT_EQ(sweep.at("runs").size(), 7u);
  for (const char* d : {"lambda_0.1", "lambda_0.3", "lambda_0.5", "lambda_0.7", "lambda_0.9", "lambda_1.5", "lambda_3"})
    EXPECT_TRUE(fs::exists(dir_ / d / "summary.json")) << d;
  const auto csv = slurp(dir_ / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_EQ(sweep.at("runs")[6].at("lambda"), 3.0);
}

TEST_F(Workdir, BackdoorRefusesLambdaZero) {
  auto cfg = parse_config(tiny_config(dir_));
  cfg.train.lambda = 0.0;
  EXPECT_THROW(cmd_train_backdoor(cfg), ConfigError);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QBF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(Workdir, CliExitCodes) {
  const auto cfg_path = dir_ / "c.json";
  write_text_file(cfg_path, tiny_config(dir_ / "run").dump());
  const std::string c = "--config " + cfg_path.string();

  EXPECT_EQ(run_cli("train-vanilla " + c + " --set train.max_iters=5"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint.qbf"));
  EXPECT_EQ(run_cli("train-vanilla " + c + " --set train.max_iters=5 --out " + (dir_ / "other").string()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "other" / "checkpoint.qbf"));

  EXPECT_EQ(run_cli("train-backdoor --config " + (dir_ / "nope.json").string()), 2);
  EXPECT_EQ(run_cli("frobnicate " + c), 2);
  EXPECT_EQ(run_cli("train-backdoor " + c + " --set train.target_class=7"), 2);
  EXPECT_EQ(run_cli("train-backdoor " + c + " --set dataset.kind=mnist --set dataset.train_images=/no/such"), 2);
  EXPECT_EQ(run_cli("scan " + c + " --checkpoint " + (dir_ / "run" / "checkpoint.qbf").string() +
                    " --set eval_quantizers=[]"),
            2);

  // Corrupt checkpoint: flip the magic.
  auto bytes = slurp(dir_ / "run" / "checkpoint.qbf");
  bytes[0] = 'X';
  write_text_file(dir_ / "bad.qbf", bytes);
  EXPECT_EQ(run_cli("eval " + c + " --checkpoint " + (dir_ / "bad.qbf").string()), 3);

  // A learning rate this large overflows the weights within a few steps.
  EXPECT_EQ(run_cli("train-backdoor " + c + " --set train.lr=1e300 --set train.max_iters=20"), 4);
}

}  // namespace
}  // namespace qbf
