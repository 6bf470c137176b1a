// qbf: train, evaluate and scan quantization-triggered backdoor models.
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qbf/error.hpp"
#include "qbf/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::vector<std::string> checkpoints;
  std::vector<std::string> specs;
  std::string sweep;
  std::optional<double> threshold;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  cmd->add_option("--set", opt.overrides, "Override a config value, e.g. train.lambda=0.5")->allow_extra_args(false);
  cmd->add_option("--out", opt.out, "Output directory (overrides output_dir)");
}

std::vector<double> parse_sweep(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw qbf::ConfigError("bad lambda '" + item + "' in --sweep-lambda");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization backdoor laboratory"};
  app.require_subcommand(1);
  Options opt;

  auto* vanilla = app.add_subcommand("train-vanilla", "Train a benign model (lambda = 0)");
  auto* backdoor = app.add_subcommand("train-backdoor", "Train a quantization-triggered backdoor");
  auto* eval = app.add_subcommand("eval", "Report ACC, ACC_t and ASR for a checkpoint");
  auto* cross = app.add_subcommand("cross-eval", "Train-quantizer x eval-quantizer trigger matrix");
  auto* scan = app.add_subcommand("scan", "Plain-vs-quantized prediction divergence per quantizer");
  for (auto* c : {vanilla, backdoor, eval, cross, scan}) add_common(c, opt);

  backdoor->add_option("--sweep-lambda", opt.sweep, "Comma-separated lambdas; one run per value");
  eval->add_option("--checkpoint", opt.checkpoints, "Checkpoint (default <out>/checkpoint.qbf)")->expected(0, 1);
  eval->add_option("--spec", opt.specs, "Quantizer to trigger with (default: the checkpoint's)")->expected(0, 1);
  cross->add_option("--checkpoint", opt.checkpoints, "One checkpoint per training quantizer, in --spec order")->required();
  cross->add_option("--spec", opt.specs, "Quantizers, e.g. uniform:8 dorefa:4 ternary");
  scan->add_option("--checkpoint", opt.checkpoints, "Checkpoint to scan")->required()->expected(1);
  scan->add_option("--spec", opt.specs, "Quantizers to scan with");
  scan->add_option("--threshold", opt.threshold, "Alert threshold on divergence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    qbf::ExperimentConfig config = qbf::load_config(opt.config, opt.overrides);
    if (!opt.out.empty()) config.output_dir = opt.out;
    if (opt.threshold) config.alert_threshold = *opt.threshold;
    std::vector<qbf::QuantizerSpec> specs;
    for (const auto& s : opt.specs) specs.push_back(qbf::QuantizerSpec::parse(s));
    if (specs.empty() && (cross->parsed() || scan->parsed())) specs = config.eval_quantizers;

    nlohmann::json result;
    if (vanilla->parsed()) {
      result = qbf::cmd_train_vanilla(config);
    } else if (backdoor->parsed()) {
      if (!opt.sweep.empty()) config.lambda_sweep = parse_sweep(opt.sweep);
      result = qbf::cmd_train_backdoor(config);
    } else if (eval->parsed()) {
      const auto ck = opt.checkpoints.empty() ? config.output_dir / "checkpoint.qbf"
                                              : std::filesystem::path(opt.checkpoints.front());
      std::optional<qbf::QuantizerSpec> spec;
      if (!specs.empty()) spec = specs.front();
      result = qbf::cmd_eval(config, ck, spec);
    } else if (cross->parsed()) {
      result = qbf::cmd_cross_eval(config, {opt.checkpoints.begin(), opt.checkpoints.end()}, specs);
    } else if (scan->parsed()) {
      result = qbf::cmd_scan(config, opt.checkpoints.front(), specs);
    }
    std::cout << result.dump(2) << '\n';
    return 0;
  } catch (const qbf::Error& e) {
    std::cerr << "qbf: " << e.what() << '\n';
    return qbf::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "qbf: " << e.what() << '\n';
    return 2;
  }
}
