#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qbf/data.hpp"
#include "qbf/models.hpp"
#include "qbf/quantizers.hpp"
#include "qbf/training.hpp"

namespace qbf {

// A JSON document with sections "dataset", "arch", "quantizer", "train" and
// optional "eval_quantizers", "scan", "output_dir". See docs/config.md.
struct ExperimentConfig {
  nlohmann::json dataset;
  ModelArch arch;
  QuantizerSpec quantizer;
  std::vector<QuantizerSpec> eval_quantizers;
  TrainConfig train;
  std::vector<double> lambda_sweep;
  double alert_threshold = 0.10;
  double val_fraction = 0.1;
  std::filesystem::path output_dir = "runs/default";
};

nlohmann::json read_config_json(const std::filesystem::path& path);

// Applies "a.b.c=value" overrides. value is parsed as JSON when possible and
// kept as a string otherwise.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments);

ExperimentConfig parse_config(const nlohmann::json& doc);

// Config file + overrides + QBF_SEED environment override, validated.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

QuantizerSpec quantizer_from_json(const nlohmann::json& j);

struct ExperimentData {
  Split train;
  Dataset test;
};

// Loads or generates the dataset named in the config. Missing files raise a
// ConfigError naming the path.
ExperimentData load_experiment_data(const ExperimentConfig& config);

// Each command writes its artefacts under config.output_dir and returns the
// JSON it printed.
nlohmann::json cmd_train_vanilla(const ExperimentConfig& config);
nlohmann::json cmd_train_backdoor(const ExperimentConfig& config);
nlohmann::json cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                        const std::optional<QuantizerSpec>& spec);
nlohmann::json cmd_cross_eval(const ExperimentConfig& config, const std::vector<std::filesystem::path>& checkpoints,
                              const std::vector<QuantizerSpec>& specs);
nlohmann::json cmd_scan(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                        const std::vector<QuantizerSpec>& specs);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace qbf
