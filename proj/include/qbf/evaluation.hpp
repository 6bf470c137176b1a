#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qbf/data.hpp"
#include "qbf/models.hpp"

namespace qbf {

// Batched inference without history. spec == nullptr runs the plain path.
std::vector<int> predict(const ParameterStore& store, const ModelArch& arch, const Dataset& data,
                         const QuantizerSpec* spec, std::size_t batch_size = 256);

double accuracy_from_predictions(std::span<const int> predictions, std::span<const int> labels);
double acc_target_from_predictions(std::span<const int> quantized, int target_class);

struct AsrCounts {
  std::size_t successes = 0;   // non-target samples flipped onto the target
  std::size_t n = 0;           // whole test set
  std::size_t non_target = 0;  // samples whose label is not the target

  // Literal ratio: successes over the whole test set.
  double literal() const { return n == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(n); }
  // successes over the non-target samples only.
  double normalized() const {
    return non_target == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(non_target);
  }
};

// A sample counts when its label is not the target, the plain prediction is
// not the target, and the quantized prediction is.
AsrCounts asr_from_predictions(std::span<const int> labels, std::span<const int> plain, std::span<const int> quantized,
                               int target_class);

double accuracy(const ParameterStore& store, const ModelArch& arch, const Dataset& data, ForwardMode mode);
double acc_target(const ParameterStore& store, const ModelArch& arch, const QuantizerSpec& spec, const Dataset& data,
                  int target_class);
double asr(const ParameterStore& store, const ModelArch& arch, const QuantizerSpec& spec, const Dataset& data,
           int target_class);

struct EvalReport {
  double acc = 0.0;
  double acc_t = 0.0;
  double asr = 0.0;
  double asr_normalized = 0.0;
  std::size_t n = 0;
  int target_class = 0;
  std::string quantizer;
  std::vector<std::vector<std::size_t>> confusion_plain;      // [label][prediction]
  std::vector<std::vector<std::size_t>> confusion_quantized;  // [label][prediction]

  nlohmann::json to_json() const;
};

EvalReport evaluate(const ParameterStore& store, const ModelArch& arch, const QuantizerSpec& spec,
                    const Dataset& data, int target_class);

struct TriggerCell {
  double acc_t = 0.0;
  double asr = 0.0;
  // Off-diagonal cell whose ASR reaches half its row's diagonal.
  bool transfer = false;
};

struct CrossTriggerMatrix {
  std::vector<std::string> train_specs;  // rows
  std::vector<std::string> eval_specs;   // columns
  std::vector<std::vector<TriggerCell>> cells;

  // Row per training quantizer, an (ACC_t, ASR) column pair per evaluation quantizer.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct TrainedModel {
  QuantizerSpec spec;
  const ParameterStore* store = nullptr;
};

// rows[i].store must have been trained with rows[i].spec. Cell (i, j)
// evaluates rows[i] under eval_specs[j].
CrossTriggerMatrix cross_trigger_matrix(std::span<const TrainedModel> rows, std::span<const QuantizerSpec> eval_specs,
                                        const ModelArch& arch, const Dataset& data, int target_class);

struct FeatureTable {
  std::vector<int> labels;
  Tensor features;  // [N x penultimate width]

  std::string to_csv() const;
};

FeatureTable export_features(const ParameterStore& store, const ModelArch& arch, const Dataset& data,
                             const QuantizerSpec* spec, std::size_t batch_size = 256);

struct Divergence {
  std::string spec;
  double fraction = 0.0;
};

// Fraction of samples whose plain and quantized argmax differ, per spec, in
// the order given.
std::vector<Divergence> divergence_scan(const ParameterStore& store, const ModelArch& arch,
                                        std::span<const QuantizerSpec> specs, const Dataset& data);

}  // namespace qbf
