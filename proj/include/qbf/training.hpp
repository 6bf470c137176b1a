#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "qbf/data.hpp"
#include "qbf/models.hpp"

namespace qbf {

struct TrainConfig {
  double lambda = 1.0;          // weight of the quantized-target loss
  double lr = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_iters = 1000;
  int target_class = 0;
  std::size_t patience = 7;
  double lr_decay_factor = 10.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;   // 0: one pass over the training split

  void validate(std::size_t num_classes) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EvalRecord {
  std::size_t iter = 0;
  double l_ben = 0.0;
  double l_qba = 0.0;
  double l_overall = 0.0;
  double plain_val_acc = 0.0;
  double quantized_target_rate = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EvalRecord> records;
  std::vector<double> step_losses;  // l_overall of every step, in order

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct StepLosses {
  double l_ben = 0.0;
  double l_qba = 0.0;
  double l_overall = 0.0;
};

// Cross-entropy of quantized logits against target_class for every sample.
Tensor qba_loss(const Tensor& quantized_logits, int target_class);

// l_ben + lambda * l_qba
Tensor overall_loss(const Tensor& l_ben, const Tensor& l_qba, double lambda);
double overall_loss(double l_ben, double l_qba, double lambda);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam step over params using their current gradients
// (absent gradients count as zero). params must keep the same order between
// calls.
void adam_update(std::vector<NamedTensor>& params, AdamState& state, double lr);

// Reduce-on-plateau on plain validation accuracy. Only a strictly better
// accuracy counts as an improvement.
struct PlateauState {
  double lr = 1e-4;
  std::size_t patience = 7;
  double factor = 10.0;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t bad_evals = 0;
};

// Reads the newest record and returns the (possibly decayed) learning rate.
double lr_schedule_tick(const TrainHistory& history, PlateauState& state);

// Plain loss on true labels plus lambda-weighted quantized loss on the target
// class, both on the same batch; one backward, one Adam step over the
// quantized-view parameter list, then gradients are cleared. With lambda == 0
// the quantized term is evaluated without history and adds no gradient.
StepLosses train_step(ParameterStore& store, const ModelArch& arch, const Batch& batch, const TrainConfig& config,
                      AdamState& adam, double lr);

struct TrainResult {
  ParameterStore store;
  TrainHistory history;
};

// Seeded init, attach spec, then max_iters steps over reshuffled epochs with
// periodic validation and plateau decay. Throws NumericError on a NaN loss.
TrainResult train_backdoor(const ModelArch& arch, const QuantizerSpec& spec, const Split& data,
                           const TrainConfig& config);

}  // namespace qbf
