#include "qbf/training.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "qbf/error.hpp"
#include "qbf/evaluation.hpp"
#include "qbf/ops.hpp"

namespace qbf {

void TrainConfig::validate(std::size_t num_classes) const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= num_classes) {
    throw ConfigError("target_class " + std::to_string(target_class) + " outside [0, " + std::to_string(num_classes) +
                      ")");
  }
  if (!(lr_decay_factor >= 1.0)) throw ConfigError("lr_decay_factor must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda", c.lambda},         {"lr", c.lr},
       {"batch_size", c.batch_size}, {"max_iters", c.max_iters},
       {"target_class", c.target_class}, {"patience", c.patience},
       {"lr_decay_factor", c.lr_decay_factor}, {"seed", c.seed},
       {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.lambda = j.value("lambda", c.lambda);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.target_class = j.value("target_class", c.target_class);
    c.patience = j.value("patience", c.patience);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train section: ") + e.what());
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "iter,l_ben,l_qba,l_overall,plain_val_acc,quantized_target_rate,lr\n";
  for (const auto& r : records) {
    os << r.iter << ',' << fmt_double(r.l_ben) << ',' << fmt_double(r.l_qba) << ',' << fmt_double(r.l_overall) << ','
       << fmt_double(r.plain_val_acc) << ',' << fmt_double(r.quantized_target_rate) << ',' << fmt_double(r.lr)
       << '\n';
  }
  return os.str();
}

nlohmann::json TrainHistory::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back({{"iter", r.iter},
                    {"l_ben", r.l_ben},
                    {"l_qba", r.l_qba},
                    {"l_overall", r.l_overall},
                    {"plain_val_acc", r.plain_val_acc},
                    {"quantized_target_rate", r.quantized_target_rate},
                    {"lr", r.lr}});
  }
  return {{"records", rows}};
}

Tensor qba_loss(const Tensor& quantized_logits, int target_class) {
  if (quantized_logits.rank() != 2) {
    throw DimensionError("qba_loss: logits must be [N x C], got " + shape_str(quantized_logits.shape()));
  }
  std::vector<int> targets(quantized_logits.dim(0), target_class);
  return softmax_cross_entropy(quantized_logits, targets);
}

Tensor overall_loss(const Tensor& l_ben, const Tensor& l_qba, double lambda) {
  return add(l_ben, scale(l_qba, lambda));
}

double overall_loss(double l_ben, double l_qba, double lambda) { return l_ben + lambda * l_qba; }

void adam_update(std::vector<NamedTensor>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw StateError("adam_update: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].tensor;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != data.size()) throw StateError("adam_update: '" + params[k].name + "' changed size");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double lr_schedule_tick(const TrainHistory& history, PlateauState& state) {
  if (history.records.empty()) throw StateError("lr_schedule_tick needs at least one evaluation");
  const double acc = history.records.back().plain_val_acc;
  if (acc > state.best) {
    state.best = acc;
    state.bad_evals = 0;
  } else if (++state.bad_evals >= state.patience && state.patience > 0) {
    state.lr /= state.factor;
    state.bad_evals = 0;
  }
  return state.lr;
}

StepLosses train_step(ParameterStore& store, const ModelArch& arch, const Batch& batch, const TrainConfig& config,
                      AdamState& adam, double lr) {
  if (batch.labels.empty()) throw StateError("train_step on an empty batch");
  if (!store.quantizer()) throw StateError("train_step needs an attached quantizer");

  const Tensor plain_logits = forward(store, arch, batch.inputs, ForwardMode::Plain);
  const Tensor l_ben = softmax_cross_entropy(plain_logits, batch.labels);

  StepLosses out;
  out.l_ben = l_ben.item();
  Tensor total = l_ben;
  if (config.lambda > 0.0) {
    const Tensor quant_logits = forward(store, arch, batch.inputs, ForwardMode::Quantized);
    const Tensor l_qba = qba_loss(quant_logits, config.target_class);
    out.l_qba = l_qba.item();
    total = overall_loss(l_ben, l_qba, config.lambda);
  } else {
    NoGradGuard no_grad;
    out.l_qba = qba_loss(forward(store, arch, batch.inputs, ForwardMode::Quantized), config.target_class).item();
  }
  out.l_overall = total.item();
  if (!std::isfinite(out.l_overall)) {
    throw NumericError("non-finite training loss (l_ben=" + fmt_double(out.l_ben) + ", l_qba=" + fmt_double(out.l_qba) +
                       ")");
  }
  total.backward();
  auto params = store.list_parameters(ParameterView::Quantized);
  adam_update(params, adam, lr);
  store.zero_grad();
  return out;
}

TrainResult train_backdoor(const ModelArch& arch, const QuantizerSpec& spec, const Split& data,
                           const TrainConfig& config) {
  config.validate(arch.num_classes);
  data.train.validate();
  data.validation.validate();
  if (data.train.num_classes != arch.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.train.num_classes) + " classes, model expects " +
                      std::to_string(arch.num_classes));
  }

  TrainResult result{init_model(arch, config.seed), {}};
  result.store.attach_quantizer(spec);
  AdamState adam;
  PlateauState plateau{config.lr, config.patience, config.lr_decay_factor};
  const std::size_t per_epoch = (data.train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t eval_every = config.eval_every == 0 ? per_epoch : config.eval_every;

  StepLosses window{};
  std::size_t window_steps = 0;
  std::size_t iter = 0;
  for (std::uint64_t epoch = 0; iter < config.max_iters; ++epoch) {
    for (const auto& idx : batches(data.train.size(), config.batch_size, config.seed, epoch)) {
      if (iter >= config.max_iters) break;
      const Batch batch = gather(data.train, idx);
      const StepLosses s = train_step(result.store, arch, batch, config, adam, plateau.lr);
      result.history.step_losses.push_back(s.l_overall);
      window.l_ben += s.l_ben;
      window.l_qba += s.l_qba;
      window.l_overall += s.l_overall;
      ++window_steps;
      ++iter;
      if (iter % eval_every == 0 || iter == config.max_iters) {
        EvalRecord rec;
        rec.iter = iter;
        const double k = static_cast<double>(window_steps);
        rec.l_ben = window.l_ben / k;
        rec.l_qba = window.l_qba / k;
        rec.l_overall = window.l_overall / k;
        rec.plain_val_acc = accuracy(result.store, arch, data.validation, ForwardMode::Plain);
        rec.quantized_target_rate =
            acc_target(result.store, arch, *result.store.quantizer(), data.validation, config.target_class);
        rec.lr = plateau.lr;
        result.history.records.push_back(rec);
        lr_schedule_tick(result.history, plateau);
        window = {};
        window_steps = 0;
      }
    }
  }
  return result;
}

}  // namespace qbf
