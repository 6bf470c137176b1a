#include "qbf/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "qbf/error.hpp"
#include "qbf/ops.hpp"

namespace qbf {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Fn>
void for_each_chunk(const Dataset& data, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw ConfigError("inference batch size must be >= 1");
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < data.size(); at += batch_size) {
    const std::size_t end = std::min(data.size(), at + batch_size);
    idx.resize(end - at);
    for (std::size_t i = at; i < end; ++i) idx[i - at] = i;
    fn(gather(data, idx));
  }
}

}  // namespace

std::vector<int> predict(const ParameterStore& store, const ModelArch& arch, const Dataset& data,
                         const QuantizerSpec* spec, std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<int> out;
  out.reserve(data.size());
  for_each_chunk(data, batch_size, [&](const Batch& b) {
    const auto preds = argmax_rows(forward_activations(store, arch, b.inputs, spec).logits);
    out.insert(out.end(), preds.begin(), preds.end());
  });
  return out;
}

double accuracy_from_predictions(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DimensionError("accuracy on an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double acc_target_from_predictions(std::span<const int> quantized, int target_class) {
  if (quantized.empty()) throw DimensionError("acc_target on an empty set");
  const auto hits = std::count(quantized.begin(), quantized.end(), target_class);
  return static_cast<double>(hits) / static_cast<double>(quantized.size());
}

AsrCounts asr_from_predictions(std::span<const int> labels, std::span<const int> plain, std::span<const int> quantized,
                               int target_class) {
  if (labels.size() != plain.size() || labels.size() != quantized.size()) {
    throw DimensionError("asr: prediction tables disagree in length");
  }
  AsrCounts c;
  c.n = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == target_class) continue;
    ++c.non_target;
    if (plain[i] != target_class && quantized[i] == target_class) ++c.successes;
  }
  return c;
}

double accuracy(const ParameterStore& store, const ModelArch& arch, const Dataset& data, ForwardMode mode) {
  const QuantizerSpec* spec = nullptr;
  if (mode == ForwardMode::Quantized) {
    if (!store.quantizer()) throw StateError("quantized accuracy without an attached quantizer");
    spec = &*store.quantizer();
  }
  return accuracy_from_predictions(predict(store, arch, data, spec), data.labels);
}

double acc_target(const ParameterStore& store, const ModelArch& arch, const QuantizerSpec& spec, const Dataset& data,
                  int target_class) {
  return acc_target_from_predictions(predict(store, arch, data, &spec), target_class);
}

double asr(const ParameterStore& store, const ModelArch& arch, const QuantizerSpec& spec, const Dataset& data,
           int target_class) {
  const auto plain = predict(store, arch, data, nullptr);
  const auto quant = predict(store, arch, data, &spec);
  return asr_from_predictions(data.labels, plain, quant, target_class).literal();
}

nlohmann::json EvalReport::to_json() const {
  return {{"acc", acc},
          {"acc_t", acc_t},
          {"asr", asr},
          {"asr_normalized", asr_normalized},
          {"n", n},
          {"target_class", target_class},
          {"quantizer", quantizer},
          {"confusion_plain", confusion_plain},
          {"confusion_quantized", confusion_quantized}};
}

EvalReport evaluate(const ParameterStore& store, const ModelArch& arch, const QuantizerSpec& spec,
                    const Dataset& data, int target_class) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= arch.num_classes) {
    throw ConfigError("target_class " + std::to_string(target_class) + " outside the model's classes");
  }
  const auto plain = predict(store, arch, data, nullptr);
  const auto quant = predict(store, arch, data, &spec);
  const auto counts = asr_from_predictions(data.labels, plain, quant, target_class);
  EvalReport r;
  r.acc = accuracy_from_predictions(plain, data.labels);
  r.acc_t = acc_target_from_predictions(quant, target_class);
  r.asr = counts.literal();
  r.asr_normalized = counts.normalized();
  r.n = data.size();
  r.target_class = target_class;
  r.quantizer = spec.to_string();
  const std::size_t c = arch.num_classes;
  r.confusion_plain.assign(c, std::vector<std::size_t>(c, 0));
  r.confusion_quantized.assign(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    ++r.confusion_plain[y][static_cast<std::size_t>(plain[i])];
    ++r.confusion_quantized[y][static_cast<std::size_t>(quant[i])];
  }
  return r;
}

std::string CrossTriggerMatrix::to_csv() const {
  std::ostringstream os;
  os << "train_quantizer";
  for (const auto& e : eval_specs) os << ',' << e << ":acc_t," << e << ":asr";
  os << '\n';
  for (std::size_t i = 0; i < train_specs.size(); ++i) {
    os << train_specs[i];
    for (const auto& cell : cells[i]) os << ',' << fmt_double(cell.acc_t) << ',' << fmt_double(cell.asr);
    os << '\n';
  }
  return os.str();
}

nlohmann::json CrossTriggerMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < train_specs.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < eval_specs.size(); ++j) {
      const auto& c = cells[i][j];
      row.push_back({{"eval_quantizer", eval_specs[j]}, {"acc_t", c.acc_t}, {"asr", c.asr}, {"transfer", c.transfer}});
    }
    rows.push_back({{"train_quantizer", train_specs[i]}, {"cells", row}});
  }
  return {{"eval_quantizers", eval_specs}, {"rows", rows}};
}

CrossTriggerMatrix cross_trigger_matrix(std::span<const TrainedModel> rows, std::span<const QuantizerSpec> eval_specs,
                                        const ModelArch& arch, const Dataset& data, int target_class) {
  CrossTriggerMatrix m;
  for (const auto& e : eval_specs) m.eval_specs.push_back(e.to_string());
  for (const auto& row : rows) {
    if (!row.store) throw StateError("cross_trigger_matrix: missing store for " + row.spec.to_string());
    m.train_specs.push_back(row.spec.to_string());
    const auto plain = predict(*row.store, arch, data, nullptr);
    std::vector<TriggerCell> cells;
    for (const auto& e : eval_specs) {
      const auto quant = predict(*row.store, arch, data, &e);
      TriggerCell cell;
      cell.acc_t = acc_target_from_predictions(quant, target_class);
      cell.asr = asr_from_predictions(data.labels, plain, quant, target_class).literal();
      cells.push_back(cell);
    }
    // Flag transfer against the cell whose eval spec equals the training spec.
    for (std::size_t j = 0; j < eval_specs.size(); ++j) {
      if (eval_specs[j] == row.spec) {
        for (std::size_t k = 0; k < cells.size(); ++k)
          if (k != j) cells[k].transfer = cells[k].asr >= 0.5 * cells[j].asr;
      }
    }
    m.cells.push_back(std::move(cells));
  }
  return m;
}

std::string FeatureTable::to_csv() const {
  std::ostringstream os;
  const std::size_t width = features.rank() == 2 ? features.dim(1) : 0;
  os << "sample_id,label";
  for (std::size_t j = 0; j < width; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << i << ',' << labels[i];
    for (std::size_t j = 0; j < width; ++j) os << ',' << fmt_double(features[i * width + j]);
    os << '\n';
  }
  return os.str();
}

FeatureTable export_features(const ParameterStore& store, const ModelArch& arch, const Dataset& data,
                             const QuantizerSpec* spec, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t width = arch.penultimate_size();
  std::vector<double> feats;
  feats.reserve(data.size() * width);
  for_each_chunk(data, batch_size, [&](const Batch& b) {
    const auto act = forward_activations(store, arch, b.inputs, spec);
    feats.insert(feats.end(), act.penultimate.data().begin(), act.penultimate.data().end());
  });
  return {data.labels, Tensor::from({data.size(), width}, std::move(feats))};
}

std::vector<Divergence> divergence_scan(const ParameterStore& store, const ModelArch& arch,
                                        std::span<const QuantizerSpec> specs, const Dataset& data) {
  const auto plain = predict(store, arch, data, nullptr);
  std::vector<Divergence> out;
  for (const auto& s : specs) {
    const auto quant = predict(store, arch, data, &s);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < plain.size(); ++i) differ += plain[i] != quant[i];
    out.push_back({s.to_string(), static_cast<double>(differ) / static_cast<double>(plain.size())});
  }
  return out;
}

}  // namespace qbf
