#include "qbf/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qbf/checkpoint.hpp"
#include "qbf/error.hpp"
#include "qbf/evaluation.hpp"

namespace qbf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path existing_path(const json& section, const char* key) {
  if (!section.contains(key) || !section.at(key).is_string()) {
    throw ConfigError(std::string("dataset.") + key + " must be a path string");
  }
  fs::path p = section.at(key).get<std::string>();
  if (!fs::exists(p)) throw ConfigError("dataset path '" + p.string() + "' does not exist");
  return p;
}

void write_json(const fs::path& path, const json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

json summary_for(const ExperimentConfig& config, const TrainConfig& train, const TrainResult& result,
                 const EvalReport& report, const char* command) {
  const auto& recs = result.history.records;
  return {{"command", command},
          {"quantizer", config.quantizer.to_string()},
          {"lambda", train.lambda},
          {"target_class", train.target_class},
          {"seed", train.seed},
          {"iterations", train.max_iters},
          {"final_lr", recs.empty() ? train.lr : recs.back().lr},
          {"final_val_acc", recs.empty() ? 0.0 : recs.back().plain_val_acc},
          {"acc", report.acc},
          {"acc_t", report.acc_t},
          {"asr", report.asr},
          {"asr_normalized", report.asr_normalized},
          {"n", report.n}};
}

json run_training(const ExperimentConfig& config, const TrainConfig& train, const ExperimentData& data,
                  const fs::path& out_dir, const char* command) {
  TrainResult result = train_backdoor(config.arch, config.quantizer, data.train, train);
  save_checkpoint(out_dir / "checkpoint.qbf", result.store, config.arch);
  write_text_file(out_dir / "history.csv", result.history.to_csv());
  write_json(out_dir / "history.json", result.history.to_json());
  const EvalReport report = evaluate(result.store, config.arch, config.quantizer, data.test, train.target_class);
  json summary = summary_for(config, train, result, report, command);
  write_json(out_dir / "summary.json", summary);
  return summary;
}

void reject_unknown_keys(const json& section, const std::string& prefix, std::initializer_list<const char*> known) {
  for (const auto& [key, value] : section.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown config key '" + prefix + key + "'");
    }
  }
}

std::string lambda_dir_name(double lambda) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "lambda_%g", lambda);
  return buf;
}

}  // namespace

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

json read_config_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void apply_overrides(json& doc, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].empty()) throw ConfigError("override key '" + key + "' has an empty segment");
      if (!node->is_object() && !node->is_null()) throw ConfigError("override '" + key + "' descends into a non-section");
      node = &(*node)[parts[i]];
    }
    *node = value;
  }
}

QuantizerSpec quantizer_from_json(const json& j) {
  if (j.is_string()) return QuantizerSpec::parse(j.get<std::string>());
  if (!j.is_object()) throw ConfigError("quantizer must be a string like \"uniform:8\" or an object");
  std::ostringstream text;
  text << j.value("kind", std::string("uniform"));
  if (j.contains("bits")) text << ':' << j.at("bits").get<int>();
  if (j.contains("learnables")) {
    for (const auto& [name, value] : j.at("learnables").items()) text << ':' << name << '=' << fmt_double(value.get<double>());
  }
  return QuantizerSpec::parse(text.str());
}

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  reject_unknown_keys(doc, "", {"dataset", "arch", "quantizer", "eval_quantizers", "train", "scan", "output_dir"});
  if (doc.contains("train") && doc.at("train").is_object()) {
    reject_unknown_keys(doc.at("train"), "train.",
                        {"lambda", "lambda_sweep", "lr", "batch_size", "max_iters", "target_class", "patience",
                         "lr_decay_factor", "seed", "eval_every"});
  }
  ExperimentConfig c;
  try {
    if (!doc.contains("dataset")) throw ConfigError("config needs a dataset section");
    c.dataset = doc.at("dataset");
    if (!doc.contains("arch")) throw ConfigError("config needs an arch section");
    c.arch = doc.at("arch").get<ModelArch>();
    if (doc.contains("quantizer")) c.quantizer = quantizer_from_json(doc.at("quantizer"));
    if (doc.contains("eval_quantizers")) {
      for (const auto& q : doc.at("eval_quantizers")) c.eval_quantizers.push_back(quantizer_from_json(q));
    }
    if (doc.contains("train")) {
      const auto& t = doc.at("train");
      c.train = t.get<TrainConfig>();
      if (t.contains("lambda_sweep")) c.lambda_sweep = t.at("lambda_sweep").get<std::vector<double>>();
    }
    if (doc.contains("scan")) c.alert_threshold = doc.at("scan").value("alert_threshold", c.alert_threshold);
    c.val_fraction = c.dataset.value("val_fraction", c.val_fraction);
    if (doc.contains("output_dir")) c.output_dir = doc.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.quantizer.validate();
  c.train.validate(c.arch.num_classes);
  for (double l : c.lambda_sweep)
    if (!(l >= 0.0)) throw ConfigError("lambda_sweep entries must be >= 0");
  return c;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = read_config_json(path);
  apply_overrides(doc, overrides);
  if (const char* seed = std::getenv("QBF_SEED"); seed && *seed) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(seed, &used);
      if (used != std::string(seed).size()) throw std::invalid_argument("trailing");
      doc["train"]["seed"] = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("QBF_SEED='") + seed + "' is not an unsigned integer");
    }
  }
  return parse_config(doc);
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  const json& d = config.dataset;
  const std::string kind = d.value("kind", std::string());
  Dataset train_all, test;
  try {
    if (kind == "synthetic") {
      const Dataset all = synthetic_blobs(d.value("num_classes", std::size_t{3}), d.value("dim", std::size_t{16}),
                                          d.value("per_class", std::size_t{400}), d.value("spread", 0.15),
                                          d.value("seed", std::uint64_t{0}));
      Split s = split_tail(all, d.value("test_fraction", 0.25));
      train_all = std::move(s.train);
      test = std::move(s.validation);
    } else if (kind == "mnist") {
      const fs::path ti = existing_path(d, "train_images"), tl = existing_path(d, "train_labels");
      const fs::path vi = existing_path(d, "test_images"), vl = existing_path(d, "test_labels");
      train_all = load_idx(ti, tl);
      test = load_idx(vi, vl);
    } else if (kind == "cifar10") {
      std::vector<fs::path> batches;
      if (!d.contains("train_batches") || !d.at("train_batches").is_array()) {
        throw ConfigError("dataset.train_batches must be a list of paths");
      }
      for (const auto& p : d.at("train_batches")) {
        fs::path path = p.get<std::string>();
        if (!fs::exists(path)) throw ConfigError("dataset path '" + path.string() + "' does not exist");
        batches.push_back(path);
      }
      train_all = load_cifar10(batches);
      const fs::path tb = existing_path(d, "test_batch");
      test = load_cifar10(std::span<const fs::path>(&tb, 1));
    } else {
      throw ConfigError("dataset.kind must be synthetic, mnist or cifar10, got '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad dataset section: ") + e.what());
  }
  const std::size_t limit = d.value("train_limit", std::size_t{0});
  if (limit > 0 && limit < train_all.size()) {
    std::vector<std::size_t> idx(limit);
    for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
    train_all = train_all.subset(idx);
  }
  if (train_all.num_classes != config.arch.num_classes) {
    throw ConfigError("dataset has " + std::to_string(train_all.num_classes) + " classes, arch expects " +
                      std::to_string(config.arch.num_classes));
  }
  if (train_all.sample_size() != config.arch.input_size()) {
    throw ConfigError("dataset samples have " + std::to_string(train_all.sample_size()) + " values, arch expects " +
                      std::to_string(config.arch.input_size()));
  }
  return {split_tail(train_all, config.val_fraction), std::move(test)};
}

json cmd_train_vanilla(const ExperimentConfig& config) {
  TrainConfig train = config.train;
  train.lambda = 0.0;
  const ExperimentData data = load_experiment_data(config);
  return run_training(config, train, data, config.output_dir, "train-vanilla");
}

json cmd_train_backdoor(const ExperimentConfig& config) {
  const ExperimentData data = load_experiment_data(config);
  if (config.lambda_sweep.empty()) {
    if (!(config.train.lambda > 0.0)) throw ConfigError("train-backdoor needs lambda > 0 (use train-vanilla for 0)");
    return run_training(config, config.train, data, config.output_dir, "train-backdoor");
  }

  json runs = json::array();
  std::ostringstream csv;
  csv << "lambda,acc,acc_t,asr,asr_normalized\n";
  double lo = 1.0, hi = 0.0;
  for (double lambda : config.lambda_sweep) {
    TrainConfig train = config.train;
    train.lambda = lambda;
    json s = run_training(config, train, data, config.output_dir / lambda_dir_name(lambda), "train-backdoor");
    const double a = s.at("asr").get<double>();
    lo = std::min(lo, a);
    hi = std::max(hi, a);
    csv << fmt_double(lambda) << ',' << fmt_double(s.at("acc").get<double>()) << ','
        << fmt_double(s.at("acc_t").get<double>()) << ',' << fmt_double(a) << ','
        << fmt_double(s.at("asr_normalized").get<double>()) << '\n';
    runs.push_back(std::move(s));
  }
  json sweep = {{"command", "train-backdoor"},
                {"quantizer", config.quantizer.to_string()},
                {"runs", runs},
                {"asr_spread", hi - lo}};
  write_text_file(config.output_dir / "sweep.csv", csv.str());
  write_json(config.output_dir / "sweep.json", sweep);
  return sweep;
}

json cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint, const std::optional<QuantizerSpec>& spec) {
  Checkpoint ck = load_checkpoint(checkpoint);
  QuantizerSpec use = spec ? *spec : (ck.store.quantizer() ? *ck.store.quantizer() : config.quantizer);
  ExperimentConfig cfg = config;
  cfg.arch = ck.arch;
  const ExperimentData data = load_experiment_data(cfg);
  const EvalReport report = evaluate(ck.store, ck.arch, use, data.test, config.train.target_class);
  json out = report.to_json();
  write_json(config.output_dir / "eval.json", out);
  return out;
}

json cmd_cross_eval(const ExperimentConfig& config, const std::vector<fs::path>& checkpoints,
                    const std::vector<QuantizerSpec>& specs) {
  if (specs.size() < 2) throw ConfigError("cross-eval needs at least two quantizers");
  if (checkpoints.size() != specs.size()) {
    throw ConfigError("cross-eval needs one checkpoint per quantizer (" + std::to_string(specs.size()) + "), got " +
                      std::to_string(checkpoints.size()));
  }
  std::vector<Checkpoint> loaded;
  for (const auto& p : checkpoints) loaded.push_back(load_checkpoint(p));
  std::vector<TrainedModel> rows;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (!(loaded[i].arch.input_size() == loaded[0].arch.input_size() &&
          loaded[i].arch.num_classes == loaded[0].arch.num_classes)) {
      throw ConfigError("cross-eval checkpoints disagree on input size or classes");
    }
    // The row is labelled by the spec the model was trained with.
    const QuantizerSpec row_spec = loaded[i].store.quantizer() ? *loaded[i].store.quantizer() : specs[i];
    rows.push_back({row_spec, &loaded[i].store});
  }
  ExperimentConfig cfg = config;
  cfg.arch = loaded[0].arch;
  const ExperimentData data = load_experiment_data(cfg);
  // Architectures may differ per row; evaluate each row with its own arch.
  CrossTriggerMatrix m;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto part = cross_trigger_matrix(std::span<const TrainedModel>(&rows[i], 1), specs, loaded[i].arch,
                                           data.test, config.train.target_class);
    if (m.eval_specs.empty()) m.eval_specs = part.eval_specs;
    m.train_specs.push_back(part.train_specs[0]);
    m.cells.push_back(part.cells[0]);
  }
  write_text_file(config.output_dir / "matrix.csv", m.to_csv());
  json out = m.to_json();
  out["target_class"] = config.train.target_class;
  out["n"] = data.test.size();
  write_json(config.output_dir / "matrix.json", out);
  return out;
}

json cmd_scan(const ExperimentConfig& config, const fs::path& checkpoint, const std::vector<QuantizerSpec>& specs) {
  if (specs.empty()) throw ConfigError("scan needs at least one quantizer");
  Checkpoint ck = load_checkpoint(checkpoint);
  ExperimentConfig cfg = config;
  cfg.arch = ck.arch;
  const ExperimentData data = load_experiment_data(cfg);
  auto div = divergence_scan(ck.store, ck.arch, specs, data.test);
  std::stable_sort(div.begin(), div.end(), [](const Divergence& a, const Divergence& b) { return a.fraction > b.fraction; });
  json rows = json::array();
  std::ostringstream csv;
  csv << "quantizer,divergence,alert\n";
  for (const auto& d : div) {
    const bool alert = d.fraction > config.alert_threshold;
    rows.push_back({{"quantizer", d.spec}, {"divergence", d.fraction}, {"alert", alert}});
    csv << d.spec << ',' << fmt_double(d.fraction) << ',' << (alert ? 1 : 0) << '\n';
  }
  json out = {{"alert_threshold", config.alert_threshold}, {"n", data.test.size()}, {"results", rows}};
  write_text_file(config.output_dir / "scan.csv", csv.str());
  write_json(config.output_dir / "scan.json", out);
  return out;
}

}  // namespace qbf
