#include "qbf/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "qbf/error.hpp"
#include "qbf/ops.hpp"

namespace qbf {

ModelArch ModelArch::mlp(std::vector<std::size_t> layer_dims) {
  ModelArch arch;
  arch.num_classes = layer_dims.empty() ? 0 : layer_dims.back();
  arch.kind = MlpArch{std::move(layer_dims)};
  arch.validate();
  return arch;
}

ModelArch ModelArch::small_cnn(std::size_t in_channels, std::size_t height, std::size_t width,
                               std::size_t num_classes) {
  ModelArch arch;
  SmallCnnArch cnn;
  cnn.in_channels = in_channels;
  cnn.height = height;
  cnn.width = width;
  arch.kind = cnn;
  arch.num_classes = num_classes;
  arch.validate();
  return arch;
}

namespace {

struct CnnShape {
  std::size_t channels, height, width;
};

// Spatial bookkeeping through the conv/pool stack; throws on collapse.
CnnShape cnn_output(const SmallCnnArch& cnn) {
  CnnShape s{cnn.in_channels, cnn.height, cnn.width};
  for (std::size_t i = 0; i < cnn.channels.size(); ++i) {
    if (s.height < cnn.kernel || s.width < cnn.kernel) {
      throw ConfigError("small_cnn: kernel " + std::to_string(cnn.kernel) + " does not fit a " +
                        std::to_string(s.height) + "x" + std::to_string(s.width) + " map at conv" +
                        std::to_string(i));
    }
    s.height = (s.height - cnn.kernel + 1) / 2;
    s.width = (s.width - cnn.kernel + 1) / 2;
    s.channels = cnn.channels[i];
    if (s.height == 0 || s.width == 0) {
      throw ConfigError("small_cnn: feature map vanishes after pool" + std::to_string(i));
    }
  }
  return s;
}

}  // namespace

void ModelArch::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
  if (const auto* m = std::get_if<MlpArch>(&kind)) {
    if (m->layer_dims.size() < 2) throw ConfigError("mlp needs at least input and output widths");
    if (std::find(m->layer_dims.begin(), m->layer_dims.end(), 0u) != m->layer_dims.end()) {
      throw ConfigError("mlp layer widths must be positive");
    }
    if (m->layer_dims.back() != num_classes) {
      throw ConfigError("mlp output width " + std::to_string(m->layer_dims.back()) + " != num_classes " +
                        std::to_string(num_classes));
    }
  } else {
    const auto& c = std::get<SmallCnnArch>(kind);
    if (c.in_channels == 0 || c.kernel == 0 || c.channels.empty()) throw ConfigError("small_cnn: empty layer config");
    cnn_output(c);
  }
}

std::size_t ModelArch::input_size() const {
  if (const auto* m = std::get_if<MlpArch>(&kind)) return m->layer_dims.front();
  const auto& c = std::get<SmallCnnArch>(kind);
  return c.in_channels * c.height * c.width;
}

std::size_t ModelArch::conv_output_size() const {
  const auto* c = std::get_if<SmallCnnArch>(&kind);
  if (!c) throw ConfigError("conv_output_size on an mlp");
  const auto s = cnn_output(*c);
  return s.channels * s.height * s.width;
}

std::size_t ModelArch::penultimate_size() const {
  if (const auto* m = std::get_if<MlpArch>(&kind)) {
    return m->layer_dims[m->layer_dims.size() - 2];
  }
  const auto& c = std::get<SmallCnnArch>(kind);
  return c.fc_dims.empty() ? conv_output_size() : c.fc_dims.back();
}

void to_json(nlohmann::json& j, const ModelArch& arch) {
  if (const auto* m = std::get_if<MlpArch>(&arch.kind)) {
    j = {{"kind", "mlp"}, {"layers", m->layer_dims}, {"num_classes", arch.num_classes}};
  } else {
    const auto& c = std::get<SmallCnnArch>(arch.kind);
    j = {{"kind", "small_cnn"},
         {"input", {c.in_channels, c.height, c.width}},
         {"channels", c.channels},
         {"kernel", c.kernel},
         {"fc", c.fc_dims},
         {"num_classes", arch.num_classes}};
  }
}

void from_json(const nlohmann::json& j, ModelArch& arch) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "mlp") {
      arch.kind = MlpArch{j.at("layers").get<std::vector<std::size_t>>()};
      arch.num_classes = j.contains("num_classes") ? j.at("num_classes").get<std::size_t>()
                                                   : std::get<MlpArch>(arch.kind).layer_dims.back();
    } else if (kind == "small_cnn") {
      SmallCnnArch c;
      if (j.contains("input")) {
        const auto in = j.at("input").get<std::vector<std::size_t>>();
        if (in.size() != 3) throw ConfigError("small_cnn input must be [channels, height, width]");
        c.in_channels = in[0];
        c.height = in[1];
        c.width = in[2];
      }
      if (j.contains("channels")) c.channels = j.at("channels").get<std::vector<std::size_t>>();
      if (j.contains("kernel")) c.kernel = j.at("kernel").get<std::size_t>();
      if (j.contains("fc")) c.fc_dims = j.at("fc").get<std::vector<std::size_t>>();
      arch.kind = c;
      arch.num_classes = j.at("num_classes").get<std::size_t>();
    } else {
      throw ConfigError("unknown arch kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad arch description: ") + e.what());
  }
  arch.validate();
}

void ParameterStore::add(std::string name, Tensor tensor) {
  if (contains(name)) throw StateError("parameter '" + name + "' already exists");
  entries_.push_back({std::move(name), std::move(tensor)});
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

const Tensor& ParameterStore::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  for (const auto& e : quantizer_params_)
    if (e.name == name) return e.tensor;
  throw StateError("no parameter named '" + std::string(name) + "'");
}

Tensor& ParameterStore::get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).get(name));
}

std::vector<NamedTensor> ParameterStore::list_parameters(ParameterView view) const {
  std::vector<NamedTensor> out = entries_;
  if (view == ParameterView::Quantized) out.insert(out.end(), quantizer_params_.begin(), quantizer_params_.end());
  return out;
}

void ParameterStore::attach_quantizer(const QuantizerSpec& spec) {
  if (quantizer_) throw StateError("quantizer " + quantizer_->to_string() + " already attached");
  spec.validate();
  quantizer_ = spec;
  for (const auto& p : spec.learnables) {
    quantizer_params_.push_back({kQuantParamPrefix + p.name, Tensor::scalar(p.initial, true)});
  }
}

void ParameterStore::detach_quantizer() {
  quantizer_.reset();
  quantizer_params_.clear();
}

const Tensor* ParameterStore::clip_param() const {
  for (const auto& e : quantizer_params_)
    if (e.name == std::string(kQuantParamPrefix) + "clip") return &e.tensor;
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
  for (auto& e : quantizer_params_) e.tensor.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore copy;
  for (const auto& e : entries_) copy.entries_.push_back({e.name, e.tensor.clone(e.tensor.requires_grad())});
  copy.quantizer_ = quantizer_;
  for (const auto& e : quantizer_params_) {
    copy.quantizer_params_.push_back({e.name, e.tensor.clone(e.tensor.requires_grad())});
  }
  return copy;
}

std::vector<NamedTensor> list_parameters(const ParameterStore& store, ParameterView view) {
  return store.list_parameters(view);
}

void attach_quantizer(ParameterStore& store, const QuantizerSpec& spec) { store.attach_quantizer(spec); }

ParameterStore init_model(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ParameterStore store;
  auto add_layer = [&](const std::string& prefix, Shape weight_shape, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t out = weight_shape[0];
    std::vector<double> w(shape_numel(weight_shape));
    for (auto& v : w) v = dist(rng);
    store.add(prefix + ".w", Tensor::from(std::move(weight_shape), std::move(w), true));
    store.add(prefix + ".b", Tensor::zeros({out}, true));
  };

  if (const auto* m = std::get_if<MlpArch>(&arch.kind)) {
    for (std::size_t i = 0; i + 1 < m->layer_dims.size(); ++i) {
      add_layer("fc" + std::to_string(i), {m->layer_dims[i + 1], m->layer_dims[i]}, m->layer_dims[i]);
    }
  } else {
    const auto& c = std::get<SmallCnnArch>(arch.kind);
    std::size_t in_c = c.in_channels;
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
      add_layer("conv" + std::to_string(i), {c.channels[i], in_c, c.kernel, c.kernel}, in_c * c.kernel * c.kernel);
      in_c = c.channels[i];
    }
    std::size_t width = arch.conv_output_size();
    std::size_t idx = 0;
    for (std::size_t d : c.fc_dims) {
      add_layer("fc" + std::to_string(idx++), {d, width}, width);
      width = d;
    }
    add_layer("fc" + std::to_string(idx), {arch.num_classes, width}, width);
  }
  return store;
}

Activations forward_activations(const ParameterStore& store, const ModelArch& arch, const Tensor& x,
                                const QuantizerSpec* spec) {
  if (x.rank() < 2 || x.numel() / x.dim(0) != arch.input_size()) {
    throw DimensionError("input " + shape_str(x.shape()) + " does not match model input size " +
                         std::to_string(arch.input_size()));
  }
  const Tensor* clip = nullptr;
  Tensor spec_clip;
  if (spec && !spec->learnables.empty()) {
    clip = store.clip_param();
    if (!clip || !store.quantizer() || store.quantizer()->kind != spec->kind) {
      spec_clip = Tensor::scalar(spec->learnables.front().initial);
      clip = &spec_clip;
    }
  }
  auto weight = [&](const std::string& name) {
    const Tensor& w = store.get(name);
    return spec ? quantize_ste(w, *spec, clip) : w;
  };

  Tensor h;
  std::size_t fc_count = 0;
  if (const auto* m = std::get_if<MlpArch>(&arch.kind)) {
    h = flatten(x);
    fc_count = m->layer_dims.size() - 1;
  } else {
    const auto& c = std::get<SmallCnnArch>(arch.kind);
    h = x.rank() == 4 ? x : reshape(x, {x.dim(0), c.in_channels, c.height, c.width});
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
      const std::string p = "conv" + std::to_string(i);
      h = maxpool2d(relu(add_bias(conv2d(h, weight(p + ".w")), store.get(p + ".b"))), 2);
    }
    h = flatten(h);
    fc_count = c.fc_dims.size() + 1;
  }
  for (std::size_t i = 0; i + 1 < fc_count; ++i) {
    const std::string p = "fc" + std::to_string(i);
    h = relu(linear(h, weight(p + ".w"), store.get(p + ".b")));
  }
  const std::string last = "fc" + std::to_string(fc_count - 1);
  Tensor logits = linear(h, weight(last + ".w"), store.get(last + ".b"));
  return {logits, h};
}

Tensor forward(const ParameterStore& store, const ModelArch& arch, const Tensor& x, ForwardMode mode) {
  if (mode == ForwardMode::Plain) return forward_activations(store, arch, x, nullptr).logits;
  if (!store.quantizer()) throw StateError("quantized forward without an attached quantizer");
  return forward_activations(store, arch, x, &*store.quantizer()).logits;
}

Tensor forward_with(const ParameterStore& store, const ModelArch& arch, const Tensor& x, const QuantizerSpec& spec) {
  spec.validate();
  return forward_activations(store, arch, x, &spec).logits;
}

}  // namespace qbf
