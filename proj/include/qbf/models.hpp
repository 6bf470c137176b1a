#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "qbf/quantizers.hpp"
#include "qbf/tensor.hpp"

namespace qbf {

// Fully connected ReLU network. layer_dims runs from input width to class count.
struct MlpArch {
  std::vector<std::size_t> layer_dims;
};

// conv(k x k) -> relu -> 2x2 maxpool per entry of channels, then hidden fc
// layers with relu, then a final fc to the class count. Valid padding, stride 1.
struct SmallCnnArch {
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::vector<std::size_t> channels{16, 32};
  std::size_t kernel = 5;
  std::vector<std::size_t> fc_dims;
};

struct ModelArch {
  std::variant<MlpArch, SmallCnnArch> kind;
  std::size_t num_classes = 10;

  static ModelArch mlp(std::vector<std::size_t> layer_dims);
  static ModelArch small_cnn(std::size_t in_channels, std::size_t height, std::size_t width, std::size_t num_classes);

  void validate() const;
  // Elements per sample the first layer consumes.
  std::size_t input_size() const;
  // Width of the activation feeding the final classifier layer.
  std::size_t penultimate_size() const;
  // Flattened size after the conv stack (SmallCNN only).
  std::size_t conv_output_size() const;
};

void to_json(nlohmann::json& j, const ModelArch& arch);
void from_json(const nlohmann::json& j, ModelArch& arch);

enum class ForwardMode { Plain, Quantized };
enum class ParameterView { Plain, Quantized };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// The one master parameter table. Plain and quantized forward passes read the
// same tensors; the quantized view additionally lists any learnable
// quantizer parameters, so the plain listing is always a prefix of it.
class ParameterStore {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::vector<NamedTensor> list_parameters(ParameterView view = ParameterView::Plain) const;
  std::size_t size() const { return entries_.size(); }

  void attach_quantizer(const QuantizerSpec& spec);
  void detach_quantizer();
  const std::optional<QuantizerSpec>& quantizer() const { return quantizer_; }
  const std::vector<NamedTensor>& quantizer_params() const { return quantizer_params_; }
  // Learnable clip tensor when the attached spec declares one.
  const Tensor* clip_param() const;

  void zero_grad();
  // Deep copy; the result shares no storage with this store.
  ParameterStore clone() const;

 private:
  std::vector<NamedTensor> entries_;
  std::optional<QuantizerSpec> quantizer_;
  std::vector<NamedTensor> quantizer_params_;
};

inline constexpr const char* kQuantParamPrefix = "quant.";

// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
ParameterStore init_model(const ModelArch& arch, std::uint64_t seed);

std::vector<NamedTensor> list_parameters(const ParameterStore& store, ParameterView view = ParameterView::Plain);
void attach_quantizer(ParameterStore& store, const QuantizerSpec& spec);

struct Activations {
  Tensor logits;
  Tensor penultimate;
};

// spec == nullptr runs the plain path. Otherwise every weight tensor goes
// through quantize_ste(spec); biases are used as stored.
Activations forward_activations(const ParameterStore& store, const ModelArch& arch, const Tensor& x,
                                const QuantizerSpec* spec);

Tensor forward(const ParameterStore& store, const ModelArch& arch, const Tensor& x, ForwardMode mode);

// Quantized forward with a spec other than the attached one (cross-trigger
// evaluation). A learnable clip comes from the store when one is attached,
// otherwise from the spec's initial value.
Tensor forward_with(const ParameterStore& store, const ModelArch& arch, const Tensor& x, const QuantizerSpec& spec);

}  // namespace qbf
