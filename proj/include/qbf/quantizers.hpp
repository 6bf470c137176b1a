#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qbf/tensor.hpp"

namespace qbf {

enum class QuantizerKind { UniformSymmetric, DoReFa, Ternary };

struct LearnableParam {
  std::string name;
  double initial = 0.0;
  bool operator==(const LearnableParam&) const = default;
};

// One weight-quantization behaviour. bits is ignored for Ternary.
// UniformSymmetric accepts a single learnable named "clip": the clipping range
// becomes |clip| * max|w| of each tensor instead of max|w|, so one scalar
// serves layers of any scale and clip = 1 reproduces the plain mapping.
struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::UniformSymmetric;
  int bits = 8;
  std::vector<LearnableParam> learnables;

  bool operator==(const QuantizerSpec&) const = default;

  void validate() const;
  // Short form such as "uniform:8", "dorefa:4", "ternary", "uniform:8:clip=0.5".
  std::string to_string() const;
  static QuantizerSpec parse(const std::string& text);
};

std::string kind_name(QuantizerKind kind);

// Largest positive level of a symmetric b-bit grid: 2^(b-1) - 1.
int uniform_levels(int bits);

// All three mappings use round-half-away-from-zero.
//
// m = max|w| (or |clip| * max|w|), L = 2^(bits-1)-1, k = clamp(round(w/m*L), -L, L),
// out = (k/L)*m. Writing the scale as k/L*m keeps Q(Q(w)) == Q(w) bit-exact.
std::vector<double> uniform_symmetric_quantize(std::span<const double> w, int bits,
                                               std::optional<double> clip = std::nullopt);

// t = tanh(w), n = t/(2 max|t|) + 1/2, q = round(n(2^b-1))/(2^b-1), out = 2q-1.
std::vector<double> dorefa_weight_quantize(std::span<const double> w, int bits);

// delta = 0.7 mean|w|, alpha = mean of |w_i| above delta, out = alpha sign(w)
// above delta and 0 elsewhere. alpha is accumulated as a shifted mean (first
// selected magnitude plus mean of differences) so equal magnitudes average
// to themselves exactly.
std::vector<double> ternary_quantize(std::span<const double> w);

std::vector<double> quantize_values(std::span<const double> w, const QuantizerSpec& spec,
                                    std::optional<double> clip = std::nullopt);

// Straight-through gradient: upstream unchanged, except zeroed where the
// uniform mapping clamped w outside its grid.
std::vector<double> ste_backward(std::span<const double> upstream, std::span<const double> w,
                                 const QuantizerSpec& spec, std::optional<double> clip = std::nullopt);

// Autodiff node: forward Q(w), backward via ste_backward. When clip is given
// (UniformSymmetric only) it also receives max|w| * sign(w) * upstream summed
// over the clamped elements.
Tensor quantize_ste(const Tensor& w, const QuantizerSpec& spec, const Tensor* clip = nullptr);

}  // namespace qbf
