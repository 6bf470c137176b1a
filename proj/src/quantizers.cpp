#include "qbf/quantizers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qbf/error.hpp"

namespace qbf {

std::string kind_name(QuantizerKind kind) {
  switch (kind) {
    case QuantizerKind::UniformSymmetric:
      return "uniform";
    case QuantizerKind::DoReFa:
      return "dorefa";
    case QuantizerKind::Ternary:
      return "ternary";
  }
  return "unknown";
}

void QuantizerSpec::validate() const {
  if (kind == QuantizerKind::UniformSymmetric && (bits < 2 || bits > 16)) {
    throw ConfigError("uniform quantizer needs bits in [2, 16], got " + std::to_string(bits));
  }
  if (kind == QuantizerKind::DoReFa && (bits < 1 || bits > 16)) {
    throw ConfigError("dorefa quantizer needs bits in [1, 16], got " + std::to_string(bits));
  }
  for (const auto& p : learnables) {
    if (kind != QuantizerKind::UniformSymmetric || p.name != "clip") {
      throw ConfigError("quantizer " + kind_name(kind) + " has no learnable parameter '" + p.name + "'");
    }
  }
  if (learnables.size() > 1) throw ConfigError("learnable '" + learnables[1].name + "' declared twice");
}

std::string QuantizerSpec::to_string() const {
  std::ostringstream os;
  os << kind_name(kind);
  if (kind != QuantizerKind::Ternary) os << ':' << bits;
  for (const auto& p : learnables) os << ':' << p.name << '=' << p.initial;
  return os.str();
}

QuantizerSpec QuantizerSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.empty()) throw ConfigError("empty quantizer spec");

  QuantizerSpec spec;
  std::size_t next = 1;
  if (parts[0] == "uniform") {
    spec.kind = QuantizerKind::UniformSymmetric;
  } else if (parts[0] == "dorefa") {
    spec.kind = QuantizerKind::DoReFa;
  } else if (parts[0] == "ternary") {
    spec.kind = QuantizerKind::Ternary;
    spec.bits = 2;
  } else {
    throw ConfigError("unknown quantizer kind '" + parts[0] + "' in '" + text + "'");
  }
  if (spec.kind != QuantizerKind::Ternary) {
    if (parts.size() < 2) throw ConfigError("quantizer '" + text + "' needs a bit width, e.g. uniform:8");
    try {
      std::size_t used = 0;
      spec.bits = std::stoi(parts[1], &used);
      if (used != parts[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("bad bit width '" + parts[1] + "' in quantizer '" + text + "'");
    }
    next = 2;
  }
  for (; next < parts.size(); ++next) {
    const auto eq = parts[next].find('=');
    if (eq == std::string::npos) throw ConfigError("expected name=value in quantizer '" + text + "'");
    LearnableParam p;
    p.name = parts[next].substr(0, eq);
    try {
      p.initial = std::stod(parts[next].substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad learnable value in quantizer '" + text + "'");
    }
    spec.learnables.push_back(p);
  }
  spec.validate();
  return spec;
}

int uniform_levels(int bits) { return (1 << (bits - 1)) - 1; }

namespace {

double max_abs(std::span<const double> w) {
  double m = 0.0;
  for (double v : w) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace

std::vector<double> uniform_symmetric_quantize(std::span<const double> w, int bits, std::optional<double> clip) {
  if (bits < 2) throw ConfigError("uniform quantizer needs bits >= 2, got " + std::to_string(bits));
  std::vector<double> out(w.size(), 0.0);
  const double range = clip ? std::fabs(*clip) * max_abs(w) : max_abs(w);
  if (range == 0.0) return out;
  const double levels = uniform_levels(bits);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double k = std::clamp(std::round(w[i] / range * levels), -levels, levels);
    out[i] = k / levels * range;
  }
  return out;
}

std::vector<double> dorefa_weight_quantize(std::span<const double> w, int bits) {
  if (bits < 1) throw ConfigError("dorefa quantizer needs bits >= 1, got " + std::to_string(bits));
  std::vector<double> t(w.size());
  double m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    t[i] = std::tanh(w[i]);
    m = std::max(m, std::fabs(t[i]));
  }
  std::vector<double> out(w.size(), 0.0);
  if (m == 0.0) return out;
  const double steps = static_cast<double>((1ULL << bits) - 1);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double n = t[i] / (2.0 * m) + 0.5;
    const double q = std::round(n * steps) / steps;
    out[i] = 2.0 * q - 1.0;
  }
  return out;
}

std::vector<double> ternary_quantize(std::span<const double> w) {
  std::vector<double> out(w.size(), 0.0);
  if (w.empty()) return out;
  double abs_sum = 0.0;
  for (double v : w) abs_sum += std::fabs(v);
  const double delta = 0.7 * (abs_sum / static_cast<double>(w.size()));

  double anchor = 0.0, shifted = 0.0;
  std::size_t selected = 0;
  for (double v : w) {
    const double a = std::fabs(v);
    if (a <= delta) continue;
    if (selected == 0) anchor = a;
    shifted += a - anchor;
    ++selected;
  }
  if (selected == 0) return out;
  const double alpha = anchor + shifted / static_cast<double>(selected);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (std::fabs(w[i]) > delta) out[i] = w[i] > 0.0 ? alpha : -alpha;
  }
  return out;
}

std::vector<double> quantize_values(std::span<const double> w, const QuantizerSpec& spec, std::optional<double> clip) {
  switch (spec.kind) {
    case QuantizerKind::UniformSymmetric:
      return uniform_symmetric_quantize(w, spec.bits, clip);
    case QuantizerKind::DoReFa:
      return dorefa_weight_quantize(w, spec.bits);
    case QuantizerKind::Ternary:
      return ternary_quantize(w);
  }
  throw ConfigError("unknown quantizer kind");
}

namespace {

// Elements the uniform grid clamped; only possible with an explicit clip.
std::vector<bool> clamp_mask(std::span<const double> w, const QuantizerSpec& spec, std::optional<double> clip) {
  std::vector<bool> mask(w.size(), false);
  if (spec.kind != QuantizerKind::UniformSymmetric || !clip) return mask;
  const double range = std::fabs(*clip) * max_abs(w);
  if (range == 0.0) return mask;
  const double levels = uniform_levels(spec.bits);
  for (std::size_t i = 0; i < w.size(); ++i) mask[i] = std::fabs(std::round(w[i] / range * levels)) > levels;
  return mask;
}

}  // namespace

std::vector<double> ste_backward(std::span<const double> upstream, std::span<const double> w,
                                 const QuantizerSpec& spec, std::optional<double> clip) {
  if (upstream.size() != w.size()) {
    throw DimensionError("ste_backward: gradient has " + std::to_string(upstream.size()) + " elements, weight has " +
                         std::to_string(w.size()));
  }
  std::vector<double> out(upstream.begin(), upstream.end());
  const auto mask = clamp_mask(w, spec, clip);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = 0.0;
  return out;
}

Tensor quantize_ste(const Tensor& w, const QuantizerSpec& spec, const Tensor* clip) {
  std::optional<double> clip_value;
  std::vector<Tensor> parents{w};
  if (clip) {
    if (spec.kind != QuantizerKind::UniformSymmetric) throw StateError("clip given to " + kind_name(spec.kind));
    clip_value = clip->item();
    parents.push_back(*clip);
  }
  auto out = quantize_values(w.data(), spec, clip_value);
  return make_result(w.shape(), std::move(out), "quantize:" + spec.to_string(), std::move(parents),
                     [spec, clip_value](detail::Node& self) {
                       detail::Node& wn = *self.parents[0];
                       if (wn.requires_grad) {
                         wn.ensure_grad();
                         auto g = ste_backward(self.grad, wn.data, spec, clip_value);
                         for (std::size_t i = 0; i < g.size(); ++i) wn.grad[i] += g[i];
                       }
                       if (self.parents.size() > 1 && self.parents[1]->requires_grad) {
                         detail::Node& cn = *self.parents[1];
                         cn.ensure_grad();
                         const auto mask = clamp_mask(wn.data, spec, clip_value);
                         const double dir = *clip_value < 0.0 ? -1.0 : 1.0;
                         double acc = 0.0;
                         for (std::size_t i = 0; i < mask.size(); ++i)
                           if (mask[i]) acc += self.grad[i] * (wn.data[i] > 0.0 ? 1.0 : -1.0);
                         cn.grad[0] += dir * max_abs(wn.data) * acc;
                       }
                     });
}

}  // namespace qbf
