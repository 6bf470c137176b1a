#include "qbf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qbf/error.hpp"

namespace qbf {

namespace {

using detail::Node;

// Gradient buffer of parent i, or nullptr if it does not take gradients.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    const double* dC = self.grad.data();
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    if (double* dA = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
    }
    if (double* dB = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * dC[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return make_result({c, r}, std::move(out), "transpose", {a}, [r, c](Node& self) {
    if (double* da = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_bias: cannot add " + shape_str(bias.shape()) + " to " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), f = x.dim(1), inner = x.numel() / (n * f);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const double b = bias[c];
      double* row = out.data() + (i * f + c) * inner;
      for (std::size_t j = 0; j < inner; ++j) row[j] += b;
    }
  return make_result(x.shape(), std::move(out), "add_bias", {x, bias}, [n, f, inner](Node& self) {
    const double* g = self.grad.data();
    if (double* dx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += g[i];
    }
    if (double* db = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < f; ++c) {
          const double* row = g + (i * f + c) * inner;
          double acc = 0.0;
          for (std::size_t j = 0; j < inner; ++j) acc += row[j];
          db[c] += acc;
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in || bias.rank() != 1 || bias.dim(0) != out_f) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()) +
                         " bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * out_f);
  const double* X = x.data().data();
  const double* W = weight.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_f; ++o) {
      double acc = 0.0;
      const double* xr = X + i * in;
      const double* wr = W + o * in;
      for (std::size_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
      out[i * out_f + o] = acc + bias[o];
    }
  return make_result({n, out_f}, std::move(out), "linear", {x, weight, bias}, [n, in, out_f](Node& self) {
    const double* dY = self.grad.data();
    const double* X = self.parents[0]->data.data();
    const double* W = self.parents[1]->data.data();
    if (double* dX = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_f; ++o) {
          const double g = dY[i * out_f + o];
          const double* wr = W + o * in;
          double* dxr = dX + i * in;
          for (std::size_t p = 0; p < in; ++p) dxr[p] += g * wr[p];
        }
    }
    if (double* dW = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_f; ++o) {
          const double g = dY[i * out_f + o];
          const double* xr = X + i * in;
          double* dwr = dW + o * in;
          for (std::size_t p = 0; p < in; ++p) dwr[p] += g * xr[p];
        }
    }
    if (double* db = parent_grad(self, 2)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_f; ++o) db[o] += dY[i * out_f + o];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* d = parent_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (double* da = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * B[i];
    if (double* db = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += self.grad[i] * A[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result(a.shape(), std::move(out), "scale", {a}, [factor](Node& self) {
    if (double* da = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * factor;
  });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({}, {acc}, "sum", {a}, [](Node& self) {
    if (double* da = parent_grad(self, 0)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) da[i] += g;
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(out), "relu", {x}, [](Node& self) {
    const auto& X = self.parents[0]->data;
    if (double* dx = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (X[i] > 0.0) dx[i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    if (double* dx = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("flatten of a scalar");
  const std::size_t n = x.dim(0);
  return reshape(x, {n, n == 0 ? 0 : x.numel() / n});
}

Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad) {
  if (input.size() != 4 || weight.size() != 4) {
    throw DimensionError("conv2d: expected 4-d input and weight, got " + shape_str(input) + " and " +
                         shape_str(weight));
  }
  if (input[1] != weight[1]) {
    throw DimensionError("conv2d: channel mismatch between input " + shape_str(input) + " and weight " +
                         shape_str(weight));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  Conv2dGeometry g{input[0], input[1], input[2], input[3], weight[0], weight[2], weight[3], stride, pad, 0, 0};
  const std::size_t ph = g.height + 2 * pad, pw = g.width + 2 * pad;
  if (g.kernel_h > ph || g.kernel_w > pw) {
    throw ConfigError("conv2d: kernel " + shape_str(weight) + " larger than padded input " + shape_str(input));
  }
  if ((ph - g.kernel_h) % stride != 0 || (pw - g.kernel_w) % stride != 0) {
    throw ConfigError("conv2d: stride " + std::to_string(stride) + " does not tile input " + shape_str(input));
  }
  g.out_h = (ph - g.kernel_h) / stride + 1;
  g.out_w = (pw - g.kernel_w) / stride + 1;
  return g;
}

namespace {

// Column matrix [C*kh*kw x out_h*out_w] for one sample.
void im2col(const double* x, const Conv2dGeometry& g, double* cols) {
  const std::size_t spatial = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* dst = cols + row * spatial;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            dst[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const Conv2dGeometry& g, double* dx) {
  const std::size_t spatial = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double* src = cols + row * spatial;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dx[(c * g.height + iy) * g.width + ix] += src[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const Conv2dGeometry g = conv2d_geometry(x.shape(), w.shape(), stride, pad);
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t spatial = g.out_h * g.out_w;
  const std::size_t in_sample = g.in_channels * g.height * g.width;
  const std::size_t out_sample = g.filters * spatial;

  const bool keep_cols = grad_enabled() && (x.requires_grad() || w.requires_grad());
  std::vector<double> cols_all(keep_cols ? g.batch * patch * spatial : patch * spatial);
  std::vector<double> out(g.batch * out_sample, 0.0);
  const double* X = x.data().data();
  const double* W = w.data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* cols = cols_all.data() + (keep_cols ? n * patch * spatial : 0);
    im2col(X + n * in_sample, g, cols);
    double* o = out.data() + n * out_sample;
    for (std::size_t f = 0; f < g.filters; ++f) {
      double* orow = o + f * spatial;
      for (std::size_t p = 0; p < patch; ++p) {
        const double wv = W[f * patch + p];
        const double* crow = cols + p * spatial;
        for (std::size_t j = 0; j < spatial; ++j) orow[j] += wv * crow[j];
      }
    }
  }
  if (!keep_cols) cols_all.clear();
  return make_result(
      {g.batch, g.filters, g.out_h, g.out_w}, std::move(out), "conv2d", {x, w},
      [g, patch, spatial, in_sample, out_sample, cols_all = std::move(cols_all)](Node& self) {
        const double* dY = self.grad.data();
        const double* W = self.parents[1]->data.data();
        double* dX = parent_grad(self, 0);
        double* dW = parent_grad(self, 1);
        std::vector<double> dcols(dX ? patch * spatial : 0);
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* cols = cols_all.data() + n * patch * spatial;
          const double* dy = dY + n * out_sample;
          if (dW) {
            for (std::size_t f = 0; f < g.filters; ++f) {
              const double* dyr = dy + f * spatial;
              for (std::size_t p = 0; p < patch; ++p) {
                const double* crow = cols + p * spatial;
                double acc = 0.0;
                for (std::size_t j = 0; j < spatial; ++j) acc += dyr[j] * crow[j];
                dW[f * patch + p] += acc;
              }
            }
          }
          if (dX) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            for (std::size_t f = 0; f < g.filters; ++f) {
              const double* dyr = dy + f * spatial;
              for (std::size_t p = 0; p < patch; ++p) {
                const double wv = W[f * patch + p];
                double* drow = dcols.data() + p * spatial;
                for (std::size_t j = 0; j < spatial; ++j) drow[j] += wv * dyr[j];
              }
            }
            col2im_add(dcols.data(), g, dX + n * in_sample);
          }
        }
      });
}

Tensor conv2d_direct(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const Conv2dGeometry g = conv2d_geometry(x.shape(), w.shape(), stride, pad);
  std::vector<double> out(g.batch * g.filters * g.out_h * g.out_w);
  const auto H = static_cast<std::ptrdiff_t>(g.height), Wd = static_cast<std::ptrdiff_t>(g.width);
  std::size_t idx = 0;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                const double xv = (iy >= 0 && ix >= 0 && iy < H && ix < Wd)
                                      ? x[((n * g.in_channels + c) * g.height + iy) * g.width + ix]
                                      : 0.0;
                acc += w[((f * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] * xv;
              }
          out[idx++] = acc;
        }
  return Tensor::from({g.batch, g.filters, g.out_h, g.out_w}, std::move(out));
}

Tensor maxpool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "maxpool2d");
  if (window == 0) throw ConfigError("maxpool2d: window must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  if (oh == 0 || ow == 0) throw DimensionError("maxpool2d: window larger than input " + shape_str(x.shape()));
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const double* X = x.data().data();
  std::size_t idx = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
        std::size_t best = plane * h * w + (oy * window) * w + ox * window;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t at = plane * h * w + (oy * window + ky) * w + ox * window + kx;
            if (X[at] > X[best]) best = at;
          }
        out[idx] = X[best];
        argmax[idx] = best;
      }
  return make_result({n, c, oh, ow}, std::move(out), "maxpool2d", {x}, [argmax = std::move(argmax)](Node& self) {
    if (double* dx = parent_grad(self, 0))
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
  });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return Tensor::from({n, c}, std::move(out));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  if (n == 0 || c == 0) throw DimensionError("softmax_cross_entropy: empty logits " + shape_str(logits.shape()));
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("softmax_cross_entropy: class " + std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += m + std::log(z) - row[targets[i]];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result({}, {total / static_cast<double>(n)}, "softmax_cross_entropy", {logits},
                     [n, c, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       if (double* dl = parent_grad(self, 0)) {
                         const double g = self.grad[0] / static_cast<double>(n);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j) {
                             const double onehot = static_cast<std::size_t>(tgt[i]) == j ? 1.0 : 0.0;
                             dl[i * c + j] += g * (probs[i * c + j] - onehot);
                           }
                       }
                     });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (c == 0) throw DimensionError("argmax_rows: no classes in " + shape_str(logits.shape()));
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[i * c + j] > logits[i * c + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace qbf
