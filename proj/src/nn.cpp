#include "specnet/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <random>

namespace specnet {

std::string to_string(Precision p) { return p == Precision::single ? "single" : "double"; }

Precision parse_precision(const std::string& name) {
  if (name == "single" || name == "float" || name == "f32") return Precision::single;
  if (name == "double" || name == "f64") return Precision::double_;
  throw std::invalid_argument("unknown precision '" + name + "' (expected single or double)");
}

namespace nn {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

std::string shape_str(std::size_t b, std::size_t c, std::size_t l) {
  return "(" + std::to_string(b) + ", " + std::to_string(c) + ", " + std::to_string(l) + ")";
}

template <typename T>
void normal_fill(std::span<T> v, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

// col[(c*K + k), i] = x[c, i + k - pad], zero outside [0, L).
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t length, std::size_t kernel, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto L = static_cast<std::ptrdiff_t>(length);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * length;
    for (std::size_t k = 0; k < kernel; ++k) {
      T* row = col + (c * kernel + k) * length;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - shift);
      for (std::ptrdiff_t i = 0; i < lo; ++i) row[i] = T(0);
      for (std::ptrdiff_t i = lo; i < hi; ++i) row[i] = xc[i + shift];
      for (std::ptrdiff_t i = std::max(hi, lo); i < L; ++i) row[i] = T(0);
    }
  }
}

// Adjoint of im2col: x[c, i + k - pad] += col[(c*K + k), i].
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t length, std::size_t kernel, T* x) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto L = static_cast<std::ptrdiff_t>(length);
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = x + c * length;
    for (std::size_t k = 0; k < kernel; ++k) {
      const T* row = col + (c * kernel + k) * length;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - shift);
      for (std::ptrdiff_t i = lo; i < hi; ++i) xc[i + shift] += row[i];
    }
  }
}

}  // namespace

template <typename T>
void require_finite(std::span<const T> v, const char* where) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string("non-finite value in ") + where + " at index " + std::to_string(i));
    }
  }
}

template <typename T>
void Parameter<T>::add_grad(std::span<const T> g) {
  if (g.size() != grad.size()) throw std::invalid_argument("parameter gradient size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

// ---------------------------------------------------------------------------
// Conv1d

template <typename T>
Conv1dLayer<T>::Conv1dLayer(std::size_t in, std::size_t out, std::size_t kernel, bool with_bias)
    : in_channels(in),
      out_channels(out),
      kernel_size(kernel),
      has_bias(with_bias),
      weight(out * in * kernel),
      bias(with_bias ? out : 0) {
  if (in == 0 || out == 0) throw std::invalid_argument("conv1d: channel counts must be positive");
  if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be a positive odd integer");
}

template <typename T>
void Conv1dLayer<T>::init_kaiming(Rng& rng) {
  normal_fill<T>(weight.value, std::sqrt(2.0 / static_cast<double>(in_channels * kernel_size)), rng);
  std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> conv1d_forward(const Conv1dLayer<T>& layer, const Tensor<T>& x) {
  if (x.channels != layer.in_channels) {
    throw std::invalid_argument("conv1d: input has " + std::to_string(x.channels) + " channels, layer expects " +
                                std::to_string(layer.in_channels));
  }
  const std::size_t L = x.length;
  const std::size_t CK = layer.in_channels * layer.kernel_size;
  Tensor<T> out(x.batch, layer.out_channels, L);
  AlignedVector<T> col(CK * L);
  ConstMapRM<T> W(layer.weight.value.data(), layer.out_channels, CK);
  for (std::size_t b = 0; b < x.batch; ++b) {
    im2col(x.item(b), layer.in_channels, L, layer.kernel_size, col.data());
    MapRM<T> Y(out.item(b), layer.out_channels, L);
    Y.noalias() = W * ConstMapRM<T>(col.data(), CK, L);
    if (layer.has_bias) {
      for (std::size_t o = 0; o < layer.out_channels; ++o) Y.row(o).array() += layer.bias.value[o];
    }
  }
  require_finite<T>(out.values, "conv1d forward");
  return out;
}

template <typename T>
Conv1dGrads<T> conv1d_backward(const Conv1dLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.channels != layer.in_channels || grad_out.channels != layer.out_channels || grad_out.batch != x.batch ||
      grad_out.length != x.length) {
    throw std::invalid_argument("conv1d backward: shape mismatch, x " + shape_str(x.batch, x.channels, x.length) +
                                " grad_out " + shape_str(grad_out.batch, grad_out.channels, grad_out.length));
  }
  const std::size_t L = x.length;
  const std::size_t O = layer.out_channels;
  const std::size_t CK = layer.in_channels * layer.kernel_size;
  Conv1dGrads<T> g{Tensor<T>(x.batch, x.channels, L), AlignedVector<T>(O * CK, T(0)),
                   AlignedVector<T>(layer.has_bias ? O : 0, T(0))};
  AlignedVector<T> col(CK * L);
  AlignedVector<T> grad_col(CK * L);
  ConstMapRM<T> W(layer.weight.value.data(), O, CK);
  MapRM<T> GW(g.grad_w.data(), O, CK);
  for (std::size_t b = 0; b < x.batch; ++b) {
    ConstMapRM<T> G(grad_out.item(b), O, L);
    im2col(x.item(b), layer.in_channels, L, layer.kernel_size, col.data());
    GW.noalias() += G * ConstMapRM<T>(col.data(), CK, L).transpose();
    MapRM<T>(grad_col.data(), CK, L).noalias() = W.transpose() * G;
    col2im_add(grad_col.data(), layer.in_channels, L, layer.kernel_size, g.grad_x.item(b));
    if (layer.has_bias) {
      for (std::size_t o = 0; o < O; ++o) g.grad_b[o] += G.row(o).sum();
    }
  }
  require_finite<T>(g.grad_x.values, "conv1d backward");
  require_finite<T>(g.grad_w, "conv1d weight gradient");
  return g;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::size_t c)
    : channels(c), gamma(c), beta(c), running_mean(c, T(0)), running_var(c, T(1)) {
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
}

template <typename T>
Tensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const Tensor<T>& x, Mode mode, BatchNormCache<T>* cache) {
  if (mode == Mode::eval) return batchnorm_infer(layer, x);
  if (x.channels != layer.channels) throw std::invalid_argument("batchnorm: channel mismatch");
  const std::size_t n = x.batch * x.length;
  if (x.batch < 2 || n < 2) throw std::invalid_argument("degenerate batch statistics");
  Tensor<T> out(x.batch, x.channels, x.length);
  Tensor<T> x_hat(x.batch, x.channels, x.length);
  std::vector<T> inv_std(x.channels);
  for (std::size_t c = 0; c < x.channels; ++c) {
    // Two-pass statistics in double regardless of T.
    double mean = 0.0;
    for (std::size_t b = 0; b < x.batch; ++b) {
      const T* row = x.item(b) + c * x.length;
      for (std::size_t i = 0; i < x.length; ++i) mean += row[i];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t b = 0; b < x.batch; ++b) {
      const T* row = x.item(b) + c * x.length;
      for (std::size_t i = 0; i < x.length; ++i) {
        const double d = row[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(n);
    const double istd = 1.0 / std::sqrt(var + layer.eps);
    inv_std[c] = static_cast<T>(istd);
    const T g = layer.gamma.value[c];
    const T be = layer.beta.value[c];
    for (std::size_t b = 0; b < x.batch; ++b) {
      const T* row = x.item(b) + c * x.length;
      T* xh = x_hat.item(b) + c * x.length;
      T* o = out.item(b) + c * x.length;
      for (std::size_t i = 0; i < x.length; ++i) {
        xh[i] = static_cast<T>((row[i] - mean) * istd);
        o[i] = g * xh[i] + be;
      }
    }
    const double m = layer.momentum;
    const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
    layer.running_mean[c] = static_cast<T>((1.0 - m) * layer.running_mean[c] + m * mean);
    layer.running_var[c] = static_cast<T>((1.0 - m) * layer.running_var[c] + m * unbiased);
  }
  require_finite<T>(out.values, "batchnorm forward");
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_infer(const BatchNormLayer<T>& layer, const Tensor<T>& x) {
  if (x.channels != layer.channels) throw std::invalid_argument("batchnorm: channel mismatch");
  Tensor<T> out(x.batch, x.channels, x.length);
  for (std::size_t c = 0; c < x.channels; ++c) {
    const T scale = static_cast<T>(layer.gamma.value[c] / std::sqrt(double(layer.running_var[c]) + layer.eps));
    const T shift = layer.beta.value[c] - scale * layer.running_mean[c];
    for (std::size_t b = 0; b < x.batch; ++b) {
      const T* row = x.item(b) + c * x.length;
      T* o = out.item(b) + c * x.length;
      for (std::size_t i = 0; i < x.length; ++i) o[i] = scale * row[i] + shift;
    }
  }
  require_finite<T>(out.values, "batchnorm forward");
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& layer, const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_out) {
  const Tensor<T>& xh = cache.x_hat;
  if (!xh.same_shape(grad_out) || cache.inv_std.size() != layer.channels) {
    throw std::invalid_argument("batchnorm backward: shape mismatch");
  }
  const std::size_t n = xh.batch * xh.length;
  BatchNormGrads<T> g{Tensor<T>(xh.batch, xh.channels, xh.length), std::vector<T>(layer.channels, T(0)),
                      std::vector<T>(layer.channels, T(0))};
  for (std::size_t c = 0; c < layer.channels; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t b = 0; b < xh.batch; ++b) {
      const T* go = grad_out.item(b) + c * xh.length;
      const T* xr = xh.item(b) + c * xh.length;
      for (std::size_t i = 0; i < xh.length; ++i) {
        sum_g += go[i];
        sum_gx += double(go[i]) * xr[i];
      }
    }
    g.grad_beta[c] = static_cast<T>(sum_g);
    g.grad_gamma[c] = static_cast<T>(sum_gx);
    const double k = double(layer.gamma.value[c]) * cache.inv_std[c] / static_cast<double>(n);
    const double nd = static_cast<double>(n);
    for (std::size_t b = 0; b < xh.batch; ++b) {
      const T* go = grad_out.item(b) + c * xh.length;
      const T* xr = xh.item(b) + c * xh.length;
      T* gx = g.grad_x.item(b) + c * xh.length;
      for (std::size_t i = 0; i < xh.length; ++i) {
        gx[i] = static_cast<T>(k * (nd * go[i] - sum_g - double(xr[i]) * sum_gx));
      }
    }
  }
  require_finite<T>(g.grad_x.values, "batchnorm backward");
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.values) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (!x.same_shape(grad_out)) throw std::invalid_argument("relu backward: shape mismatch");
  Tensor<T> g(x.batch, x.channels, x.length);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = x.values[i] > T(0) ? grad_out.values[i] : T(0);
  return g;
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
DenseLayer<T>::DenseLayer(std::size_t in, std::size_t out)
    : in_features(in), out_features(out), weight(in * out), bias(out) {
  if (in == 0 || out == 0) throw std::invalid_argument("dense: feature counts must be positive");
}

template <typename T>
void DenseLayer<T>::init_kaiming(Rng& rng) {
  normal_fill<T>(weight.value, std::sqrt(2.0 / static_cast<double>(in_features)), rng);
  std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& x) {
  if (x.item_size() != layer.in_features) {
    throw std::invalid_argument("dense: input has " + std::to_string(x.item_size()) + " features, layer expects " +
                                std::to_string(layer.in_features));
  }
  Tensor<T> out(x.batch, layer.out_features, 1);
  ConstMapRM<T> W(layer.weight.value.data(), layer.out_features, layer.in_features);
  ConstMapRM<T> X(x.values.data(), x.batch, layer.in_features);
  MapRM<T> Y(out.values.data(), x.batch, layer.out_features);
  Y.noalias() = X * W.transpose();
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t o = 0; o < layer.out_features; ++o) Y(b, o) += layer.bias.value[o];
  }
  require_finite<T>(out.values, "dense forward");
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.item_size() != layer.in_features || grad_out.item_size() != layer.out_features || x.batch != grad_out.batch) {
    throw std::invalid_argument("dense backward: shape mismatch");
  }
  DenseGrads<T> g{Tensor<T>(x.batch, x.channels, x.length), AlignedVector<T>(layer.weight.size()),
                  AlignedVector<T>(layer.out_features, T(0))};
  ConstMapRM<T> W(layer.weight.value.data(), layer.out_features, layer.in_features);
  ConstMapRM<T> X(x.values.data(), x.batch, layer.in_features);
  ConstMapRM<T> G(grad_out.values.data(), x.batch, layer.out_features);
  MapRM<T>(g.grad_w.data(), layer.out_features, layer.in_features).noalias() = G.transpose() * X;
  MapRM<T>(g.grad_x.values.data(), x.batch, layer.in_features).noalias() = G * W;
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t o = 0; o < layer.out_features; ++o) g.grad_b[o] += G(b, o);
  }
  require_finite<T>(g.grad_x.values, "dense backward");
  return g;
}

// ---------------------------------------------------------------------------
// Segment pooling

namespace {

struct Segment {
  std::size_t begin;
  std::size_t end;
};

Segment segment(std::size_t j, std::size_t bins, std::size_t length) {
  return {(j * length) / bins, ((j + 1) * length + bins - 1) / bins};
}

}  // namespace

template <typename T>
Tensor<T> segment_pool_forward(const Tensor<T>& x, std::size_t bins) {
  if (bins == 0 || bins > x.length) {
    throw std::invalid_argument("segment pool: bins must be in [1, length]");
  }
  Tensor<T> out(x.batch, x.channels, bins);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      const T* row = x.item(b) + c * x.length;
      for (std::size_t j = 0; j < bins; ++j) {
        const auto s = segment(j, bins, x.length);
        T acc(0);
        for (std::size_t i = s.begin; i < s.end; ++i) acc += row[i];
        out.at(b, c, j) = acc / static_cast<T>(s.end - s.begin);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> segment_pool_backward(const Tensor<T>& grad_out, std::size_t input_length) {
  const std::size_t bins = grad_out.length;
  if (bins == 0 || bins > input_length) throw std::invalid_argument("segment pool backward: bad shape");
  Tensor<T> g(grad_out.batch, grad_out.channels, input_length);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      T* row = g.item(b) + c * input_length;
      for (std::size_t j = 0; j < bins; ++j) {
        const auto s = segment(j, bins, input_length);
        const T share = grad_out.at(b, c, j) / static_cast<T>(s.end - s.begin);
        for (std::size_t i = s.begin; i < s.end; ++i) row[i] += share;
      }
    }
  }
  return g;
}

#define SPECNET_INSTANTIATE(T)                                                                                    \
  template void require_finite<T>(std::span<const T>, const char*);                                              \
  template struct Parameter<T>;                                                                                   \
  template struct Conv1dLayer<T>;                                                                                 \
  template Tensor<T> conv1d_forward<T>(const Conv1dLayer<T>&, const Tensor<T>&);                                 \
  template Conv1dGrads<T> conv1d_backward<T>(const Conv1dLayer<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template struct BatchNormLayer<T>;                                                                              \
  template Tensor<T> batchnorm_forward<T>(BatchNormLayer<T>&, const Tensor<T>&, Mode, BatchNormCache<T>*);       \
  template Tensor<T> batchnorm_infer<T>(const BatchNormLayer<T>&, const Tensor<T>&);                             \
  template BatchNormGrads<T> batchnorm_backward<T>(const BatchNormLayer<T>&, const BatchNormCache<T>&,           \
                                                   const Tensor<T>&);                                             \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                                          \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template struct DenseLayer<T>;                                                                                  \
  template Tensor<T> dense_forward<T>(const DenseLayer<T>&, const Tensor<T>&);                                   \
  template DenseGrads<T> dense_backward<T>(const DenseLayer<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> segment_pool_forward<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> segment_pool_backward<T>(const Tensor<T>&, std::size_t);

SPECNET_INSTANTIATE(float)
SPECNET_INSTANTIATE(double)

#undef SPECNET_INSTANTIATE

}  // namespace nn
}  // namespace specnet
