#pragma once

// Layer set for the spectral networks: same-padded 1D convolution, batch
// normalization, ReLU, fully connected and segment average pooling. Every
// layer has an exact hand-written backward pass. Forward functions never
// modify their inputs; backward functions return gradients instead of
// accumulating them, and the network classes add them into Parameter::grad.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "specnet/aligned.hpp"
#include "specnet/rng.hpp"

namespace specnet {

// Raised when a NaN/Inf appears in a forward or backward pass, a loss or an
// optimizer update.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { single, double_ };

std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

namespace nn {

// Dense (batch, channels, length) array, row major. Fully connected layers
// view each item as channels * length features.
template <typename T>
struct Tensor {
  std::size_t batch{0};
  std::size_t channels{0};
  std::size_t length{0};
  AlignedVector<T> values;

  Tensor() = default;
  Tensor(std::size_t b, std::size_t c, std::size_t l, T fill = T(0))
      : batch(b), channels(c), length(l), values(b * c * l, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t item_size() const { return channels * length; }
  T* item(std::size_t b) { return values.data() + b * item_size(); }
  const T* item(std::size_t b) const { return values.data() + b * item_size(); }
  T& at(std::size_t b, std::size_t c, std::size_t i) { return values[(b * channels + c) * length + i]; }
  T at(std::size_t b, std::size_t c, std::size_t i) const { return values[(b * channels + c) * length + i]; }
  bool same_shape(const Tensor& o) const { return batch == o.batch && channels == o.channels && length == o.length; }
};

// Throws NumericError naming `where` if any entry is NaN or infinite.
template <typename T>
void require_finite(std::span<const T> v, const char* where);

template <typename T>
struct Parameter {
  AlignedVector<T> value;
  AlignedVector<T> grad;

  explicit Parameter(std::size_t n = 0) : value(n, T(0)), grad(n, T(0)) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
  void add_grad(std::span<const T> g);
};

// ---------------------------------------------------------------------------
// Convolution

// Cross-correlation with stride 1 and zero "same" padding:
//   out[b,o,i] = bias[o] + sum_{c,k} w[o,c,k] * x[b,c,i+k-pad],  pad = (K-1)/2.
template <typename T>
struct Conv1dLayer {
  std::size_t in_channels{1};
  std::size_t out_channels{1};
  std::size_t kernel_size{3};
  bool has_bias{true};
  Parameter<T> weight;  // (out, in, kernel)
  Parameter<T> bias;    // (out) or empty

  Conv1dLayer() = default;
  Conv1dLayer(std::size_t in, std::size_t out, std::size_t kernel, bool with_bias);

  // Kaiming normal: std = sqrt(2 / (in * kernel)); bias zero.
  void init_kaiming(Rng& rng);
  T w(std::size_t o, std::size_t c, std::size_t k) const {
    return weight.value[(o * in_channels + c) * kernel_size + k];
  }
};

template <typename T>
struct Conv1dGrads {
  Tensor<T> grad_x;
  AlignedVector<T> grad_w;
  AlignedVector<T> grad_b;
};

template <typename T>
Tensor<T> conv1d_forward(const Conv1dLayer<T>& layer, const Tensor<T>& x);
template <typename T>
Conv1dGrads<T> conv1d_backward(const Conv1dLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Batch normalization over (batch, length) per channel

enum class Mode { train, eval };

template <typename T>
struct BatchNormLayer {
  std::size_t channels{0};
  double eps{1e-5};
  double momentum{0.1};
  Parameter<T> gamma;
  Parameter<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;  // unbiased estimate, strictly positive

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t c);
};

template <typename T>
struct BatchNormCache {
  Tensor<T> x_hat;
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> grad_x;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

// Train mode normalizes with batch statistics and updates the running
// estimates; it needs at least two values per channel. Eval mode uses the
// running estimates and leaves the layer untouched.
template <typename T>
Tensor<T> batchnorm_forward(BatchNormLayer<T>& layer, const Tensor<T>& x, Mode mode,
                            BatchNormCache<T>* cache = nullptr);
template <typename T>
Tensor<T> batchnorm_infer(const BatchNormLayer<T>& layer, const Tensor<T>& x);
// Gradients of the train-mode forward.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormLayer<T>& layer, const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// ReLU. The subgradient at exactly 0 is 0.

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
// Takes the forward input or output: both are > 0 at exactly the same entries.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Fully connected: y = W x + b on each item's flattened features.

template <typename T>
struct DenseLayer {
  std::size_t in_features{1};
  std::size_t out_features{1};
  Parameter<T> weight;  // (out, in)
  Parameter<T> bias;    // (out)

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out);
  void init_kaiming(Rng& rng);
};

template <typename T>
struct DenseGrads {
  Tensor<T> grad_x;
  AlignedVector<T> grad_w;
  AlignedVector<T> grad_b;
};

// Output has shape (batch, out_features, 1).
template <typename T>
Tensor<T> dense_forward(const DenseLayer<T>& layer, const Tensor<T>& x);
template <typename T>
DenseGrads<T> dense_backward(const DenseLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Segment average pooling: splits the length axis into `bins` contiguous
// segments, segment j covering [floor(j*L/bins), ceil((j+1)*L/bins)). With
// bins == 1 this is a global average.

template <typename T>
Tensor<T> segment_pool_forward(const Tensor<T>& x, std::size_t bins);
template <typename T>
Tensor<T> segment_pool_backward(const Tensor<T>& grad_out, std::size_t input_length);

}  // namespace nn
}  // namespace specnet
