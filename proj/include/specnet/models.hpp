#pragma once

// The three networks built from the layer set:
//
//   PreprocNet   raw y -> residual z_hat = R(y), cleaned x_hat = y - z_hat
//                conv(1->w)+ReLU, (D-2) x [conv(w->w, no bias)+BN+ReLU], conv(w->1)
//   CalibHead    spectrum -> C oxide wt.% values, one independent branch per oxide:
//                conv(1->4)+ReLU, segment average pool, dense(4P->16)+ReLU, dense(16->1)
//   EndToEndNet  CalibHead(PreprocNet(y).x_hat), trained jointly

#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "specnet/nn.hpp"
#include "specnet/rng.hpp"

namespace specnet {

struct NetConfig {
  std::size_t depth{20};  // number of convolutions in the residual trunk
  std::size_t width{64};
  std::size_t kernel_size{3};
  std::size_t num_elements{8};
  std::size_t input_length{5500};
  std::size_t pool_bins{64};  // head segments; 1 gives a global average
  std::size_t head_channels{4};
  std::size_t head_hidden{16};
  std::vector<std::string> element_names;  // empty or num_elements long

  void validate() const;
  std::size_t receptive_field() const { return depth * (kernel_size - 1) + 1; }
  bool operator==(const NetConfig&) const = default;
  std::string describe() const;
};

// Desk-scale configuration: D=8, width 16, N=512.
NetConfig desk_config();
// D=20, width 64, N=5500.
NetConfig full_config();

template <typename T>
struct NamedParam {
  std::string name;
  nn::Parameter<T>* param;
};

template <typename T>
struct NamedConstParam {
  std::string name;
  const nn::Parameter<T>* param;
};

// Non-trained state saved with a model (BN running statistics, target scaling).
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct NamedConstBuffer {
  std::string name;
  const std::vector<T>* values;
};

template <typename T>
struct PreprocOutput {
  nn::Tensor<T> z_hat;
  nn::Tensor<T> x_hat;
};

template <typename T>
struct PreprocCache {
  nn::Tensor<T> input;
  std::vector<nn::Tensor<T>> bn_in;      // body conv outputs
  std::vector<nn::BatchNormCache<T>> bn;
  std::vector<nn::Tensor<T>> relu_out;   // activation after each ReLU
};

template <typename T>
class PreprocNet {
 public:
  explicit PreprocNet(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  // Kaiming weights, zero biases, gamma 1, beta 0, running stats (0, 1).
  void init(Rng& rng);

  // Eval-mode pass; never mutates the network.
  PreprocOutput<T> infer(const nn::Tensor<T>& y) const;
  // Train-mode pass (batch statistics; updates BN running estimates).
  PreprocOutput<T> forward_train(const nn::Tensor<T>& y, PreprocCache<T>& cache);
  // Accumulates parameter gradients from dL/dz_hat; returns dL/dy through R only.
  nn::Tensor<T> backward(const PreprocCache<T>& cache, const nn::Tensor<T>& grad_z_hat);

  std::vector<NamedParam<T>> parameters();
  std::vector<NamedConstParam<T>> parameters() const;
  std::vector<NamedBuffer<T>> buffers();
  std::vector<NamedConstBuffer<T>> buffers() const;

  nn::Conv1dLayer<T>& first() { return first_; }
  nn::Conv1dLayer<T>& last() { return last_; }
  const nn::Conv1dLayer<T>& first() const { return first_; }
  const nn::Conv1dLayer<T>& last() const { return last_; }
  const std::vector<nn::Conv1dLayer<T>>& body_conv() const { return body_conv_; }
  const std::vector<nn::BatchNormLayer<T>>& body_bn() const { return body_bn_; }

 private:
  void check_input(const nn::Tensor<T>& y) const;

  NetConfig config_;
  nn::Conv1dLayer<T> first_;
  std::vector<nn::Conv1dLayer<T>> body_conv_;
  std::vector<nn::BatchNormLayer<T>> body_bn_;
  nn::Conv1dLayer<T> last_;
};

template <typename T>
struct CalibBranch {
  nn::Conv1dLayer<T> conv;
  nn::DenseLayer<T> hidden;
  nn::DenseLayer<T> out;
};

template <typename T>
struct CalibBranchCache {
  nn::Tensor<T> conv_out;  // after ReLU
  nn::Tensor<T> pooled;
  nn::Tensor<T> hidden_out;  // after ReLU
};

template <typename T>
struct CalibCache {
  nn::Tensor<T> input;
  std::vector<CalibBranchCache<T>> branches;
};

template <typename T>
class CalibHead {
 public:
  explicit CalibHead(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  void init(Rng& rng);

  // Output shape (batch, C, 1): prediction_k = offset_k + scale_k * branch_k(x).
  // Offsets default to 0 and scales to 1.
  nn::Tensor<T> forward(const nn::Tensor<T>& x, CalibCache<T>* cache = nullptr) const;
  // Accumulates parameter gradients; returns dL/dx.
  nn::Tensor<T> backward(const CalibCache<T>& cache, const nn::Tensor<T>& grad_out);

  std::vector<CalibBranch<T>>& branches() { return branches_; }
  const std::vector<CalibBranch<T>>& branches() const { return branches_; }
  std::vector<T>& output_offset() { return offset_; }
  std::vector<T>& output_scale() { return scale_; }
  const std::vector<T>& output_offset() const { return offset_; }
  const std::vector<T>& output_scale() const { return scale_; }

  std::vector<NamedParam<T>> parameters();
  std::vector<NamedConstParam<T>> parameters() const;
  std::vector<NamedBuffer<T>> buffers();
  std::vector<NamedConstBuffer<T>> buffers() const;

 private:
  NetConfig config_;
  std::vector<CalibBranch<T>> branches_;
  std::vector<T> offset_;
  std::vector<T> scale_;
};

template <typename T>
struct EndToEndCache {
  PreprocCache<T> trunk;
  CalibCache<T> head;
};

template <typename T>
class EndToEndNet {
 public:
  explicit EndToEndNet(const NetConfig& config);
  EndToEndNet(PreprocNet<T> trunk, CalibHead<T> head);

  const NetConfig& config() const { return trunk_.config(); }
  void init(Rng& rng);

  nn::Tensor<T> infer(const nn::Tensor<T>& y) const;
  nn::Tensor<T> forward_train(const nn::Tensor<T>& y, EndToEndCache<T>& cache);
  nn::Tensor<T> backward(const EndToEndCache<T>& cache, const nn::Tensor<T>& grad_out);

  PreprocNet<T>& trunk() { return trunk_; }
  CalibHead<T>& head() { return head_; }
  const PreprocNet<T>& trunk() const { return trunk_; }
  const CalibHead<T>& head() const { return head_; }

  std::vector<NamedParam<T>> parameters();
  std::vector<NamedConstParam<T>> parameters() const;
  std::vector<NamedBuffer<T>> buffers();
  std::vector<NamedConstBuffer<T>> buffers() const;

 private:
  PreprocNet<T> trunk_;
  CalibHead<T> head_;
};

// Generic parameter utilities for any of the three networks.
template <typename Net>
std::size_t param_count(const Net& net) {
  std::size_t n = 0;
  for (const auto& p : net.parameters()) n += p.param->size();
  return n;
}

template <typename Net>
std::vector<double> flatten_params(const Net& net) {
  std::vector<double> out;
  out.reserve(param_count(net));
  for (const auto& p : net.parameters()) out.insert(out.end(), p.param->value.begin(), p.param->value.end());
  return out;
}

// Throws std::invalid_argument when `values` has the wrong length.
template <typename Net>
void load_params(Net& net, const std::vector<double>& values) {
  const std::size_t expected = param_count(net);
  if (values.size() != expected) {
    throw std::invalid_argument("load_params: got " + std::to_string(values.size()) + " values, network has " +
                                std::to_string(expected));
  }
  std::size_t k = 0;
  for (auto& p : net.parameters()) {
    for (auto& v : p.param->value) v = static_cast<std::decay_t<decltype(v)>>(values[k++]);
  }
}

template <typename Net>
void zero_grads(Net& net) {
  for (auto& p : net.parameters()) p.param->zero_grad();
}

// Packs spectra (each of equal length) into a (batch, 1, length) tensor.
template <typename T>
nn::Tensor<T> pack_batch(const std::vector<const std::vector<double>*>& rows);
template <typename T>
nn::Tensor<T> pack_batch(const std::vector<std::vector<double>>& rows);

}  // namespace specnet
