#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specnet/models.hpp"
#include "specnet/nn.hpp"

namespace specnet {

// ---------------------------------------------------------------------------
// Losses. All three are the batch mean of the (unsquared) Euclidean norm of
// the per-sample error; the gradient at an exactly zero error is zero.

template <typename T>
struct LossValue {
  double value{0.0};
  nn::Tensor<T> grad;  // d loss / d prediction
};

// (1/M) sum_m || target_m - prediction_m ||_2 over items of equal shape.
template <typename T>
LossValue<T> mean_l2_error(const nn::Tensor<T>& target, const nn::Tensor<T>& prediction);

// (1/M) sum_m || (y_m - x_m) - R(y_m) || in eval mode.
template <typename T>
double loss_preproc(const PreprocNet<T>& net, const nn::Tensor<T>& y, const nn::Tensor<T>& x);
// (1/M) sum_m || v_m - F(x_m) ||; v has shape (batch, C, 1).
template <typename T>
double loss_calib(const CalibHead<T>& head, const nn::Tensor<T>& x, const nn::Tensor<T>& v);
// (1/M) sum_m || v_m - F'(y_m) || in eval mode.
template <typename T>
double loss_e2e(const EndToEndNet<T>& net, const nn::Tensor<T>& y, const nn::Tensor<T>& v);

// Train-mode forward and backward on one batch: accumulates parameter
// gradients into the network and returns the loss value.
template <typename T>
double preproc_gradients(PreprocNet<T>& net, const nn::Tensor<T>& y, const nn::Tensor<T>& x);
template <typename T>
double calib_gradients(CalibHead<T>& head, const nn::Tensor<T>& x, const nn::Tensor<T>& v);
template <typename T>
double e2e_gradients(EndToEndNet<T>& net, const nn::Tensor<T>& y, const nn::Tensor<T>& v);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  double lr{1e-3};
  std::uint64_t t{0};
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t n_params, double learning_rate)
      : lr(learning_rate), m(n_params, 0.0), v(n_params, 0.0) {}
};

// One bias-corrected Adam update; increments state.t. Throws NumericError
// naming the parameter index if a gradient is NaN or infinite.
template <typename T>
void adam_step(AdamState& state, std::span<T> params, std::span<const T> grads);

namespace detail {
// Update of params[i] against moments m[offset + i], v[offset + i] at step state.t.
template <typename T>
void adam_update(AdamState& state, std::size_t offset, std::span<T> params, std::span<const T> grads);
}  // namespace detail

// Same, over every parameter block of a network, in declaration order.
template <typename Net>
void adam_step(AdamState& state, Net& net) {
  auto params = net.parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.param->size();
  if (state.m.size() != total || state.v.size() != total) {
    throw std::invalid_argument("adam: state sized for " + std::to_string(state.m.size()) + " parameters, network has " +
                                std::to_string(total));
  }
  ++state.t;
  std::size_t offset = 0;
  for (auto& p : params) {
    using T = typename std::decay_t<decltype(p.param->value)>::value_type;
    detail::adam_update<T>(state, offset, std::span<T>(p.param->value), std::span<const T>(p.param->grad));
    offset += p.param->size();
  }
}

// ---------------------------------------------------------------------------
// Training loops

struct TrainConfig {
  std::size_t batch_size{16};
  std::size_t epochs{20};
  double lr{1e-3};
  std::uint64_t seed{0};
  bool shuffle{true};
  Precision precision{Precision::single};
  // Calibration fits set the head's output offset/scale buffers to the
  // training targets' per-element mean and standard deviation.
  bool standardize_targets{true};
};

struct LossTraceRow {
  std::size_t epoch{0};
  std::string split;
  double loss{0.0};
};

// Parallel input/target vectors. Preprocessing sets use (raw, clean) pairs;
// calibration sets use (spectrum, composition) pairs.
struct SupervisedSet {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return inputs.size(); }
  void validate() const;
};

// Minibatch index lists for one epoch: consecutive chunks of the (optionally
// shuffled) order; a trailing chunk smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const TrainConfig& config, std::size_t epoch);

template <typename T>
std::vector<LossTraceRow> fit_preproc(PreprocNet<T>& net, const SupervisedSet& train, const TrainConfig& config,
                                      const SupervisedSet* validation = nullptr);
template <typename T>
std::vector<LossTraceRow> fit_calib(CalibHead<T>& head, const SupervisedSet& train, const TrainConfig& config,
                                    const SupervisedSet* validation = nullptr);
template <typename T>
std::vector<LossTraceRow> fit_e2e(EndToEndNet<T>& net, const SupervisedSet& train, const TrainConfig& config,
                                  const SupervisedSet* validation = nullptr);

// Sets the head's output offset/scale from the per-element mean and standard
// deviation of `targets` (scale 1 where the deviation vanishes).
template <typename T>
void standardize_outputs(CalibHead<T>& head, const std::vector<std::vector<double>>& targets);

// Eval-mode dataset losses, evaluated in chunks.
template <typename T>
double dataset_loss_preproc(const PreprocNet<T>& net, const SupervisedSet& set);
template <typename T>
double dataset_loss_calib(const CalibHead<T>& head, const SupervisedSet& set);
template <typename T>
double dataset_loss_e2e(const EndToEndNet<T>& net, const SupervisedSet& set);

// CSV `epoch,split,loss`.
void write_loss_trace(const std::vector<LossTraceRow>& trace, const std::string& path);

}  // namespace specnet
