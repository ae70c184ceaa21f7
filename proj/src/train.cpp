#include "specnet/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "csv.hpp"
#include "specnet/rng.hpp"
#include "specnet/spectra.hpp"

namespace specnet {

using nn::Tensor;

// ---------------------------------------------------------------------------
// Losses

template <typename T>
LossValue<T> mean_l2_error(const Tensor<T>& target, const Tensor<T>& prediction) {
  if (!target.same_shape(prediction)) throw std::invalid_argument("loss: target and prediction shapes differ");
  if (target.batch == 0) throw std::invalid_argument("loss: empty batch");
  const std::size_t M = target.batch;
  const std::size_t n = target.item_size();
  LossValue<T> out{0.0, Tensor<T>(prediction.batch, prediction.channels, prediction.length)};
  std::vector<double> r(n);
  for (std::size_t m = 0; m < M; ++m) {
    const T* t = target.item(m);
    const T* p = prediction.item(m);
    for (std::size_t i = 0; i < n; ++i) r[i] = double(t[i]) - double(p[i]);
    const double norm = l2_norm(r);
    out.value += norm;
    if (norm > 0.0) {
      T* g = out.grad.item(m);
      const double k = -1.0 / (norm * static_cast<double>(M));
      for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<T>(k * r[i]);
    }
  }
  out.value /= static_cast<double>(M);
  if (!std::isfinite(out.value)) throw NumericError("loss is not finite");
  return out;
}

namespace {

template <typename T>
Tensor<T> residual_target(const Tensor<T>& y, const Tensor<T>& x) {
  if (!y.same_shape(x)) throw std::invalid_argument("preprocessing loss: raw and clean batches differ in shape");
  Tensor<T> t = y;
  for (std::size_t i = 0; i < t.size(); ++i) t.values[i] -= x.values[i];
  return t;
}

template <typename T>
Tensor<T> pack_targets(const std::vector<const std::vector<double>*>& rows) {
  const std::size_t C = rows.front()->size();
  Tensor<T> t(rows.size(), C, 1);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b]->size() != C) throw std::invalid_argument("targets differ in length");
    for (std::size_t k = 0; k < C; ++k) t.values[b * C + k] = static_cast<T>((*rows[b])[k]);
  }
  return t;
}

}  // namespace

template <typename T>
double loss_preproc(const PreprocNet<T>& net, const Tensor<T>& y, const Tensor<T>& x) {
  return mean_l2_error(residual_target(y, x), net.infer(y).z_hat).value;
}

template <typename T>
double loss_calib(const CalibHead<T>& head, const Tensor<T>& x, const Tensor<T>& v) {
  return mean_l2_error(v, head.forward(x)).value;
}

template <typename T>
double loss_e2e(const EndToEndNet<T>& net, const Tensor<T>& y, const Tensor<T>& v) {
  return mean_l2_error(v, net.infer(y)).value;
}

template <typename T>
double preproc_gradients(PreprocNet<T>& net, const Tensor<T>& y, const Tensor<T>& x) {
  PreprocCache<T> cache;
  const auto out = net.forward_train(y, cache);
  auto loss = mean_l2_error(residual_target(y, x), out.z_hat);
  net.backward(cache, loss.grad);
  return loss.value;
}

template <typename T>
double calib_gradients(CalibHead<T>& head, const Tensor<T>& x, const Tensor<T>& v) {
  CalibCache<T> cache;
  const auto pred = head.forward(x, &cache);
  auto loss = mean_l2_error(v, pred);
  head.backward(cache, loss.grad);
  return loss.value;
}

template <typename T>
double e2e_gradients(EndToEndNet<T>& net, const Tensor<T>& y, const Tensor<T>& v) {
  EndToEndCache<T> cache;
  const auto pred = net.forward_train(y, cache);
  auto loss = mean_l2_error(v, pred);
  net.backward(cache, loss.grad);
  return loss.value;
}

// ---------------------------------------------------------------------------
// Adam

namespace detail {

template <typename T>
void adam_update(AdamState& state, std::size_t offset, std::span<T> params, std::span<const T> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter and gradient sizes differ");
  if (offset + params.size() > state.m.size()) throw std::invalid_argument("adam: moment vectors too short");
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (!std::isfinite(g)) {
      throw NumericError("adam: non-finite gradient at parameter index " + std::to_string(offset + i));
    }
    double& m = state.m[offset + i];
    double& v = state.v[offset + i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double step = state.lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
    params[i] = static_cast<T>(double(params[i]) - step);
  }
}

}  // namespace detail

template <typename T>
void adam_step(AdamState& state, std::span<T> params, std::span<const T> grads) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam: state sized for " + std::to_string(state.m.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  ++state.t;
  detail::adam_update(state, 0, params, grads);
}

// ---------------------------------------------------------------------------
// Training loops

void SupervisedSet::validate() const {
  if (inputs.size() != targets.size()) {
    throw std::invalid_argument("training set: " + std::to_string(inputs.size()) + " inputs but " +
                                std::to_string(targets.size()) + " targets");
  }
  if (inputs.empty()) throw std::invalid_argument("training set is empty");
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const TrainConfig& config, std::size_t epoch) {
  if (config.batch_size < 2) throw std::invalid_argument("batch size must be >= 2 (batch normalization)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (config.shuffle) {
    Rng rng = substream(config.seed, "shuffle", epoch);
    order = permutation(n, rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += config.batch_size) {
    const std::size_t end = std::min(n, start + config.batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

struct BatchView {
  std::vector<const std::vector<double>*> inputs;
  std::vector<const std::vector<double>*> targets;
};

BatchView gather(const SupervisedSet& set, const std::vector<std::size_t>& idx) {
  BatchView v;
  for (std::size_t i : idx) {
    v.inputs.push_back(&set.inputs[i]);
    v.targets.push_back(&set.targets[i]);
  }
  return v;
}

template <typename Step, typename Validate>
std::vector<LossTraceRow> run_epochs(const SupervisedSet& train, const TrainConfig& config, Step&& step,
                                     Validate&& validate) {
  train.validate();
  if (train.size() < 2) throw std::invalid_argument("training needs at least 2 samples");
  std::vector<LossTraceRow> trace;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = epoch_batches(train.size(), config, epoch);
    double sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      double loss = 0.0;
      try {
        loss = step(gather(train, batches[b]));
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      sum += loss;
    }
    trace.push_back({epoch, "train", sum / static_cast<double>(batches.size())});
    if (auto v = validate()) trace.push_back({epoch, "validation", *v});
  }
  return trace;
}

template <typename F>
double chunked_mean(const SupervisedSet& set, F&& batch_loss) {
  set.validate();
  constexpr std::size_t chunk = 64;
  double total = 0.0;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    const std::size_t end = std::min(set.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    total += batch_loss(gather(set, idx)) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(set.size());
}

}  // namespace

template <typename T>
double dataset_loss_preproc(const PreprocNet<T>& net, const SupervisedSet& set) {
  return chunked_mean(set, [&](const BatchView& b) {
    return loss_preproc(net, pack_batch<T>(b.inputs), pack_batch<T>(b.targets));
  });
}

template <typename T>
double dataset_loss_calib(const CalibHead<T>& head, const SupervisedSet& set) {
  return chunked_mean(set, [&](const BatchView& b) {
    return loss_calib(head, pack_batch<T>(b.inputs), pack_targets<T>(b.targets));
  });
}

template <typename T>
double dataset_loss_e2e(const EndToEndNet<T>& net, const SupervisedSet& set) {
  return chunked_mean(set, [&](const BatchView& b) {
    return loss_e2e(net, pack_batch<T>(b.inputs), pack_targets<T>(b.targets));
  });
}

template <typename T>
void standardize_outputs(CalibHead<T>& head, const std::vector<std::vector<double>>& targets) {
  const std::size_t C = head.output_offset().size();
  if (targets.empty()) throw std::invalid_argument("standardize_outputs: no targets");
  std::vector<double> mean(C, 0.0);
  std::vector<double> var(C, 0.0);
  for (const auto& t : targets) {
    if (t.size() != C) throw std::invalid_argument("standardize_outputs: target length differs from head outputs");
    for (std::size_t k = 0; k < C; ++k) mean[k] += t[k];
  }
  for (auto& m : mean) m /= static_cast<double>(targets.size());
  for (const auto& t : targets) {
    for (std::size_t k = 0; k < C; ++k) var[k] += (t[k] - mean[k]) * (t[k] - mean[k]);
  }
  for (std::size_t k = 0; k < C; ++k) {
    const double sd = std::sqrt(var[k] / static_cast<double>(targets.size()));
    head.output_offset()[k] = static_cast<T>(mean[k]);
    head.output_scale()[k] = static_cast<T>(sd > 1e-12 ? sd : 1.0);
  }
}

template <typename T>
std::vector<LossTraceRow> fit_preproc(PreprocNet<T>& net, const SupervisedSet& train, const TrainConfig& config,
                                      const SupervisedSet* validation) {
  AdamState adam(param_count(net), config.lr);
  return run_epochs(
      train, config,
      [&](const BatchView& b) {
        zero_grads(net);
        const double loss = preproc_gradients(net, pack_batch<T>(b.inputs), pack_batch<T>(b.targets));
        adam_step(adam, net);
        return loss;
      },
      [&]() -> std::optional<double> {
        if (!validation) return std::nullopt;
        return dataset_loss_preproc(net, *validation);
      });
}

template <typename T>
std::vector<LossTraceRow> fit_calib(CalibHead<T>& head, const SupervisedSet& train, const TrainConfig& config,
                                    const SupervisedSet* validation) {
  train.validate();
  if (config.standardize_targets) standardize_outputs(head, train.targets);
  AdamState adam(param_count(head), config.lr);
  return run_epochs(
      train, config,
      [&](const BatchView& b) {
        zero_grads(head);
        const double loss = calib_gradients(head, pack_batch<T>(b.inputs), pack_targets<T>(b.targets));
        adam_step(adam, head);
        return loss;
      },
      [&]() -> std::optional<double> {
        if (!validation) return std::nullopt;
        return dataset_loss_calib(head, *validation);
      });
}

template <typename T>
std::vector<LossTraceRow> fit_e2e(EndToEndNet<T>& net, const SupervisedSet& train, const TrainConfig& config,
                                  const SupervisedSet* validation) {
  train.validate();
  if (config.standardize_targets) standardize_outputs(net.head(), train.targets);
  AdamState adam(param_count(net), config.lr);
  return run_epochs(
      train, config,
      [&](const BatchView& b) {
        zero_grads(net);
        const double loss = e2e_gradients(net, pack_batch<T>(b.inputs), pack_targets<T>(b.targets));
        adam_step(adam, net);
        return loss;
      },
      [&]() -> std::optional<double> {
        if (!validation) return std::nullopt;
        return dataset_loss_e2e(net, *validation);
      });
}

void write_loss_trace(const std::vector<LossTraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss trace " + path);
  out << "epoch,split,loss\n";
  for (const auto& r : trace) out << r.epoch << ',' << r.split << ',' << csv::format_double(r.loss) << '\n';
}

#define SPECNET_INSTANTIATE(T)                                                                                     \
  template LossValue<T> mean_l2_error<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template double loss_preproc<T>(const PreprocNet<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template double loss_calib<T>(const CalibHead<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template double loss_e2e<T>(const EndToEndNet<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template double preproc_gradients<T>(PreprocNet<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template double calib_gradients<T>(CalibHead<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template double e2e_gradients<T>(EndToEndNet<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template void detail::adam_update<T>(AdamState&, std::size_t, std::span<T>, std::span<const T>);                \
  template void adam_step<T>(AdamState&, std::span<T>, std::span<const T>);                                       \
  template std::vector<LossTraceRow> fit_preproc<T>(PreprocNet<T>&, const SupervisedSet&, const TrainConfig&,     \
                                                    const SupervisedSet*);                                        \
  template std::vector<LossTraceRow> fit_calib<T>(CalibHead<T>&, const SupervisedSet&, const TrainConfig&,        \
                                                  const SupervisedSet*);                                          \
  template std::vector<LossTraceRow> fit_e2e<T>(EndToEndNet<T>&, const SupervisedSet&, const TrainConfig&,        \
                                                const SupervisedSet*);                                            \
  template void standardize_outputs<T>(CalibHead<T>&, const std::vector<std::vector<double>>&);                   \
  template double dataset_loss_preproc<T>(const PreprocNet<T>&, const SupervisedSet&);                            \
  template double dataset_loss_calib<T>(const CalibHead<T>&, const SupervisedSet&);                               \
  template double dataset_loss_e2e<T>(const EndToEndNet<T>&, const SupervisedSet&);

SPECNET_INSTANTIATE(float)
SPECNET_INSTANTIATE(double)

#undef SPECNET_INSTANTIATE

}  // namespace specnet
