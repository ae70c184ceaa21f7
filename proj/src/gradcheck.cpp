#include "specnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "specnet/models.hpp"
#include "specnet/nn.hpp"
#include "specnet/rng.hpp"
#include "specnet/train.hpp"

namespace specnet {

using nn::Tensor;

double grad_check(const std::function<double()>& f, std::vector<GradBlock>& blocks, double h, std::size_t* checked) {
  std::vector<double> analytic;
  std::vector<double> numeric;
  for (auto& block : blocks) {
    const std::span<double> v = block.values;
    if (block.analytic.size() != v.size()) throw std::invalid_argument("grad_check: analytic gradient size mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double fp = f();
      v[i] = saved - h;
      const double fm = f();
      v[i] = saved;
      analytic.push_back(block.analytic[i]);
      numeric.push_back((fp - fm) / (2.0 * h));
    }
  }
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = 1e-3 * scale;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double err = denom > 0.0 ? std::abs(analytic[i] - numeric[i]) / denom : 0.0;
    if (!(err <= worst)) worst = err;  // NaN propagates
  }
  if (checked) *checked = analytic.size();
  return worst;
}

namespace {

// Pre-activations closer than this to the ReLU kink are redrawn, so that a
// step of h never crosses it.
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxDraws = 200;

struct Outcome {
  double error;
  std::size_t checked;
};

Tensor<double> random_tensor(Rng& rng, std::size_t b, std::size_t c, std::size_t l) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor<double> t(b, c, l);
  for (auto& v : t.values) v = n01(rng);
  return t;
}

void randomize(std::span<double> v, Rng& rng, double mean, double sd) {
  std::normal_distribution<double> n(mean, sd);
  for (auto& x : v) x = n(rng);
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

double min_abs(const Tensor<double>& t) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : t.values) m = std::min(m, std::abs(v));
  return m;
}

Outcome check_conv1d(Rng& rng, const GradCheckOptions& o) {
  nn::Conv1dLayer<double> layer(3, 4, 3, true);
  randomize(layer.weight.value, rng, 0.0, 0.5);
  randomize(layer.bias.value, rng, 0.0, 0.5);
  Tensor<double> x = random_tensor(rng, 2, 3, 16);
  const Tensor<double> proj = random_tensor(rng, 2, 4, 16);
  auto g = nn::conv1d_backward(layer, x, proj);
  std::vector<GradBlock> blocks{{x.values, g.grad_x.values}, {layer.weight.value, g.grad_w},
                                {layer.bias.value, g.grad_b}};
  std::size_t n = 0;
  const double e = grad_check([&] { return dot(proj, nn::conv1d_forward(layer, x)); }, blocks, o.h, &n);
  return {e, n};
}

Outcome check_batchnorm(Rng& rng, const GradCheckOptions& o) {
  nn::BatchNormLayer<double> layer(3);
  randomize(layer.gamma.value, rng, 1.0, 0.3);
  randomize(layer.beta.value, rng, 0.0, 0.3);
  Tensor<double> x = random_tensor(rng, 2, 3, 16);
  const Tensor<double> proj = random_tensor(rng, 2, 3, 16);
  auto scratch = layer;
  nn::BatchNormCache<double> cache;
  nn::batchnorm_forward(scratch, x, nn::Mode::train, &cache);
  auto g = nn::batchnorm_backward(layer, cache, proj);
  std::vector<GradBlock> blocks{{x.values, g.grad_x.values}, {layer.gamma.value, g.grad_gamma},
                                {layer.beta.value, g.grad_beta}};
  std::size_t n = 0;
  const double e = grad_check(
      [&] {
        auto copy = layer;
        return dot(proj, nn::batchnorm_forward(copy, x, nn::Mode::train));
      },
      blocks, o.h, &n);
  return {e, n};
}

Outcome check_relu(Rng& rng, const GradCheckOptions& o) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> x(2, 4, 32);
  for (auto& v : x.values) v = sign(rng) ? mag(rng) : -mag(rng);
  const Tensor<double> proj = random_tensor(rng, 2, 4, 32);
  std::vector<GradBlock> blocks{{x.values, nn::relu_backward(x, proj).values}};
  std::size_t n = 0;
  const double e = grad_check([&] { return dot(proj, nn::relu_forward(x)); }, blocks, o.h, &n);
  return {e, n};
}

Outcome check_dense(Rng& rng, const GradCheckOptions& o) {
  nn::DenseLayer<double> layer(12, 5);
  randomize(layer.weight.value, rng, 0.0, 0.5);
  randomize(layer.bias.value, rng, 0.0, 0.5);
  Tensor<double> x = random_tensor(rng, 2, 3, 4);
  const Tensor<double> proj = random_tensor(rng, 2, 5, 1);
  auto g = nn::dense_backward(layer, x, proj);
  std::vector<GradBlock> blocks{{x.values, g.grad_x.values}, {layer.weight.value, g.grad_w},
                                {layer.bias.value, g.grad_b}};
  std::size_t n = 0;
  const double e = grad_check([&] { return dot(proj, nn::dense_forward(layer, x)); }, blocks, o.h, &n);
  return {e, n};
}

Outcome check_pool(Rng& rng, const GradCheckOptions& o) {
  constexpr std::size_t bins = 5;  // does not divide the length
  Tensor<double> x = random_tensor(rng, 2, 3, 32);
  const Tensor<double> proj = random_tensor(rng, 2, 3, bins);
  std::vector<GradBlock> blocks{{x.values, nn::segment_pool_backward(proj, x.length).values}};
  std::size_t n = 0;
  const double e = grad_check([&] { return dot(proj, nn::segment_pool_forward(x, bins)); }, blocks, o.h, &n);
  return {e, n};
}

Outcome check_conv_bn_relu(Rng& rng, const GradCheckOptions& o) {
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    nn::Conv1dLayer<double> conv(3, 4, 3, false);
    randomize(conv.weight.value, rng, 0.0, 0.5);
    nn::BatchNormLayer<double> bn(4);
    randomize(bn.gamma.value, rng, 1.0, 0.3);
    randomize(bn.beta.value, rng, 0.0, 0.3);
    Tensor<double> x = random_tensor(rng, 2, 3, 16);
    const Tensor<double> proj = random_tensor(rng, 2, 4, 16);

    auto bn_scratch = bn;
    nn::BatchNormCache<double> cache;
    const Tensor<double> c = nn::conv1d_forward(conv, x);
    const Tensor<double> pre = nn::batchnorm_forward(bn_scratch, c, nn::Mode::train, &cache);
    if (min_abs(pre) < kKinkMargin) continue;
    auto gb = nn::batchnorm_backward(bn, cache, nn::relu_backward(pre, proj));
    auto gc = nn::conv1d_backward(conv, x, gb.grad_x);

    std::vector<GradBlock> blocks{{x.values, gc.grad_x.values},
                                  {conv.weight.value, gc.grad_w},
                                  {bn.gamma.value, gb.grad_gamma},
                                  {bn.beta.value, gb.grad_beta}};
    std::size_t n = 0;
    const double e = grad_check(
        [&] {
          auto b = bn;
          return dot(proj, nn::relu_forward(nn::batchnorm_forward(b, nn::conv1d_forward(conv, x), nn::Mode::train)));
        },
        blocks, o.h, &n);
    return {e, n};
  }
  throw std::runtime_error("gradcheck: could not draw an instance away from the ReLU kink");
}

// ---------------------------------------------------------------------------
// Loss-level checks on tiny networks

NetConfig tiny_config() {
  NetConfig c;
  c.depth = 3;
  c.width = 4;
  c.kernel_size = 3;
  c.num_elements = 2;
  c.input_length = 32;
  c.pool_bins = 4;
  c.head_channels = 4;
  c.head_hidden = 8;
  return c;
}

template <typename Net>
void jitter_params(Net& net, Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& p : net.parameters()) {
    for (auto& v : p.param->value) v += n(rng);
  }
}

void randomize_output_scaling(CalibHead<double>& head, Rng& rng) {
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  std::normal_distribution<double> offset(0.0, 1.0);
  for (auto& s : head.output_scale()) s = scale(rng);
  for (auto& b : head.output_offset()) b = offset(rng);
}

// Smallest |pre-activation| over every ReLU of a train-mode pass; also
// returns x_hat.
double trunk_margin(const PreprocNet<double>& net, const Tensor<double>& y, Tensor<double>* x_hat) {
  Tensor<double> pre = nn::conv1d_forward(net.first(), y);
  double m = min_abs(pre);
  Tensor<double> a = nn::relu_forward(pre);
  for (std::size_t l = 0; l < net.body_conv().size(); ++l) {
    auto bn = net.body_bn()[l];
    pre = nn::batchnorm_forward(bn, nn::conv1d_forward(net.body_conv()[l], a), nn::Mode::train);
    m = std::min(m, min_abs(pre));
    a = nn::relu_forward(pre);
  }
  if (x_hat) {
    const Tensor<double> z = nn::conv1d_forward(net.last(), a);
    *x_hat = y;
    for (std::size_t i = 0; i < z.size(); ++i) x_hat->values[i] -= z.values[i];
  }
  return m;
}

double head_margin(const CalibHead<double>& head, const Tensor<double>& x) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& br : head.branches()) {
    const Tensor<double> c = nn::conv1d_forward(br.conv, x);
    m = std::min(m, min_abs(c));
    const Tensor<double> p = nn::segment_pool_forward(nn::relu_forward(c), head.config().pool_bins);
    m = std::min(m, min_abs(nn::dense_forward(br.hidden, p)));
  }
  return m;
}

template <typename Net, typename Loss>
Outcome check_loss(Net& net, Loss loss, const GradCheckOptions& o) {
  Net probe = net;
  zero_grads(probe);
  loss(probe);
  std::vector<GradBlock> blocks;
  auto params = net.parameters();
  auto grads = probe.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) blocks.push_back({params[i].param->value, grads[i].param->grad});
  std::size_t n = 0;
  const double e = grad_check(
      [&] {
        Net copy = net;
        return loss(copy);
      },
      blocks, o.h, &n);
  return {e, n};
}

Outcome check_loss_preproc(Rng& rng, const GradCheckOptions& o) {
  const NetConfig cfg = tiny_config();
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    PreprocNet<double> net(cfg);
    net.init(rng);
    jitter_params(net, rng);
    const Tensor<double> y = random_tensor(rng, 2, 1, cfg.input_length);
    const Tensor<double> x = random_tensor(rng, 2, 1, cfg.input_length);
    if (trunk_margin(net, y, nullptr) < kKinkMargin) continue;
    return check_loss(net, [&](PreprocNet<double>& n) { return preproc_gradients(n, y, x); }, o);
  }
  throw std::runtime_error("gradcheck: could not draw an instance away from the ReLU kink");
}

Outcome check_loss_calib(Rng& rng, const GradCheckOptions& o) {
  const NetConfig cfg = tiny_config();
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    CalibHead<double> head(cfg);
    head.init(rng);
    jitter_params(head, rng);
    randomize_output_scaling(head, rng);
    const Tensor<double> x = random_tensor(rng, 2, 1, cfg.input_length);
    const Tensor<double> v = random_tensor(rng, 2, cfg.num_elements, 1);
    if (head_margin(head, x) < kKinkMargin) continue;
    return check_loss(head, [&](CalibHead<double>& h) { return calib_gradients(h, x, v); }, o);
  }
  throw std::runtime_error("gradcheck: could not draw an instance away from the ReLU kink");
}

Outcome check_loss_e2e(Rng& rng, const GradCheckOptions& o) {
  const NetConfig cfg = tiny_config();
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    EndToEndNet<double> net(cfg);
    net.init(rng);
    jitter_params(net, rng);
    randomize_output_scaling(net.head(), rng);
    const Tensor<double> y = random_tensor(rng, 2, 1, cfg.input_length);
    const Tensor<double> v = random_tensor(rng, 2, cfg.num_elements, 1);
    Tensor<double> x_hat;
    if (trunk_margin(net.trunk(), y, &x_hat) < kKinkMargin) continue;
    if (head_margin(net.head(), x_hat) < kKinkMargin) continue;
    return check_loss(net, [&](EndToEndNet<double>& n) { return e2e_gradients(n, y, v); }, o);
  }
  throw std::runtime_error("gradcheck: could not draw an instance away from the ReLU kink");
}

using Check = Outcome (*)(Rng&, const GradCheckOptions&);

struct Entry {
  std::string name;
  Check check;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries{
      {"conv1d", check_conv1d},           {"batchnorm", check_batchnorm},
      {"relu", check_relu},               {"dense", check_dense},
      {"pool", check_pool},               {"conv_bn_relu", check_conv_bn_relu},
      {"loss_preproc", check_loss_preproc}, {"loss_calib", check_loss_calib},
      {"loss_e2e", check_loss_e2e},
  };
  return entries;
}

}  // namespace

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& e : registry()) out.push_back(e.name);
    return out;
  }();
  return names;
}

GradCheckResult run_gradcheck(const std::string& component, const GradCheckOptions& options) {
  for (const auto& e : registry()) {
    if (e.name != component) continue;
    Rng rng = substream(options.seed, "gradcheck-" + component);
    const Outcome out = e.check(rng, options);
    return {component, out.error, out.checked, out.error < options.tolerance};
  }
  throw std::invalid_argument("unknown gradcheck component '" + component + "'");
}

}  // namespace specnet
