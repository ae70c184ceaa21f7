#include "specnet/models.hpp"

#include <sstream>

namespace specnet {

using nn::Mode;
using nn::Tensor;

void NetConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("net config: depth must be >= 2");
  if (width == 0) throw std::invalid_argument("net config: width must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("net config: kernel size must be odd");
  if (num_elements == 0) throw std::invalid_argument("net config: num_elements must be positive");
  if (input_length == 0) throw std::invalid_argument("net config: input_length must be positive");
  if (pool_bins == 0 || pool_bins > input_length) {
    throw std::invalid_argument("net config: pool_bins must be in [1, input_length]");
  }
  if (head_channels == 0 || head_hidden == 0) throw std::invalid_argument("net config: head sizes must be positive");
  if (!element_names.empty() && element_names.size() != num_elements) {
    throw std::invalid_argument("net config: element_names must list num_elements names");
  }
}

std::string NetConfig::describe() const {
  std::ostringstream os;
  os << "{depth=" << depth << ", width=" << width << ", kernel=" << kernel_size << ", C=" << num_elements
     << ", N=" << input_length << ", pool_bins=" << pool_bins << ", head_channels=" << head_channels
     << ", head_hidden=" << head_hidden;
  if (!element_names.empty()) {
    os << ", elements=";
    for (std::size_t i = 0; i < element_names.size(); ++i) os << (i ? "/" : "") << element_names[i];
  }
  os << "}";
  return os.str();
}

NetConfig desk_config() {
  NetConfig c;
  c.depth = 8;
  c.width = 16;
  c.input_length = 512;
  return c;
}

NetConfig full_config() { return NetConfig{}; }

// ---------------------------------------------------------------------------
// PreprocNet

template <typename T>
PreprocNet<T>::PreprocNet(const NetConfig& config) : config_(config) {
  config_.validate();
  const auto w = config_.width;
  const auto k = config_.kernel_size;
  first_ = nn::Conv1dLayer<T>(1, w, k, true);
  for (std::size_t i = 0; i + 2 < config_.depth; ++i) {
    body_conv_.emplace_back(w, w, k, false);
    body_bn_.emplace_back(w);
  }
  last_ = nn::Conv1dLayer<T>(w, 1, k, true);
}

template <typename T>
void PreprocNet<T>::init(Rng& rng) {
  first_.init_kaiming(rng);
  for (auto& c : body_conv_) c.init_kaiming(rng);
  last_.init_kaiming(rng);
  for (auto& bn : body_bn_) bn = nn::BatchNormLayer<T>(bn.channels);
}

template <typename T>
void PreprocNet<T>::check_input(const Tensor<T>& y) const {
  if (y.channels != 1 || y.length != config_.input_length) {
    throw std::invalid_argument("preproc net: expected (batch, 1, " + std::to_string(config_.input_length) +
                                ") input, got channels=" + std::to_string(y.channels) +
                                " length=" + std::to_string(y.length));
  }
}

namespace {

template <typename T>
PreprocOutput<T> residual_output(const Tensor<T>& y, Tensor<T> z) {
  Tensor<T> x = y;
  for (std::size_t i = 0; i < x.size(); ++i) x.values[i] -= z.values[i];
  return {std::move(z), std::move(x)};
}

}  // namespace

template <typename T>
PreprocOutput<T> PreprocNet<T>::infer(const Tensor<T>& y) const {
  check_input(y);
  Tensor<T> h = nn::relu_forward(nn::conv1d_forward(first_, y));
  for (std::size_t l = 0; l < body_conv_.size(); ++l) {
    h = nn::relu_forward(nn::batchnorm_infer(body_bn_[l], nn::conv1d_forward(body_conv_[l], h)));
  }
  return residual_output(y, nn::conv1d_forward(last_, h));
}

template <typename T>
PreprocOutput<T> PreprocNet<T>::forward_train(const Tensor<T>& y, PreprocCache<T>& cache) {
  check_input(y);
  cache.input = y;
  cache.bn_in.assign(body_conv_.size(), {});
  cache.bn.assign(body_conv_.size(), {});
  cache.relu_out.assign(body_conv_.size() + 1, {});
  cache.relu_out[0] = nn::relu_forward(nn::conv1d_forward(first_, y));
  for (std::size_t l = 0; l < body_conv_.size(); ++l) {
    cache.bn_in[l] = nn::conv1d_forward(body_conv_[l], cache.relu_out[l]);
    cache.relu_out[l + 1] =
        nn::relu_forward(nn::batchnorm_forward(body_bn_[l], cache.bn_in[l], Mode::train, &cache.bn[l]));
  }
  return residual_output(y, nn::conv1d_forward(last_, cache.relu_out.back()));
}

template <typename T>
Tensor<T> PreprocNet<T>::backward(const PreprocCache<T>& cache, const Tensor<T>& grad_z_hat) {
  auto gl = nn::conv1d_backward(last_, cache.relu_out.back(), grad_z_hat);
  last_.weight.add_grad(gl.grad_w);
  last_.bias.add_grad(gl.grad_b);
  Tensor<T> g = std::move(gl.grad_x);
  for (std::size_t l = body_conv_.size(); l-- > 0;) {
    g = nn::relu_backward(cache.relu_out[l + 1], g);
    auto gb = nn::batchnorm_backward(body_bn_[l], cache.bn[l], g);
    body_bn_[l].gamma.add_grad(gb.grad_gamma);
    body_bn_[l].beta.add_grad(gb.grad_beta);
    auto gc = nn::conv1d_backward(body_conv_[l], cache.relu_out[l], gb.grad_x);
    body_conv_[l].weight.add_grad(gc.grad_w);
    g = std::move(gc.grad_x);
  }
  g = nn::relu_backward(cache.relu_out[0], g);
  auto gf = nn::conv1d_backward(first_, cache.input, g);
  first_.weight.add_grad(gf.grad_w);
  first_.bias.add_grad(gf.grad_b);
  return std::move(gf.grad_x);
}

template <typename T>
std::vector<NamedParam<T>> PreprocNet<T>::parameters() {
  std::vector<NamedParam<T>> out{{"first.weight", &first_.weight}, {"first.bias", &first_.bias}};
  for (std::size_t l = 0; l < body_conv_.size(); ++l) {
    const std::string p = "body" + std::to_string(l);
    out.push_back({p + ".conv.weight", &body_conv_[l].weight});
    out.push_back({p + ".bn.gamma", &body_bn_[l].gamma});
    out.push_back({p + ".bn.beta", &body_bn_[l].beta});
  }
  out.push_back({"last.weight", &last_.weight});
  out.push_back({"last.bias", &last_.bias});
  return out;
}

template <typename T>
std::vector<NamedConstParam<T>> PreprocNet<T>::parameters() const {
  std::vector<NamedConstParam<T>> out;
  for (const auto& p : const_cast<PreprocNet*>(this)->parameters()) out.push_back({p.name, p.param});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> PreprocNet<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t l = 0; l < body_bn_.size(); ++l) {
    const std::string p = "body" + std::to_string(l);
    out.push_back({p + ".bn.running_mean", &body_bn_[l].running_mean});
    out.push_back({p + ".bn.running_var", &body_bn_[l].running_var});
  }
  return out;
}

template <typename T>
std::vector<NamedConstBuffer<T>> PreprocNet<T>::buffers() const {
  std::vector<NamedConstBuffer<T>> out;
  for (const auto& b : const_cast<PreprocNet*>(this)->buffers()) out.push_back({b.name, b.values});
  return out;
}

// ---------------------------------------------------------------------------
// CalibHead

template <typename T>
CalibHead<T>::CalibHead(const NetConfig& config)
    : config_(config), offset_(config.num_elements, T(0)), scale_(config.num_elements, T(1)) {
  config_.validate();
  for (std::size_t e = 0; e < config_.num_elements; ++e) {
    branches_.push_back({nn::Conv1dLayer<T>(1, config_.head_channels, config_.kernel_size, true),
                         nn::DenseLayer<T>(config_.head_channels * config_.pool_bins, config_.head_hidden),
                         nn::DenseLayer<T>(config_.head_hidden, 1)});
  }
}

template <typename T>
void CalibHead<T>::init(Rng& rng) {
  for (auto& b : branches_) {
    b.conv.init_kaiming(rng);
    b.hidden.init_kaiming(rng);
    b.out.init_kaiming(rng);
  }
}

template <typename T>
Tensor<T> CalibHead<T>::forward(const Tensor<T>& x, CalibCache<T>* cache) const {
  if (x.channels != 1 || x.length != config_.input_length) {
    throw std::invalid_argument("calibration head: expected (batch, 1, " + std::to_string(config_.input_length) +
                                ") input, got channels=" + std::to_string(x.channels) +
                                " length=" + std::to_string(x.length));
  }
  const std::size_t C = branches_.size();
  Tensor<T> out(x.batch, C, 1);
  if (cache) {
    cache->input = x;
    cache->branches.assign(C, {});
  }
  for (std::size_t k = 0; k < C; ++k) {
    const auto& br = branches_[k];
    Tensor<T> c = nn::relu_forward(nn::conv1d_forward(br.conv, x));
    Tensor<T> p = nn::segment_pool_forward(c, config_.pool_bins);
    Tensor<T> h = nn::relu_forward(nn::dense_forward(br.hidden, p));
    const Tensor<T> o = nn::dense_forward(br.out, h);
    for (std::size_t b = 0; b < x.batch; ++b) out.at(b, k, 0) = offset_[k] + scale_[k] * o.values[b];
    if (cache) cache->branches[k] = {std::move(c), std::move(p), std::move(h)};
  }
  return out;
}

template <typename T>
Tensor<T> CalibHead<T>::backward(const CalibCache<T>& cache, const Tensor<T>& grad_out) {
  const std::size_t B = cache.input.batch;
  if (grad_out.batch != B || grad_out.item_size() != branches_.size()) {
    throw std::invalid_argument("calibration head backward: gradient shape mismatch");
  }
  Tensor<T> grad_x(B, 1, cache.input.length);
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    auto& br = branches_[k];
    const auto& bc = cache.branches[k];
    Tensor<T> g(B, 1, 1);
    for (std::size_t b = 0; b < B; ++b) g.values[b] = scale_[k] * grad_out.values[b * branches_.size() + k];
    auto go = nn::dense_backward(br.out, bc.hidden_out, g);
    br.out.weight.add_grad(go.grad_w);
    br.out.bias.add_grad(go.grad_b);
    auto gh = nn::dense_backward(br.hidden, bc.pooled, nn::relu_backward(bc.hidden_out, go.grad_x));
    br.hidden.weight.add_grad(gh.grad_w);
    br.hidden.bias.add_grad(gh.grad_b);
    Tensor<T> gp = nn::segment_pool_backward(gh.grad_x, cache.input.length);
    auto gc = nn::conv1d_backward(br.conv, cache.input, nn::relu_backward(bc.conv_out, gp));
    br.conv.weight.add_grad(gc.grad_w);
    br.conv.bias.add_grad(gc.grad_b);
    for (std::size_t i = 0; i < grad_x.size(); ++i) grad_x.values[i] += gc.grad_x.values[i];
  }
  return grad_x;
}

template <typename T>
std::vector<NamedParam<T>> CalibHead<T>::parameters() {
  std::vector<NamedParam<T>> out;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    const std::string p = "branch" + std::to_string(k);
    auto& b = branches_[k];
    out.push_back({p + ".conv.weight", &b.conv.weight});
    out.push_back({p + ".conv.bias", &b.conv.bias});
    out.push_back({p + ".hidden.weight", &b.hidden.weight});
    out.push_back({p + ".hidden.bias", &b.hidden.bias});
    out.push_back({p + ".out.weight", &b.out.weight});
    out.push_back({p + ".out.bias", &b.out.bias});
  }
  return out;
}

template <typename T>
std::vector<NamedConstParam<T>> CalibHead<T>::parameters() const {
  std::vector<NamedConstParam<T>> out;
  for (const auto& p : const_cast<CalibHead*>(this)->parameters()) out.push_back({p.name, p.param});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> CalibHead<T>::buffers() {
  return {{"output_offset", &offset_}, {"output_scale", &scale_}};
}

template <typename T>
std::vector<NamedConstBuffer<T>> CalibHead<T>::buffers() const {
  return {{"output_offset", &offset_}, {"output_scale", &scale_}};
}

// ---------------------------------------------------------------------------
// EndToEndNet

template <typename T>
EndToEndNet<T>::EndToEndNet(const NetConfig& config) : trunk_(config), head_(config) {}

template <typename T>
EndToEndNet<T>::EndToEndNet(PreprocNet<T> trunk, CalibHead<T> head) : trunk_(std::move(trunk)), head_(std::move(head)) {
  const auto& a = trunk_.config();
  const auto& b = head_.config();
  if (a.input_length != b.input_length) {
    throw std::invalid_argument("end-to-end net: trunk and head disagree on input length");
  }
}

template <typename T>
void EndToEndNet<T>::init(Rng& rng) {
  trunk_.init(rng);
  head_.init(rng);
}

template <typename T>
Tensor<T> EndToEndNet<T>::infer(const Tensor<T>& y) const {
  return head_.forward(trunk_.infer(y).x_hat);
}

template <typename T>
Tensor<T> EndToEndNet<T>::forward_train(const Tensor<T>& y, EndToEndCache<T>& cache) {
  auto pre = trunk_.forward_train(y, cache.trunk);
  return head_.forward(pre.x_hat, &cache.head);
}

template <typename T>
Tensor<T> EndToEndNet<T>::backward(const EndToEndCache<T>& cache, const Tensor<T>& grad_out) {
  Tensor<T> g_xhat = head_.backward(cache.head, grad_out);
  // x_hat = y - z_hat
  Tensor<T> g_z = g_xhat;
  for (auto& v : g_z.values) v = -v;
  Tensor<T> g_y = trunk_.backward(cache.trunk, g_z);
  for (std::size_t i = 0; i < g_y.size(); ++i) g_y.values[i] += g_xhat.values[i];
  return g_y;
}

template <typename T>
std::vector<NamedParam<T>> EndToEndNet<T>::parameters() {
  std::vector<NamedParam<T>> out;
  for (auto& p : trunk_.parameters()) out.push_back({"trunk." + p.name, p.param});
  for (auto& p : head_.parameters()) out.push_back({"head." + p.name, p.param});
  return out;
}

template <typename T>
std::vector<NamedConstParam<T>> EndToEndNet<T>::parameters() const {
  std::vector<NamedConstParam<T>> out;
  for (const auto& p : const_cast<EndToEndNet*>(this)->parameters()) out.push_back({p.name, p.param});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> EndToEndNet<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (auto& b : trunk_.buffers()) out.push_back({"trunk." + b.name, b.values});
  for (auto& b : head_.buffers()) out.push_back({"head." + b.name, b.values});
  return out;
}

template <typename T>
std::vector<NamedConstBuffer<T>> EndToEndNet<T>::buffers() const {
  std::vector<NamedConstBuffer<T>> out;
  for (const auto& b : const_cast<EndToEndNet*>(this)->buffers()) out.push_back({b.name, b.values});
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pack_batch(const std::vector<const std::vector<double>*>& rows) {
  if (rows.empty()) throw std::invalid_argument("pack_batch: empty batch");
  const std::size_t L = rows.front()->size();
  Tensor<T> t(rows.size(), 1, L);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b]->size() != L) throw std::invalid_argument("pack_batch: rows differ in length");
    for (std::size_t i = 0; i < L; ++i) t.values[b * L + i] = static_cast<T>((*rows[b])[i]);
  }
  return t;
}

template <typename T>
Tensor<T> pack_batch(const std::vector<std::vector<double>>& rows) {
  std::vector<const std::vector<double>*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  return pack_batch<T>(ptrs);
}

template class PreprocNet<float>;
template class PreprocNet<double>;
template class CalibHead<float>;
template class CalibHead<double>;
template class EndToEndNet<float>;
template class EndToEndNet<double>;
template Tensor<float> pack_batch<float>(const std::vector<const std::vector<double>*>&);
template Tensor<double> pack_batch<double>(const std::vector<const std::vector<double>*>&);
template Tensor<float> pack_batch<float>(const std::vector<std::vector<double>>&);
template Tensor<double> pack_batch<double>(const std::vector<std::vector<double>>&);

}  // namespace specnet
