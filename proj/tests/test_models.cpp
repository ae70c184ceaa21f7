#include <gtest/gtest.h>

#include "specnet/models.hpp"
#include "specnet/train.hpp"
#include "test_util.hpp"

using namespace specnet;
using nn::Tensor;
using specnet::testing::random_tensor;

namespace {

NetConfig small_config() {
  NetConfig c;
  c.depth = 4;
  c.width = 6;
  c.num_elements = 3;
  c.input_length = 40;
  c.pool_bins = 8;
  c.head_hidden = 5;
  return c;
}

template <typename Net>
void jitter(Net& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& p : net.parameters()) {
    for (auto& v : p.param->value) v += n(rng);
  }
}

}  // namespace

TEST(NetConfig, ValidationAndReceptiveField) {
  NetConfig c = full_config();
  EXPECT_EQ(c.depth, 20u);
  EXPECT_EQ(c.width, 64u);
  EXPECT_EQ(c.receptive_field(), 41u);
  c.depth = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk_config();
  c.kernel_size = 2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = desk_config();
  c.element_names = {"a"};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(PreprocNet, ZeroLastConvIsExactIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> depth(2, 6), width(1, 8), len(8, 60), ker(1, 2);
  for (int rep = 0; rep < 20; ++rep) {
    NetConfig c;
    c.depth = depth(rng);
    c.width = width(rng);
    c.kernel_size = 2 * ker(rng) + 1;
    c.input_length = len(rng);
    c.pool_bins = 4;
    PreprocNet<float> net(c);
    Rng init(rep);
    net.init(init);
    std::fill(net.last().weight.value.begin(), net.last().weight.value.end(), 0.0f);
    std::fill(net.last().bias.value.begin(), net.last().bias.value.end(), 0.0f);
    const Tensor<float> y = random_tensor<float>(rng, 3, 1, c.input_length);
    const auto out = net.infer(y);
    EXPECT_EQ(out.x_hat.values, y.values);
    EXPECT_TRUE(out.z_hat.same_shape(y));
    for (float v : out.z_hat.values) EXPECT_EQ(v, 0.0f);
  }
}

TEST(PreprocNet, ShapeAndLengthCheck) {
  const NetConfig c = small_config();
  PreprocNet<double> net(c);
  Rng init(2);
  net.init(init);
  std::mt19937_64 rng(3);
  const auto out = net.infer(random_tensor(rng, 2, 1, c.input_length));
  EXPECT_EQ(out.x_hat.length, c.input_length);
  EXPECT_THROW(net.infer(random_tensor(rng, 2, 1, c.input_length + 1)), std::invalid_argument);
}

TEST(CalibHead, ZeroWeightsGiveTheFinalBias) {
  const NetConfig c = small_config();
  CalibHead<double> head(c);
  for (auto& p : head.parameters()) std::fill(p.param->value.begin(), p.param->value.end(), 0.0);
  for (std::size_t k = 0; k < c.num_elements; ++k) head.branches()[k].out.bias.value[0] = 10.0 * (k + 1);
  std::mt19937_64 rng(4);
  const auto v = head.forward(random_tensor(rng, 3, 1, c.input_length));
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t k = 0; k < c.num_elements; ++k) EXPECT_EQ(v.at(b, k, 0), 10.0 * (k + 1));
  }
  EXPECT_THROW(head.forward(random_tensor(rng, 3, 1, c.input_length - 1)), std::invalid_argument);
}

TEST(CalibHead, BranchesAreIndependent) {
  const NetConfig c = small_config();
  CalibHead<double> head(c);
  Rng init(5);
  head.init(init);
  jitter(head, 6);
  std::mt19937_64 rng(7);
  const Tensor<double> x = random_tensor(rng, 4, 1, c.input_length);
  const auto base = head.forward(x);

  CalibHead<double> permuted = head;
  std::swap(permuted.branches()[0], permuted.branches()[2]);
  const auto p = permuted.forward(x);
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_EQ(p.at(b, 0, 0), base.at(b, 2, 0));
    EXPECT_EQ(p.at(b, 1, 0), base.at(b, 1, 0));
    EXPECT_EQ(p.at(b, 2, 0), base.at(b, 0, 0));
  }

  CalibHead<double> zeroed = head;
  auto& br = zeroed.branches()[1];
  for (auto* param : {&br.conv.weight, &br.conv.bias, &br.hidden.weight, &br.hidden.bias, &br.out.weight, &br.out.bias}) {
    std::fill(param->value.begin(), param->value.end(), 0.0);
  }
  const auto z = zeroed.forward(x);
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_EQ(z.at(b, 0, 0), base.at(b, 0, 0));
    EXPECT_EQ(z.at(b, 1, 0), 0.0);
    EXPECT_EQ(z.at(b, 2, 0), base.at(b, 2, 0));
  }
}

TEST(CalibHead, GradientOfOneOutputTouchesOnlyItsBranch) {
  const NetConfig c = small_config();
  CalibHead<double> head(c);
  Rng init(8);
  head.init(init);
  jitter(head, 9);
  std::mt19937_64 rng(10);
  const Tensor<double> x = random_tensor(rng, 2, 1, c.input_length);
  CalibCache<double> cache;
  head.forward(x, &cache);
  Tensor<double> g(2, c.num_elements, 1);
  g.at(0, 1, 0) = 1.0;
  g.at(1, 1, 0) = -2.0;
  zero_grads(head);
  head.backward(cache, g);
  for (std::size_t k : {0u, 2u}) {
    const auto& br = head.branches()[k];
    for (const auto* param : {&br.conv.weight, &br.conv.bias, &br.hidden.weight, &br.hidden.bias, &br.out.weight}) {
      for (double v : param->grad) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(CalibHead, OutputScalingBuffers) {
  const NetConfig c = small_config();
  CalibHead<double> head(c);
  Rng init(11);
  head.init(init);
  std::mt19937_64 rng(12);
  const Tensor<double> x = random_tensor(rng, 2, 1, c.input_length);
  const auto raw = head.forward(x);
  head.output_offset() = {1.0, 2.0, 3.0};
  head.output_scale() = {2.0, 1.0, 0.5};
  const auto scaled = head.forward(x);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_DOUBLE_EQ(scaled.at(b, k, 0), head.output_offset()[k] + head.output_scale()[k] * raw.at(b, k, 0));
    }
  }
}

TEST(EndToEndNet, EqualsCompositionBitwiseAndIsDeterministic) {
  const NetConfig c = small_config();
  PreprocNet<float> trunk(c);
  CalibHead<float> head(c);
  Rng init(13);
  trunk.init(init);
  head.init(init);
  jitter(trunk, 14);
  const EndToEndNet<float> e2e(trunk, head);
  std::mt19937_64 rng(15);
  const Tensor<float> y = random_tensor<float>(rng, 5, 1, c.input_length);
  const auto direct = e2e.infer(y);
  const auto composed = head.forward(trunk.infer(y).x_hat);
  EXPECT_EQ(direct.values, composed.values);
  EXPECT_EQ(direct.values, e2e.infer(y).values);
  EXPECT_EQ(direct.channels, c.num_elements);
}

TEST(ParamCount, DeskConfigMatchesLayerArithmetic) {
  const NetConfig c = desk_config();  // D=8, width 16, N=512, 8 elements, 64 pool bins
  const std::size_t w = 16, k = 3;
  const std::size_t trunk = (w * k + w) + (c.depth - 2) * (w * w * k + 2 * w) + (w * k + 1);
  const std::size_t branch = (4 * k + 4) + (4 * 64 * 16 + 16) + (16 + 1);
  EXPECT_EQ(param_count(PreprocNet<float>(c)), trunk);
  EXPECT_EQ(param_count(CalibHead<float>(c)), 8 * branch);
  EXPECT_EQ(param_count(EndToEndNet<float>(c)), trunk + 8 * branch);
  EXPECT_EQ(trunk, 4913u);
  // Full D=20, width 64 trunk.
  EXPECT_EQ(param_count(PreprocNet<float>(full_config())), 223937u);
}

TEST(Params, FlattenLoadRoundTrip) {
  const NetConfig c = small_config();
  EndToEndNet<double> a(c), b(c);
  Rng ia(16), ib(17);
  a.init(ia);
  b.init(ib);
  jitter(a, 18);
  load_params(b, flatten_params(a));
  for (std::size_t i = 0; i < a.buffers().size(); ++i) *b.buffers()[i].values = *a.buffers()[i].values;
  std::mt19937_64 rng(19);
  const Tensor<double> y = random_tensor(rng, 3, 1, c.input_length);
  EXPECT_EQ(a.infer(y).values, b.infer(y).values);
  EXPECT_THROW(load_params(b, std::vector<double>(3)), std::invalid_argument);
}

TEST(PackBatch, ShapesAndErrors) {
  const auto t = pack_batch<float>(std::vector<std::vector<double>>{{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.batch, 2u);
  EXPECT_EQ(t.channels, 1u);
  EXPECT_EQ(t.length, 3u);
  EXPECT_THROW(pack_batch<float>(std::vector<std::vector<double>>{{1, 2}, {1}}), std::invalid_argument);
  EXPECT_THROW(pack_batch<float>(std::vector<std::vector<double>>{}), std::invalid_argument);
}
