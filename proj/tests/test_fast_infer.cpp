#include <gtest/gtest.h>

#include <cmath>

#include "specnet/fast_infer.hpp"
#include "test_util.hpp"

using namespace specnet;

namespace {

template <typename T>
PreprocNet<T> trained_looking(const NetConfig& cfg, std::uint64_t seed) {
  PreprocNet<T> net(cfg);
  Rng rng(seed);
  net.init(rng);
  // Non-trivial BN statistics so folding is exercised.
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& b : net.buffers()) {
    for (auto& v : *b.values) v = static_cast<T>(u(gen));
  }
  for (auto& p : net.parameters()) {
    if (p.name.find("gamma") != std::string::npos || p.name.find("beta") != std::string::npos) {
      for (auto& v : p.param->value) v = static_cast<T>(u(gen) - 0.5);
    }
  }
  return net;
}

template <typename T>
double max_rel_diff(const PreprocNet<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = net.config().input_length;
  const auto y = specnet::testing::random_tensor<T>(rng, 1, 1, n);
  const auto ref = net.infer(y).x_hat;
  FastPreprocNet<T> fast(net);
  const auto out = fast.clean(std::span<const T>(y.values.data(), n));
  EXPECT_EQ(out.size(), n);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(double(ref.values[i])));
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(double(out[i]) - double(ref.values[i])));
  return worst / std::max(scale, 1e-30);
}

}  // namespace

TEST(FastInfer, MatchesReferenceAcrossShapes) {
  struct Case {
    std::size_t depth, width, kernel, n;
  };
  for (const Case c : {Case{2, 4, 3, 7}, Case{3, 8, 3, 33}, Case{5, 16, 3, 130}, Case{4, 5, 5, 61}, Case{8, 16, 3, 512},
                       Case{3, 17, 3, 1001}, Case{6, 64, 3, 300}}) {
    NetConfig cfg;
    cfg.depth = c.depth;
    cfg.width = c.width;
    cfg.kernel_size = c.kernel;
    cfg.input_length = c.n;
    cfg.pool_bins = 1;
    const auto d = trained_looking<double>(cfg, c.n);
    EXPECT_LT(max_rel_diff(d, 1), 1e-12) << cfg.describe();
    const auto f = trained_looking<float>(cfg, c.n);
    EXPECT_LT(max_rel_diff(f, 2), 1e-4) << cfg.describe();
  }
}

TEST(FastInfer, ReusableAndLengthChecked) {
  NetConfig cfg;
  cfg.depth = 4;
  cfg.width = 8;
  cfg.input_length = 40;
  cfg.pool_bins = 1;
  const auto net = trained_looking<double>(cfg, 3);
  FastPreprocNet<double> fast(net);
  EXPECT_EQ(fast.input_length(), 40u);
  std::vector<double> y(40, 0.5), z(40), z2(40);
  fast.residual(y, z);
  fast.residual(y, z2);
  EXPECT_EQ(z, z2);
  const auto x = fast.clean(y);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_DOUBLE_EQ(x[i], y[i] - z[i]);
  std::vector<double> wrong(39);
  EXPECT_THROW(fast.clean(wrong), std::invalid_argument);
}

TEST(FastInfer, DoublingLengthKeepsSamePadding) {
  NetConfig cfg;
  cfg.depth = 5;
  cfg.width = 8;
  cfg.input_length = 100;
  cfg.pool_bins = 1;
  const auto a = trained_looking<double>(cfg, 4);
  cfg.input_length = 200;
  PreprocNet<double> b(cfg);
  load_params(b, flatten_params(a));
  auto src = a.buffers();
  auto dst = b.buffers();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].values = *src[i].values;
  FastPreprocNet<double> fb(b);
  std::vector<double> y(200, 1.0);
  EXPECT_EQ(fb.clean(y).size(), 200u);
}

TEST(FastInfer, ZeroLastConvIsIdentity) {
  NetConfig cfg;
  cfg.depth = 4;
  cfg.width = 8;
  cfg.input_length = 50;
  cfg.pool_bins = 1;
  auto net = trained_looking<float>(cfg, 5);
  std::fill(net.last().weight.value.begin(), net.last().weight.value.end(), 0.0f);
  std::fill(net.last().bias.value.begin(), net.last().bias.value.end(), 0.0f);
  FastPreprocNet<float> fast(net);
  std::vector<float> y(50);
  for (std::size_t i = 0; i < 50; ++i) y[i] = 0.01f * float(i);
  EXPECT_EQ(fast.clean(y), y);
}
