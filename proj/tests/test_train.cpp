#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "specnet/gradcheck.hpp"
#include "specnet/simulator.hpp"
#include "specnet/train.hpp"
#include "test_util.hpp"

using namespace specnet;
using nn::Tensor;
using specnet::testing::random_tensor;

namespace {

NetConfig tiny(std::size_t n, std::size_t c = 2) {
  NetConfig cfg;
  cfg.depth = 3;
  cfg.width = 4;
  cfg.num_elements = c;
  cfg.input_length = n;
  cfg.pool_bins = 1;
  cfg.head_hidden = 4;
  return cfg;
}

Tensor<double> rows(const std::vector<std::vector<double>>& r) { return pack_batch<double>(r); }

Tensor<double> targets(const std::vector<std::vector<double>>& r) {
  Tensor<double> t(r.size(), r.front().size(), 1);
  for (std::size_t b = 0; b < r.size(); ++b) std::copy(r[b].begin(), r[b].end(), t.item(b));
  return t;
}

PreprocNet<double> zero_residual_net(std::size_t n) {
  PreprocNet<double> net(tiny(n));
  Rng init(1);
  net.init(init);
  std::fill(net.last().weight.value.begin(), net.last().weight.value.end(), 0.0);
  return net;
}

CalibHead<double> constant_head(const std::vector<double>& out) {
  CalibHead<double> head(tiny(4, out.size()));
  for (auto& p : head.parameters()) std::fill(p.param->value.begin(), p.param->value.end(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) head.branches()[k].out.bias.value[0] = out[k];
  return head;
}

SupervisedSet synthetic_preproc_set(std::size_t n, std::uint64_t seed) {
  DatasetOptions opt;
  opt.seed = seed;
  const auto recs = make_dataset(n, DirichletCompositionSampler{}, DefaultParamSampler{}, EmissionLineDB::builtin(),
                                 make_uniform_axis(64, 240, 905), opt);
  SupervisedSet s;
  for (const auto& r : recs) {
    s.inputs.push_back(r.raw.intensities());
    s.targets.push_back(r.clean_1b->intensities());
  }
  return s;
}

}  // namespace

TEST(MeanL2Error, ValueAndGradient) {
  const auto lv = mean_l2_error(targets({{10, 0}, {0, 0}}), targets({{13, 4}, {0, 0}}));
  EXPECT_DOUBLE_EQ(lv.value, 2.5);
  EXPECT_DOUBLE_EQ(lv.grad.values[0], 0.5 * 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(lv.grad.values[1], 0.5 * 4.0 / 5.0);
  EXPECT_EQ(lv.grad.values[2], 0.0);  // zero error: zero subgradient
  EXPECT_EQ(lv.grad.values[3], 0.0);
  EXPECT_THROW(mean_l2_error(targets({{1, 2}}), targets({{1, 2, 3}})), std::invalid_argument);
}

TEST(LossPreproc, Examples) {
  const PreprocNet<double> net = zero_residual_net(2);
  // R = 0, so the loss is the mean of ||y - x||.
  EXPECT_DOUBLE_EQ(loss_preproc(net, rows({{1, 0}}), rows({{0, 0}})), 1.0);
  EXPECT_DOUBLE_EQ(loss_preproc(net, rows({{1, 0}, {0, 3}}), rows({{0, 0}, {0, 0}})), 2.0);
  EXPECT_EQ(loss_preproc(net, rows({{0.5, 0.25}}), rows({{0.5, 0.25}})), 0.0);
}

TEST(LossCalib, Examples) {
  std::vector<double> pred(8, 0.0), truth(8, 0.0);
  pred[0] = 13;
  pred[1] = 4;
  truth[0] = 10;
  const CalibHead<double> head = constant_head(pred);
  std::mt19937_64 rng(2);
  const Tensor<double> x = random_tensor(rng, 1, 1, 4);
  EXPECT_DOUBLE_EQ(loss_calib(head, x, targets({truth})), 5.0);
  EXPECT_EQ(loss_calib(head, x, targets({pred})), 0.0);

  const Tensor<double> x3 = random_tensor(rng, 3, 1, 4);
  std::vector<std::vector<double>> t{truth, pred, std::vector<double>(8, 1.0)};
  const double a = loss_calib(head, x3, targets(t));
  std::swap(t[0], t[2]);
  EXPECT_DOUBLE_EQ(loss_calib(head, x3, targets(t)), a);
}

TEST(LossE2e, Examples) {
  std::vector<double> pred(8, 0.0), truth(8, 0.0);
  pred[0] = 13;
  pred[1] = 4;
  truth[0] = 10;
  NetConfig cfg = tiny(4, 8);
  PreprocNet<double> trunk(cfg);
  Rng init(3);
  trunk.init(init);
  const EndToEndNet<double> net(trunk, constant_head(pred));
  std::mt19937_64 rng(4);
  const Tensor<double> y = random_tensor(rng, 1, 1, 4);
  EXPECT_DOUBLE_EQ(loss_e2e(net, y, targets({truth})), 5.0);
  EXPECT_EQ(loss_e2e(net, y, targets({pred})), 0.0);
}

TEST(LossGradients, MatchFiniteDifferences) {
  for (const std::string c : {"loss_preproc", "loss_calib", "loss_e2e"}) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const GradCheckResult r = run_gradcheck(c, {1e-6, 1e-4, seed});
      EXPECT_TRUE(r.pass) << c << " seed " << seed << " error " << r.max_rel_error;
    }
  }
}

TEST(Adam, FirstStepMatchesHandDerivation) {
  AdamState s(1, 0.1);
  std::vector<double> theta{1.0};
  const std::vector<double> g{1.0};
  adam_step<double>(s, theta, g);
  EXPECT_EQ(s.t, 1u);
  EXPECT_NEAR(theta[0], 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)), 1e-12);
}

TEST(Adam, ZeroGradientAndZeroRateLeaveParameters) {
  AdamState s(2, 0.1);
  std::vector<double> theta{0.3, -2.0};
  adam_step<double>(s, theta, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(theta, (std::vector<double>{0.3, -2.0}));
  AdamState z(2, 0.0);
  adam_step<double>(z, theta, std::vector<double>{5.0, -1.0});
  EXPECT_EQ(theta, (std::vector<double>{0.3, -2.0}));
}

TEST(Adam, MinimizesQuadratic) {
  AdamState s(1, 0.1);
  std::vector<double> theta{1.0};
  int steps = 0;
  while (std::abs(theta[0]) >= 1e-3 && steps < 200) {
    adam_step<double>(s, theta, std::vector<double>{2.0 * theta[0]});
    ++steps;
  }
  EXPECT_LT(std::abs(theta[0]), 1e-3);
  EXPECT_LE(steps, 200);
}

TEST(Adam, NonFiniteGradientNamesIndex) {
  AdamState s(3, 0.1);
  std::vector<double> theta{1, 2, 3};
  try {
    adam_step<double>(s, theta, std::vector<double>{0, NAN, 0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
}

TEST(EpochBatches, DropsTrailingSingletonAndCoversIndices) {
  TrainConfig c;
  c.batch_size = 4;
  c.seed = 3;
  const auto b = epoch_batches(9, c, 1);
  ASSERT_EQ(b.size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_EQ(epoch_batches(10, c, 1).back().size(), 2u);
  EXPECT_EQ(epoch_batches(9, c, 1), epoch_batches(9, c, 1));
  EXPECT_NE(epoch_batches(40, c, 1), epoch_batches(40, c, 2));
  c.shuffle = false;
  EXPECT_EQ(epoch_batches(5, c, 1).front(), (std::vector<std::size_t>{0, 1, 2, 3}));
  c.batch_size = 1;
  EXPECT_THROW(epoch_batches(5, c, 1), std::invalid_argument);
}

TEST(FitPreproc, ZeroRateKeepsParametersAndTraceHasOneRowPerEpoch) {
  const SupervisedSet s = synthetic_preproc_set(12, 1);
  PreprocNet<double> net(tiny(64));
  Rng init(5);
  net.init(init);
  const auto before = flatten_params(net);
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 3;
  c.batch_size = 4;
  const auto trace = fit_preproc(net, s, c);
  EXPECT_EQ(trace.size(), 3u);
  EXPECT_EQ(flatten_params(net), before);
}

TEST(FitPreproc, DeterministicWithValidationRows) {
  const SupervisedSet s = synthetic_preproc_set(96, 2);
  TrainConfig c;
  c.epochs = 8;
  c.lr = 3e-3;
  c.seed = 4;
  auto run = [&] {
    PreprocNet<float> net(tiny(64));
    Rng init(6);
    net.init(init);
    auto trace = fit_preproc(net, s, c, &s);
    return std::make_pair(flatten_params(net), trace);
  };
  const auto [a, trace] = run();
  const auto [b, trace2] = run();
  EXPECT_EQ(a, b);
  ASSERT_EQ(trace.size(), 16u);
  EXPECT_EQ(trace[1].split, "validation");
}

SupervisedSet composition_set(std::size_t n, std::uint64_t seed, bool clean) {
  DatasetOptions opt;
  opt.seed = seed;
  const auto recs = make_dataset(n, DirichletCompositionSampler{}, DefaultParamSampler{}, EmissionLineDB::builtin(),
                                 make_uniform_axis(64, 240, 905), opt);
  SupervisedSet s;
  for (const auto& r : recs) {
    s.inputs.push_back(clean ? r.clean_1b->intensities() : r.raw.intensities());
    s.targets.push_back(r.composition->oxide_wt_pct);
  }
  return s;
}

class FitLearns : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(FitLearns, FinalEpochLossBelowFirst) {
  const std::uint64_t seed = GetParam();
  TrainConfig c;
  c.epochs = 6;
  c.lr = 3e-3;
  c.seed = seed;
  {
    PreprocNet<double> net(tiny(64));
    Rng init(seed);
    net.init(init);
    const auto t = fit_preproc(net, synthetic_preproc_set(96, seed), c);
    EXPECT_LT(t.back().loss, t.front().loss) << "preproc";
  }
  NetConfig cfg = tiny(64, 8);
  cfg.pool_bins = 4;
  {
    CalibHead<double> head(cfg);
    Rng init(seed);
    head.init(init);
    const auto t = fit_calib(head, composition_set(96, seed, true), c);
    EXPECT_LT(t.back().loss, t.front().loss) << "calib";
  }
  {
    EndToEndNet<double> net(cfg);
    Rng init(seed);
    net.init(init);
    const auto t = fit_e2e(net, composition_set(96, seed, false), c);
    EXPECT_LT(t.back().loss, t.front().loss) << "e2e";
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, FitLearns, ::testing::Values(0u, 1u, 2u));

TEST(FitCalibAndE2e, ZeroRateAndStandardization) {
  DatasetOptions opt;
  opt.seed = 3;
  const auto recs = make_dataset(10, DirichletCompositionSampler{}, DefaultParamSampler{}, EmissionLineDB::builtin(),
                                 make_uniform_axis(64, 240, 905), opt);
  SupervisedSet s;
  for (const auto& r : recs) {
    s.inputs.push_back(r.raw.intensities());
    s.targets.push_back(r.composition->oxide_wt_pct);
  }
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 2;
  c.batch_size = 4;
  NetConfig cfg = tiny(64, 8);
  CalibHead<double> head(cfg);
  Rng init(7);
  head.init(init);
  const auto before = flatten_params(head);
  fit_calib(head, s, c);
  EXPECT_EQ(flatten_params(head), before);
  double mean0 = 0.0;
  for (const auto& t : s.targets) mean0 += t[0] / 10.0;
  EXPECT_NEAR(head.output_offset()[0], mean0, 1e-9);
  EXPECT_GT(head.output_scale()[0], 0.0);

  EndToEndNet<double> net(cfg);
  net.init(init);
  const auto before_e2e = flatten_params(net);
  fit_e2e(net, s, c);
  EXPECT_EQ(flatten_params(net), before_e2e);
}

TEST(StandardizeOutputs, ZeroVarianceKeepsUnitScale) {
  CalibHead<double> head(tiny(4, 2));
  standardize_outputs(head, {{1.0, 5.0}, {3.0, 5.0}});
  EXPECT_DOUBLE_EQ(head.output_offset()[0], 2.0);
  EXPECT_DOUBLE_EQ(head.output_scale()[0], 1.0);
  EXPECT_DOUBLE_EQ(head.output_offset()[1], 5.0);
  EXPECT_DOUBLE_EQ(head.output_scale()[1], 1.0);
  standardize_outputs(head, {{1.0, 5.0}, {5.0, 5.0}});
  EXPECT_DOUBLE_EQ(head.output_scale()[0], 2.0);
}

TEST(Fit, NonFiniteLossAbortsWithEpochAndBatch) {
  SupervisedSet s = synthetic_preproc_set(8, 5);
  s.inputs[3][10] = NAN;
  PreprocNet<double> net(tiny(64));
  Rng init(8);
  net.init(init);
  TrainConfig c;
  c.shuffle = false;
  c.batch_size = 4;
  try {
    fit_preproc(net, s, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
  }
}

TEST(DatasetLoss, IndependentOfShuffleOrder) {
  SupervisedSet s = synthetic_preproc_set(70, 6);
  PreprocNet<double> net(tiny(64));
  Rng init(9);
  net.init(init);
  const double a = dataset_loss_preproc(net, s);
  std::reverse(s.inputs.begin(), s.inputs.end());
  std::reverse(s.targets.begin(), s.targets.end());
  EXPECT_NEAR(dataset_loss_preproc(net, s), a, 1e-12);
}

TEST(LossTrace, CsvFormat) {
  specnet::testing::TempDir dir("trace");
  write_loss_trace({{1, "train", 0.5}, {1, "validation", 0.25}}, dir.str("t.csv"));
  std::ifstream in(dir.str("t.csv"));
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(all, "epoch,split,loss\n1,train,0.5\n1,validation,0.25\n");
}
