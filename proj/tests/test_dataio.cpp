#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "specnet/dataio.hpp"
#include "specnet/simulator.hpp"
#include "test_util.hpp"

using namespace specnet;
using specnet::testing::TempDir;

namespace {

DatasetManifest small_manifest(std::size_t n, std::uint64_t seed) {
  DatasetOptions opt;
  opt.seed = seed;
  opt.level = PreprocLevel::level_1a;
  DatasetManifest m;
  m.axis = make_uniform_axis(32, 240, 905);
  m.provenance = "synthetic: seed=" + std::to_string(seed);
  m.records = make_dataset(n, DirichletCompositionSampler{}, DefaultParamSampler{}, EmissionLineDB::builtin(), m.axis,
                           opt);
  return m;
}

void expect_same_spectrum(const Spectrum& a, const Spectrum& b) {
  EXPECT_TRUE(a.axis() == b.axis());
  EXPECT_EQ(a.intensities(), b.intensities());
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

DatasetManifest tagged(const std::vector<std::pair<std::string, std::size_t>>& targets) {
  DatasetManifest m;
  m.axis = make_uniform_axis(2, 240, 250);
  std::size_t k = 0;
  for (const auto& [t, n] : targets) {
    for (std::size_t i = 0; i < n; ++i) {
      m.records.push_back(ShotRecord{"s" + std::to_string(k++), t, "", 1.0, Spectrum(m.axis, {0.0, 1.0}), {}, {}, {}});
    }
  }
  return m;
}

std::set<std::string> targets_of(const DatasetManifest& m, const std::vector<std::size_t>& idx) {
  std::set<std::string> out;
  for (auto i : idx) out.insert(m.records[i].target_id);
  return out;
}

}  // namespace

TEST(SpectrumCsv, RoundTripIsExact) {
  TempDir dir("spec");
  const auto axis = make_axis({240.125, 241.0 / 3.0 + 200.0, 905.5});
  const Spectrum s(axis, {0.1, 1.0 / 3.0, 1e-300});
  save_spectrum_csv(s, dir.str("a.csv"));
  expect_same_spectrum(load_spectrum_csv(dir.str("a.csv")), s);
  const Spectrum shared = load_spectrum_csv(dir.str("a.csv"), axis);
  EXPECT_EQ(shared.axis_ptr(), axis);
}

TEST(SpectrumCsv, ThreeColumnRowNamesLine) {
  TempDir dir("spec");
  write_file(dir.str("bad.csv"), "wavelength_nm,intensity\n240,1\n241,2,3\n");
  try {
    load_spectrum_csv(dir.str("bad.csv"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.csv:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected 2 columns"), std::string::npos) << msg;
  }
}

TEST(SpectrumCsv, MissingHeaderAxisMismatchAndMissingFile) {
  TempDir dir("spec");
  write_file(dir.str("nohdr.csv"), "240,1\n");
  EXPECT_THROW(load_spectrum_csv(dir.str("nohdr.csv")), DataError);
  write_file(dir.str("a.csv"), "wavelength_nm,intensity\n240,1\n241,2\n");
  EXPECT_THROW(load_spectrum_csv(dir.str("a.csv"), make_axis({240, 242})), DataError);
  EXPECT_THROW(load_spectrum_csv(dir.str("a.csv"), make_axis({240, 241, 242})), DataError);
  EXPECT_THROW(load_spectrum_csv(dir.str("none.csv")), DataError);
}

TEST(Manifest, EmptyRecordListIsValid) {
  TempDir dir("man");
  DatasetManifest m;
  m.axis = make_uniform_axis(4, 240, 905);
  m.provenance = "empty";
  save_manifest(m, dir.str("d"));
  const DatasetManifest back = load_manifest(dir.str("d"));
  EXPECT_TRUE(back.records.empty());
  EXPECT_EQ(back.provenance, "empty");
  EXPECT_TRUE(*back.axis == *m.axis);
}

TEST(Manifest, RoundTripReproducesEveryValue) {
  TempDir dir("man");
  const DatasetManifest m = small_manifest(12, 3);
  save_manifest(m, dir.str("d"));
  for (const std::string path : {dir.str("d"), dir.str("d/manifest.jsonl")}) {
    const DatasetManifest back = load_manifest(path);
    ASSERT_EQ(back.records.size(), m.records.size());
    EXPECT_EQ(back.provenance, m.provenance);
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const auto &a = m.records[i], &b = back.records[i];
      EXPECT_EQ(a.shot_id, b.shot_id);
      EXPECT_EQ(a.target_id, b.target_id);
      EXPECT_EQ(a.session, b.session);
      EXPECT_EQ(a.distance_m, b.distance_m);
      expect_same_spectrum(a.raw, b.raw);
      ASSERT_EQ(a.clean_1a.has_value(), b.clean_1a.has_value());
      ASSERT_EQ(a.clean_1b.has_value(), b.clean_1b.has_value());
      if (a.clean_1a) expect_same_spectrum(*a.clean_1a, *b.clean_1a);
      if (a.clean_1b) expect_same_spectrum(*a.clean_1b, *b.clean_1b);
      ASSERT_TRUE(b.composition);
      EXPECT_EQ(a.composition->oxide_wt_pct, b.composition->oxide_wt_pct);
      EXPECT_EQ(a.composition->element_names, b.composition->element_names);
      EXPECT_EQ(b.raw.axis_ptr(), back.axis);  // one shared axis
    }
  }
}

TEST(Manifest, MalformedLinesNameTheLine) {
  TempDir dir("man");
  save_manifest(small_manifest(3, 1), dir.str("d"));
  const std::string path = dir.str("d/manifest.jsonl");
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  in.close();
  write_file(path, l1 + "\n" + l2 + "\n{not json\n");
  try {
    load_manifest(dir.str("d"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  write_file(path, l1 + "\n{\"shot_id\": \"x\"}\n");
  try {
    load_manifest(dir.str("d"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  write_file(path, l1 + "\n" + l1 + "\n");
  EXPECT_THROW(load_manifest(dir.str("d")), DataError);  // duplicate shot id
  EXPECT_THROW(load_manifest(dir.str("missing")), DataError);
}

TEST(PartitionRandom, Examples) {
  const DatasetManifest m = tagged({{"A", 10}});
  const Split s = partition_random(m, 0.6, 5);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.test.size(), 4u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 10u);
  const Split again = partition_random(m, 0.6, 5);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
}

TEST(PartitionRandom, Errors) {
  EXPECT_THROW(partition_random(tagged({{"A", 1}}), 0.6, 0), DataError);
  EXPECT_THROW(partition_random(tagged({{"A", 4}}), 0.0, 0), std::invalid_argument);
  EXPECT_THROW(partition_random(tagged({{"A", 4}}), 1.0, 0), std::invalid_argument);
  const Split s = partition_random(tagged({{"A", 3}}), 0.1, 0);  // floor gives 0, clamped to 1
  EXPECT_EQ(s.train.size(), 1u);
}

TEST(PartitionByTarget, ClosestFractionExample) {
  const DatasetManifest m = tagged({{"A", 3}, {"B", 2}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Split s = partition_by_target(m, 0.6, seed);
    EXPECT_EQ(targets_of(m, s.train), std::set<std::string>{"A"});
    EXPECT_EQ(targets_of(m, s.test), std::set<std::string>{"B"});
  }
}

TEST(PartitionByTarget, SingleTargetRejected) {
  try {
    partition_by_target(tagged({{"A", 5}}), 0.6, 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("cannot split by target"), std::string::npos);
  }
}

TEST(PartitionByTarget, DisjointExhaustiveAndDeterministicOnRandomManifests) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n_targets = 2 + rng() % 12;
    std::vector<std::pair<std::string, std::size_t>> t;
    for (std::size_t k = 0; k < n_targets; ++k) t.emplace_back("T" + std::to_string(k), 1 + rng() % 9);
    const DatasetManifest m = tagged(t);
    const double frac = 0.05 + 0.9 * std::uniform_real_distribution<double>()(rng);
    const Split s = partition_by_target(m, frac, rng());
    const auto a = targets_of(m, s.train), b = targets_of(m, s.test);
    for (const auto& x : a) EXPECT_EQ(b.count(x), 0u);
    EXPECT_FALSE(a.empty());
    EXPECT_FALSE(b.empty());
    EXPECT_EQ(s.train.size() + s.test.size(), m.records.size());
  }
  const DatasetManifest m = tagged({{"A", 3}, {"B", 2}, {"C", 4}, {"D", 1}, {"E", 5}});
  const Split x = partition_by_target(m, 0.6, 9), y = partition_by_target(m, 0.6, 9);
  EXPECT_EQ(x.train, y.train);
  EXPECT_EQ(x.train.size(), 9u);  // 9 of 15 is reachable exactly
}

TEST(Select, PicksRecordsInOrder) {
  const DatasetManifest m = tagged({{"A", 4}});
  const auto r = select(m.records, {3, 1});
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].shot_id, "s3");
  EXPECT_EQ(r[1].shot_id, "s1");
}

namespace {

NetConfig small_config() {
  NetConfig c;
  c.depth = 4;
  c.width = 4;
  c.input_length = 32;
  c.pool_bins = 4;
  c.head_hidden = 8;
  c.num_elements = 3;
  c.element_names = {"SiO2", "MgO", "K2O"};
  return c;
}

template <typename Net>
Net random_net(std::uint64_t seed) {
  Net net(small_config());
  Rng rng(seed);
  net.init(rng);
  // Non-default buffers must survive too.
  for (auto& b : net.buffers()) {
    for (auto& v : *b.values) v += 0.25;
  }
  return net;
}

}  // namespace

TEST(ModelFile, RoundTripIsBitwise) {
  TempDir dir("model");
  std::mt19937_64 rng(3);
  const auto y = specnet::testing::random_tensor<float>(rng, 3, 1, 32);
  {
    const auto net = random_net<PreprocNet<float>>(1);
    save_model(net, dir.str("p.bin"));
    const auto back = load_model<PreprocNet<float>>(dir.str("p.bin"));
    EXPECT_EQ(back.infer(y).x_hat.values, net.infer(y).x_hat.values);
    EXPECT_EQ(flatten_params(back), flatten_params(net));
    EXPECT_EQ(std::filesystem::file_size(dir.str("p.bin")), serialized_size(net));
    const ModelHeader h = read_model_header(dir.str("p.bin"));
    EXPECT_EQ(h.kind, ModelKind::preproc);
    EXPECT_EQ(h.precision, Precision::single);
    EXPECT_EQ(h.config, net.config());
  }
  {
    const auto net = random_net<CalibHead<double>>(2);
    save_model(net, dir.str("c.bin"));
    const auto back = load_model<CalibHead<double>>(dir.str("c.bin"));
    const auto x = specnet::testing::random_tensor<double>(rng, 3, 1, 32);
    EXPECT_EQ(back.forward(x).values, net.forward(x).values);
    EXPECT_EQ(back.output_offset(), net.output_offset());
  }
  {
    const auto net = random_net<EndToEndNet<float>>(3);
    save_model(net, dir.str("e.bin"));
    const auto back = load_model<EndToEndNet<float>>(dir.str("e.bin"));
    EXPECT_EQ(back.infer(y).values, net.infer(y).values);
  }
}

TEST(ModelFile, RejectsTamperingTruncationKindAndConfigMismatch) {
  TempDir dir("model");
  const auto net = random_net<PreprocNet<double>>(1);
  save_model(net, dir.str("p.bin"));
  std::string bytes;
  {
    std::ifstream in(dir.str("p.bin"), std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write_bytes = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir.str(name), std::ios::binary) << b;
  };
  std::string tampered = bytes;
  tampered[0] ^= 0x5a;
  write_bytes("magic.bin", tampered);
  EXPECT_THROW(load_model<PreprocNet<double>>(dir.str("magic.bin")), DataError);
  write_bytes("short.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_model<PreprocNet<double>>(dir.str("short.bin")), DataError);
  write_bytes("tiny.bin", bytes.substr(0, 10));
  EXPECT_THROW(load_model<PreprocNet<double>>(dir.str("tiny.bin")), DataError);
  EXPECT_THROW(load_model<CalibHead<double>>(dir.str("p.bin")), DataError);

  NetConfig other = small_config();
  other.depth = 5;
  try {
    load_model<PreprocNet<double>>(dir.str("p.bin"), &other);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(small_config().describe()), std::string::npos) << msg;
    EXPECT_NE(msg.find(other.describe()), std::string::npos) << msg;
  }
  const NetConfig same = small_config();
  EXPECT_NO_THROW(load_model<PreprocNet<double>>(dir.str("p.bin"), &same));
}

TEST(ModelKindNames, RoundTrip) {
  for (auto k : {ModelKind::preproc, ModelKind::calib, ModelKind::e2e}) EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("resnet"), std::invalid_argument);
}
