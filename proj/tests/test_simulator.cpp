#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "specnet/errors.hpp"
#include "specnet/simulator.hpp"

using namespace specnet;

namespace {

EmissionLineDB two_element_db() {
  EmissionLineDB db;
  db.add_line("A", {400.0, 2.0, 1.0});
  db.add_line("B", {600.0, 3.0, 0.5});
  return db;
}

AcquisitionParams quiet_params(std::size_t n) {
  AcquisitionParams p;
  p.irf.assign(n, 1.0);
  return p;
}

}  // namespace

TEST(Composition, Invariants) {
  EXPECT_NO_THROW((Composition{{"A", "B"}, {60, 40}}.validate()));
  EXPECT_THROW((Composition{{"A", "B"}, {60, 41}}.validate()), std::invalid_argument);
  EXPECT_THROW((Composition{{"A", "B"}, {-1, 40}}.validate()), std::invalid_argument);
  EXPECT_THROW((Composition{{"A"}, {1, 2}}.validate()), std::invalid_argument);
  EXPECT_EQ(major_oxides(), (std::vector<std::string>{"SiO2", "TiO2", "Al2O3", "FeOT", "MgO", "CaO", "Na2O", "K2O"}));
}

TEST(EmissionLineDB, BuiltinCoversOxidesWithThreeToSixLines) {
  const EmissionLineDB db = EmissionLineDB::builtin();
  for (const auto& e : major_oxides()) {
    ASSERT_TRUE(db.has(e)) << e;
    EXPECT_GE(db.lines(e).size(), 3u);
    EXPECT_LE(db.lines(e).size(), 6u);
  }
  EXPECT_NO_THROW(db.check_covers(*default_axis()));
  EXPECT_NO_THROW(db.check_covers(*full_resolution_axis()));
  EXPECT_THROW(db.check_covers(*make_uniform_axis(16, 500, 600)), std::invalid_argument);
}

TEST(EmissionLineDB, CsvParsingErrorsNameTheLine) {
  EXPECT_NO_THROW(EmissionLineDB::from_csv_text("element,center_nm,width_nm,strength\nA,400,1,1\n"));
  try {
    EmissionLineDB::from_csv_text("element,center_nm,width_nm,strength\nA,400,1,1\nB,500,1\n");
    FAIL() << "expected a parse error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(EmissionLineDB::from_csv_text("element,center_nm,width_nm,strength\nA,400,0,1\n"), DataError);
}

TEST(SynthClean, Examples) {
  const auto db = two_element_db();
  const auto axis = make_axis({396, 398, 400, 402, 404, 598, 600, 602});
  const Spectrum zero = synth_clean({{"A", "B"}, {0, 0}}, db, axis);
  for (double v : zero.intensities()) EXPECT_EQ(v, 0.0);

  const Spectrum a = synth_clean({{"A"}, {100}}, db, axis);
  EXPECT_DOUBLE_EQ(a[2], 1.0);
  EXPECT_NEAR(a[3], std::exp(-0.5), 1e-12);

  const Spectrum b = synth_clean({{"B"}, {100}}, db, axis);
  const Spectrum mix = synth_clean({{"A", "B"}, {50, 50}}, db, axis);
  for (std::size_t i = 0; i < axis->size(); ++i) EXPECT_NEAR(mix[i], 0.5 * (a[i] + b[i]), 1e-12);

  EXPECT_THROW(synth_clean({{"C"}, {10}}, db, axis), std::invalid_argument);
}

TEST(SynthClean, LinearInComposition) {
  const auto db = EmissionLineDB::builtin();
  const auto axis = default_axis();
  Rng rng(4);
  DirichletCompositionSampler sampler;
  for (int rep = 0; rep < 10; ++rep) {
    const Composition c1 = sampler(rng), c2 = sampler(rng);
    const double a = 0.3, b = 0.6;
    Composition mix{c1.element_names, {}};
    for (std::size_t k = 0; k < c1.size(); ++k) mix.oxide_wt_pct.push_back(a * c1.oxide_wt_pct[k] + b * c2.oxide_wt_pct[k]);
    const Spectrum s1 = synth_clean(c1, db, axis), s2 = synth_clean(c2, db, axis), sm = synth_clean(mix, db, axis);
    for (std::size_t i = 0; i < axis->size(); ++i) {
      EXPECT_NEAR(sm[i], a * s1[i] + b * s2[i], 1e-10);
      EXPECT_GE(sm[i], 0.0);
    }
  }
}

TEST(SynthNoise, Examples) {
  const auto axis = make_axis({240, 290, 340, 440});
  AcquisitionParams p = quiet_params(4);
  p.dark_level = 0.1;
  const Spectrum dark = synth_noise(p, axis);
  for (double v : dark.intensities()) EXPECT_DOUBLE_EQ(v, 0.1);
  p.dark_level = 0.0;
  const Spectrum none = synth_noise(p, axis);
  for (double v : none.intensities()) EXPECT_EQ(v, 0.0);
  p.continuum_amplitude = 1.0;
  p.continuum_decay_nm = 100.0;
  const Spectrum z = synth_noise(p, axis);
  EXPECT_DOUBLE_EQ(z[0], 1.0);
  EXPECT_NEAR(z[2], 0.367879, 1e-6);
}

TEST(SynthNoise, DeterministicAndZeroMean) {
  const std::size_t n = 100000;
  const auto axis = make_uniform_axis(n, 240, 905);
  AcquisitionParams p;
  p.irf.assign(n, 1.0);
  p.noise_sigma = 0.5;
  p.rng_seed = 42;
  const Spectrum a = synth_noise(p, axis), b = synth_noise(p, axis);
  EXPECT_EQ(a.intensities(), b.intensities());
  double mean = 0.0;
  for (double v : a.intensities()) mean += v;
  mean /= static_cast<double>(n);
  EXPECT_LT(std::abs(mean), 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST(ApplyIrf, Examples) {
  const auto axis = make_axis({1, 2});
  AcquisitionParams p = quiet_params(2);
  const Spectrum s(axis, {1, 2});
  EXPECT_EQ(apply_irf(s, p).intensities(), s.intensities());
  p.irf = {0.5, 2.0};
  EXPECT_EQ(apply_irf(s, p).intensities(), (std::vector<double>{0.5, 4.0}));
  const Spectrum back = apply_irf(s, p);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(back[i] / p.irf[i], s[i], 1e-12);
  p.irf = {1.0};
  EXPECT_THROW(apply_irf(s, p), std::invalid_argument);
}

TEST(ApplyDistance, Examples) {
  const auto axis = make_axis({1, 2});
  const Spectrum s(axis, {49, 8});
  EXPECT_EQ(apply_distance(s, 1.0).intensities(), s.intensities());
  EXPECT_EQ(apply_distance(s, 2.0).intensities(), (std::vector<double>{12.25, 2.0}));
  EXPECT_DOUBLE_EQ(apply_distance(s, 7.0)[0], 1.0);
  EXPECT_THROW(apply_distance(s, 0.0), std::invalid_argument);
  EXPECT_THROW(apply_distance(s, -1.0), std::invalid_argument);
}

TEST(AcquisitionParams, Validation) {
  AcquisitionParams p = quiet_params(3);
  EXPECT_NO_THROW(p.validate(3));
  p.distance_m = 8.0;
  EXPECT_THROW(p.validate(3), std::invalid_argument);
  p.distance_m = 1.0;
  p.irf[1] = 0.0;
  EXPECT_THROW(p.validate(3), std::invalid_argument);
}

TEST(MakeShot, NoCorruptionGivesEqualRawAndClean) {
  const auto db = EmissionLineDB::builtin();
  const auto axis = default_axis();
  Rng rng(1);
  const Composition c = DirichletCompositionSampler{}(rng);
  const AcquisitionParams p = quiet_params(axis->size());
  for (auto level : {PreprocLevel::level_1a, PreprocLevel::level_1b}) {
    const Shot s = make_shot(c, p, db, axis, level);
    const Spectrum x = normalize_l2(synth_clean(c, db, axis));
    for (std::size_t i = 0; i < axis->size(); ++i) {
      EXPECT_NEAR(s.raw[i], x[i], 1e-12);
      EXPECT_NEAR(s.clean[i], x[i], 1e-12);
    }
  }
}

TEST(MakeShot, LevelsDifferInTheirLabels) {
  const auto db = EmissionLineDB::builtin();
  const auto axis = default_axis();
  Rng rng(2);
  const Composition c = DirichletCompositionSampler{}(rng);
  AcquisitionParams p;
  p.irf = default_irf(*axis);
  p.dark_level = 0.05;
  p.continuum_amplitude = 0.3;
  p.distance_m = 3.0;
  p.rng_seed = 9;

  const ShotComponents parts = synth_shot_components(c, p, db, axis);
  const Spectrum received = apply_distance(apply_irf(parts.clean, p), p.distance_m);
  for (std::size_t i = 0; i < axis->size(); ++i) {
    EXPECT_NEAR(parts.raw[i] - parts.noise[i], received[i], 1e-12);
    EXPECT_EQ(parts.received[i], received[i]);
  }

  const Shot s1a = make_shot(c, p, db, axis, PreprocLevel::level_1a, Normalization::max);
  const Shot s1b = make_shot(c, p, db, axis, PreprocLevel::level_1b, Normalization::max);
  EXPECT_EQ(s1a.raw.intensities(), s1b.raw.intensities());
  const Spectrum want_1a = normalize_max(received), want_1b = normalize_max(parts.clean);
  for (std::size_t i = 0; i < axis->size(); ++i) {
    EXPECT_NEAR(s1a.clean[i], want_1a[i], 1e-12);
    EXPECT_NEAR(s1b.clean[i], want_1b[i], 1e-12);
  }
  const Shot again = make_shot(c, p, db, axis, PreprocLevel::level_1b, Normalization::max);
  EXPECT_EQ(again.raw.intensities(), s1b.raw.intensities());
}

TEST(MakeShot, ZeroSigmaRawMinusLabelIsDeterministicNoise) {
  const auto db = EmissionLineDB::builtin();
  const auto axis = default_axis();
  Rng rng(8);
  const Composition c = DirichletCompositionSampler{}(rng);
  AcquisitionParams p = quiet_params(axis->size());
  p.dark_level = 0.02;
  p.continuum_amplitude = 0.4;
  p.continuum_decay_nm = 150.0;
  p.distance_m = 2.0;
  const ShotComponents parts = synth_shot_components(c, p, db, axis);
  const double lmin = axis->front();
  for (std::size_t i = 0; i < axis->size(); ++i) {
    const double z = 0.02 + 0.4 * std::exp(-(axis->values()[i] - lmin) / 150.0);
    EXPECT_NEAR(parts.raw[i] - parts.received[i], z, 1e-12);
  }
}

TEST(MakeDataset, ErrorsDeterminismAndInvariants) {
  const auto db = EmissionLineDB::builtin();
  const auto axis = default_axis();
  DatasetOptions opt;
  opt.seed = 5;
  EXPECT_THROW(make_dataset(0, DirichletCompositionSampler{}, DefaultParamSampler{}, db, axis, opt),
               std::invalid_argument);

  const auto a = make_dataset(1000, DirichletCompositionSampler{}, DefaultParamSampler{}, db, axis, opt);
  ASSERT_EQ(a.size(), 1000u);
  for (const auto& r : a) {
    ASSERT_TRUE(r.composition);
    EXPECT_NO_THROW(r.composition->validate());
    EXPECT_GE(r.distance_m, 1.0);
    EXPECT_LE(r.distance_m, 7.0);
    EXPECT_TRUE(r.clean_1b);
    EXPECT_FALSE(r.clean_1a);
  }
  const auto b = make_dataset(20, DirichletCompositionSampler{}, DefaultParamSampler{}, db, axis, opt);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(a[i].raw.intensities(), b[i].raw.intensities());
    EXPECT_EQ(a[i].clean_1b->intensities(), b[i].clean_1b->intensities());
    EXPECT_EQ(a[i].composition->oxide_wt_pct, b[i].composition->oxide_wt_pct);
  }
}

TEST(MakeDataset, ShotsPerTargetShareComposition) {
  DatasetOptions opt;
  opt.shots_per_target = 3;
  opt.level = PreprocLevel::level_1a;
  const auto recs = make_dataset(7, DirichletCompositionSampler{}, DefaultParamSampler{}, EmissionLineDB::builtin(),
                                 default_axis(), opt);
  std::map<std::string, std::vector<double>> by_target;
  for (const auto& r : recs) {
    EXPECT_TRUE(r.clean_1a);
    auto [it, fresh] = by_target.emplace(r.target_id, r.composition->oxide_wt_pct);
    if (!fresh) EXPECT_EQ(it->second, r.composition->oxide_wt_pct);
  }
  EXPECT_EQ(by_target.size(), 3u);
}
