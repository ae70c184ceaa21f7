#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "specnet/rng.hpp"
#include "specnet/shot_record.hpp"
#include "specnet/spectra.hpp"

namespace specnet {

struct EmissionLine {
  double center_nm{0.0};
  double width_nm{1.0};  // gaussian standard deviation
  double strength{1.0};  // peak height at 100 wt.%
};

// Synthetic emission lines per oxide. Stands in for atomic physics so that
// experiments are self-contained.
class EmissionLineDB {
 public:
  EmissionLineDB() = default;

  // CSV with header `element,center_nm,width_nm,strength`.
  static EmissionLineDB from_csv_text(const std::string& text);
  static EmissionLineDB from_csv_file(const std::string& path);
  // The table shipped in data/emission_lines.csv.
  static EmissionLineDB builtin();

  void add_line(const std::string& element, EmissionLine line);
  bool has(const std::string& element) const { return lines_.count(element) != 0; }
  const std::vector<EmissionLine>& lines(const std::string& element) const;
  const std::vector<std::string>& elements() const { return order_; }

  // Throws if any line center lies outside [axis.front(), axis.back()].
  void check_covers(const WavelengthAxis& axis) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::vector<EmissionLine>> lines_;
};

struct AcquisitionParams {
  double dark_level{0.0};
  double continuum_amplitude{0.0};
  double continuum_decay_nm{100.0};
  double noise_sigma{0.0};
  double distance_m{1.0};
  std::vector<double> irf;  // per-bin gain, strictly positive
  std::uint64_t rng_seed{0};

  void validate(std::size_t n_bins) const;
};

// 512 bins over 240-905 nm.
AxisPtr default_axis();
// 5500 bins over 240-905 nm, the dimension of one ChemCam shot after gap removal.
AxisPtr full_resolution_axis();
// Smooth gain curve 1 + 0.1 sin(...) over the axis span.
std::vector<double> default_irf(const WavelengthAxis& axis);
std::vector<double> unit_irf(const WavelengthAxis& axis);

Spectrum synth_clean(const Composition& c, const EmissionLineDB& db, const AxisPtr& axis);
// dark + continuum * exp(-(lambda - lambda_min) / decay) + N(0, sigma).
Spectrum synth_noise(const AcquisitionParams& p, const AxisPtr& axis, Rng& rng);
// Same, with the generator seeded from p.rng_seed.
Spectrum synth_noise(const AcquisitionParams& p, const AxisPtr& axis);
Spectrum apply_irf(const Spectrum& s, const AcquisitionParams& p);
Spectrum apply_distance(const Spectrum& s, double distance_m);

// Unnormalized pieces of one simulated shot: raw = received + noise where
// received = apply_distance(apply_irf(clean)).
struct ShotComponents {
  Spectrum clean;
  Spectrum received;
  Spectrum noise;
  Spectrum raw;
};

ShotComponents synth_shot_components(const Composition& c, const AcquisitionParams& p,
                                     const EmissionLineDB& db, const AxisPtr& axis);

struct Shot {
  Spectrum raw;
  Spectrum clean;
  Composition composition;
};

// Level 1a labels keep the multiplicative effects (IRF, distance); level 1b
// labels remove them too. Both spectra are normalized with `norm`.
Shot make_shot(const Composition& c, const AcquisitionParams& p, const EmissionLineDB& db,
               const AxisPtr& axis, PreprocLevel level, Normalization norm = Normalization::l2);

using CompositionSampler = std::function<Composition(Rng&)>;
// Receives the unattenuated clean spectrum so background levels can be drawn
// relative to the signal that will reach the detector.
using ParamSampler = std::function<AcquisitionParams(Rng&, const Spectrum& clean)>;

// Dirichlet draw around a basaltic mean composition, scaled to a total in
// [total_lo, total_hi] wt.%.
struct DirichletCompositionSampler {
  std::vector<std::string> names = major_oxides();
  std::vector<double> mean_fraction{0.49, 0.015, 0.14, 0.14, 0.08, 0.09, 0.03, 0.015};
  double concentration{20.0};
  double total_lo{90.0};
  double total_hi{100.0};

  Composition operator()(Rng& rng) const;
};

// Background levels are drawn as fractions of the received peak intensity
// (after IRF and 1/d^2 attenuation), modeling an instrument whose gain tracks
// the returned signal.
struct DefaultParamSampler {
  double dark_lo{0.02}, dark_hi{0.10};
  double continuum_lo{0.2}, continuum_hi{0.8};
  double decay_lo_nm{80.0}, decay_hi_nm{250.0};
  double sigma_lo{0.005}, sigma_hi{0.02};
  double distance_lo_m{1.0}, distance_hi_m{7.0};
  std::vector<double> irf;  // empty: default_irf of the clean spectrum's axis

  AcquisitionParams operator()(Rng& rng, const Spectrum& clean) const;
};

struct DatasetOptions {
  PreprocLevel level{PreprocLevel::level_1b};
  Normalization normalization{Normalization::l2};
  std::size_t shots_per_target{1};
  std::uint64_t seed{0};
};

// Shot i draws its parameters and noise from substream(seed, "shot", i) and
// target t its composition from substream(seed, "composition", t), so the
// result does not depend on generation order.
std::vector<ShotRecord> make_dataset(std::size_t n_shots, const CompositionSampler& composition_sampler,
                                     const ParamSampler& param_sampler, const EmissionLineDB& db,
                                     const AxisPtr& axis, const DatasetOptions& options);

}  // namespace specnet
