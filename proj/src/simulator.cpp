#include "specnet/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "csv.hpp"
#include "specnet_builtin_lines.hpp"

namespace specnet {

void Composition::validate() const {
  if (element_names.size() != oxide_wt_pct.size()) {
    throw std::invalid_argument("composition: " + std::to_string(element_names.size()) + " names for " +
                                std::to_string(oxide_wt_pct.size()) + " values");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < oxide_wt_pct.size(); ++i) {
    const double v = oxide_wt_pct[i];
    if (!(v >= 0.0 && v <= 100.0)) {
      throw std::invalid_argument("composition: " + element_names[i] + " = " + std::to_string(v) +
                                  " outside [0, 100]");
    }
    total += v;
  }
  // Tolerate rounding in sums of values read back from text.
  if (total > 100.0 + 1e-9) {
    throw std::invalid_argument("composition: total " + std::to_string(total) + " exceeds 100 wt.%");
  }
}

const std::vector<std::string>& major_oxides() {
  static const std::vector<std::string> names{"SiO2", "TiO2", "Al2O3", "FeOT", "MgO", "CaO", "Na2O", "K2O"};
  return names;
}

std::string to_string(PreprocLevel level) { return level == PreprocLevel::level_1a ? "1a" : "1b"; }

PreprocLevel parse_level(const std::string& name) {
  if (name == "1a") return PreprocLevel::level_1a;
  if (name == "1b") return PreprocLevel::level_1b;
  throw std::invalid_argument("unknown preprocessing level '" + name + "' (expected 1a or 1b)");
}

void ShotRecord::validate() const {
  if (!(distance_m > 0.0)) throw std::invalid_argument("shot " + shot_id + ": distance must be > 0");
  for (const auto* s : {&clean_1a, &clean_1b}) {
    if (s->has_value() && !(*s)->same_axis(raw)) {
      throw std::invalid_argument("shot " + shot_id + ": clean spectrum on a different axis than raw");
    }
  }
  if (composition) composition->validate();
}

// ---------------------------------------------------------------------------
// EmissionLineDB

EmissionLineDB EmissionLineDB::from_csv_text(const std::string& text) {
  EmissionLineDB db;
  const auto rows = csv::lines(text);
  const std::string source = "emission lines";
  if (rows.empty()) throw csv::ParseError(source, 1, "missing header");
  const auto header = csv::split(rows[0]);
  if (header.size() != 4 || header[0] != "element" || header[1] != "center_nm" || header[2] != "width_nm" ||
      header[3] != "strength") {
    throw csv::ParseError(source, 1, "expected header element,center_nm,width_nm,strength");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (csv::trim(rows[i]).empty()) continue;
    const auto f = csv::split(rows[i]);
    if (f.size() != 4) {
      throw csv::ParseError(source, i + 1, "expected 4 columns, found " + std::to_string(f.size()));
    }
    EmissionLine line{csv::parse_double(f[1], source, i + 1), csv::parse_double(f[2], source, i + 1),
                      csv::parse_double(f[3], source, i + 1)};
    if (!(line.width_nm > 0.0) || !(line.strength > 0.0)) {
      throw csv::ParseError(source, i + 1, "width and strength must be positive");
    }
    db.add_line(std::string(f[0]), line);
  }
  return db;
}

EmissionLineDB EmissionLineDB::from_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open emission line file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_csv_text(ss.str());
}

EmissionLineDB EmissionLineDB::builtin() {
  static const EmissionLineDB db = from_csv_text(kBuiltinEmissionLines);
  return db;
}

void EmissionLineDB::add_line(const std::string& element, EmissionLine line) {
  if (!(line.width_nm > 0.0) || !(line.strength > 0.0)) {
    throw std::invalid_argument("emission line for " + element + ": width and strength must be positive");
  }
  auto [it, inserted] = lines_.try_emplace(element);
  if (inserted) order_.push_back(element);
  it->second.push_back(line);
}

const std::vector<EmissionLine>& EmissionLineDB::lines(const std::string& element) const {
  const auto it = lines_.find(element);
  if (it == lines_.end()) throw std::invalid_argument("emission line db has no element '" + element + "'");
  return it->second;
}

void EmissionLineDB::check_covers(const WavelengthAxis& axis) const {
  for (const auto& [element, lines] : lines_) {
    for (const auto& l : lines) {
      if (l.center_nm < axis.front() || l.center_nm > axis.back()) {
        throw std::invalid_argument("emission line " + element + " @ " + std::to_string(l.center_nm) +
                                    " nm lies outside the axis range");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Acquisition

void AcquisitionParams::validate(std::size_t n_bins) const {
  if (!(dark_level >= 0.0) || !(continuum_amplitude >= 0.0) || !(noise_sigma >= 0.0)) {
    throw std::invalid_argument("acquisition params: dark, continuum and sigma must be >= 0");
  }
  if (!(continuum_decay_nm > 0.0)) throw std::invalid_argument("acquisition params: decay must be > 0");
  if (!(distance_m >= 1.0 && distance_m <= 7.0)) {
    throw std::invalid_argument("acquisition params: distance " + std::to_string(distance_m) +
                                " m outside [1, 7]");
  }
  if (irf.size() != n_bins) {
    throw std::invalid_argument("acquisition params: irf has " + std::to_string(irf.size()) + " bins, spectrum " +
                                std::to_string(n_bins));
  }
  for (double g : irf) {
    if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("acquisition params: irf must be > 0");
  }
}

AxisPtr default_axis() {
  static const AxisPtr axis = make_uniform_axis(512, 240.0, 905.0);
  return axis;
}

AxisPtr full_resolution_axis() {
  static const AxisPtr axis = make_uniform_axis(5500, 240.0, 905.0);
  return axis;
}

std::vector<double> default_irf(const WavelengthAxis& axis) {
  std::vector<double> g(axis.size());
  const double span = axis.back() - axis.front();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = (axis.values()[i] - axis.front()) / span;
    g[i] = 1.0 + 0.1 * std::sin(3.0 * std::numbers::pi * t);
  }
  return g;
}

std::vector<double> unit_irf(const WavelengthAxis& axis) { return std::vector<double>(axis.size(), 1.0); }

Spectrum synth_clean(const Composition& c, const EmissionLineDB& db, const AxisPtr& axis) {
  if (c.element_names.size() != c.oxide_wt_pct.size()) {
    throw std::invalid_argument("synth_clean: composition names and values differ in length");
  }
  const auto& w = axis->values();
  std::vector<double> out(w.size(), 0.0);
  for (std::size_t e = 0; e < c.size(); ++e) {
    const auto& lines = db.lines(c.element_names[e]);
    const double frac = c.oxide_wt_pct[e] / 100.0;
    if (frac == 0.0) continue;
    for (const auto& line : lines) {
      const double inv = 1.0 / line.width_nm;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double u = (w[i] - line.center_nm) * inv;
        if (std::abs(u) > 12.0) continue;
        out[i] += frac * line.strength * std::exp(-0.5 * u * u);
      }
    }
  }
  return Spectrum(axis, std::move(out));
}

Spectrum synth_noise(const AcquisitionParams& p, const AxisPtr& axis, Rng& rng) {
  const auto& w = axis->values();
  std::vector<double> z(w.size());
  std::normal_distribution<double> white(0.0, 1.0);
  const double lambda_min = axis->front();
  for (std::size_t i = 0; i < w.size(); ++i) {
    z[i] = p.dark_level + p.continuum_amplitude * std::exp(-(w[i] - lambda_min) / p.continuum_decay_nm);
    if (p.noise_sigma > 0.0) z[i] += p.noise_sigma * white(rng);
  }
  return Spectrum(axis, std::move(z));
}

Spectrum synth_noise(const AcquisitionParams& p, const AxisPtr& axis) {
  Rng rng = substream(p.rng_seed, "noise");
  return synth_noise(p, axis, rng);
}

Spectrum apply_irf(const Spectrum& s, const AcquisitionParams& p) {
  if (p.irf.size() != s.size()) {
    throw std::invalid_argument("apply_irf: irf has " + std::to_string(p.irf.size()) + " bins, spectrum " +
                                std::to_string(s.size()));
  }
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] * p.irf[i];
  return Spectrum(s.axis_ptr(), std::move(out));
}

Spectrum apply_distance(const Spectrum& s, double distance_m) {
  if (!(distance_m > 0.0)) throw std::invalid_argument("apply_distance: distance must be > 0");
  const double gain = 1.0 / (distance_m * distance_m);
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] * gain;
  return Spectrum(s.axis_ptr(), std::move(out));
}

ShotComponents synth_shot_components(const Composition& c, const AcquisitionParams& p, const EmissionLineDB& db,
                                     const AxisPtr& axis) {
  p.validate(axis->size());
  Spectrum clean = synth_clean(c, db, axis);
  Spectrum received = apply_distance(apply_irf(clean, p), p.distance_m);
  Spectrum noise = synth_noise(p, axis);
  std::vector<double> raw(axis->size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = received[i] + noise[i];
  return {std::move(clean), std::move(received), std::move(noise), Spectrum(axis, std::move(raw))};
}

Shot make_shot(const Composition& c, const AcquisitionParams& p, const EmissionLineDB& db, const AxisPtr& axis,
               PreprocLevel level, Normalization norm) {
  auto parts = synth_shot_components(c, p, db, axis);
  const Spectrum& label = level == PreprocLevel::level_1a ? parts.received : parts.clean;
  return {normalize(parts.raw, norm), normalize(label, norm), c};
}

// ---------------------------------------------------------------------------
// Samplers and datasets

Composition DirichletCompositionSampler::operator()(Rng& rng) const {
  if (names.size() != mean_fraction.size()) {
    throw std::invalid_argument("composition sampler: names and mean fractions differ in length");
  }
  std::vector<double> g(names.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::gamma_distribution<double> gamma(concentration * mean_fraction[i], 1.0);
    g[i] = gamma(rng);
    sum += g[i];
  }
  std::uniform_real_distribution<double> total_dist(total_lo, total_hi);
  const double total = total_dist(rng);
  Composition c{names, {}};
  c.oxide_wt_pct.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) c.oxide_wt_pct[i] = sum > 0.0 ? total * g[i] / sum : 0.0;
  // Keep the sum at or under 100 after rounding.
  const double realized = std::accumulate(c.oxide_wt_pct.begin(), c.oxide_wt_pct.end(), 0.0);
  if (realized > 100.0) {
    for (double& v : c.oxide_wt_pct) v *= 100.0 / realized;
  }
  return c;
}

AcquisitionParams DefaultParamSampler::operator()(Rng& rng, const Spectrum& clean) const {
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  AcquisitionParams p;
  p.irf = irf.empty() ? default_irf(clean.axis()) : irf;
  p.distance_m = uniform(distance_lo_m, distance_hi_m);
  double peak = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) peak = std::max(peak, clean[i] * p.irf[i]);
  peak /= p.distance_m * p.distance_m;
  p.dark_level = peak * uniform(dark_lo, dark_hi);
  p.continuum_amplitude = peak * uniform(continuum_lo, continuum_hi);
  p.continuum_decay_nm = uniform(decay_lo_nm, decay_hi_nm);
  p.noise_sigma = peak * uniform(sigma_lo, sigma_hi);
  p.rng_seed = rng();
  return p;
}

std::vector<ShotRecord> make_dataset(std::size_t n_shots, const CompositionSampler& composition_sampler,
                                     const ParamSampler& param_sampler, const EmissionLineDB& db,
                                     const AxisPtr& axis, const DatasetOptions& options) {
  if (n_shots == 0) throw std::invalid_argument("empty dataset");
  if (options.shots_per_target == 0) throw std::invalid_argument("shots_per_target must be > 0");
  std::vector<ShotRecord> out;
  out.reserve(n_shots);
  Composition composition;
  for (std::size_t i = 0; i < n_shots; ++i) {
    const std::size_t target = i / options.shots_per_target;
    if (i % options.shots_per_target == 0) {
      Rng crng = substream(options.seed, "composition", target);
      composition = composition_sampler(crng);
      composition.validate();
    }
    Rng rng = substream(options.seed, "shot", i);
    const Spectrum clean = synth_clean(composition, db, axis);
    const AcquisitionParams p = param_sampler(rng, clean);
    Shot shot = make_shot(composition, p, db, axis, options.level, options.normalization);
    ShotRecord rec{"shot" + std::to_string(i),
                   "target" + std::to_string(target),
                   "synthetic-seed" + std::to_string(options.seed),
                   p.distance_m,
                   std::move(shot.raw),
                   std::nullopt,
                   std::nullopt,
                   std::move(shot.composition)};
    if (options.level == PreprocLevel::level_1a) {
      rec.clean_1a = std::move(shot.clean);
    } else {
      rec.clean_1b = std::move(shot.clean);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace specnet
