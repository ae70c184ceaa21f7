#include "specnet/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace specnet {

WavelengthAxis::WavelengthAxis(std::vector<double> values_nm, std::vector<DetectorSegment> segments)
    : values_(std::move(values_nm)), segments_(std::move(segments)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw std::invalid_argument("wavelength axis: non-finite value at index " + std::to_string(i));
    }
    if (i > 0 && !(values_[i] > values_[i - 1])) {
      throw std::invalid_argument("wavelength axis: values must be strictly increasing (index " +
                                  std::to_string(i) + ")");
    }
  }
  for (const auto& seg : segments_) {
    if (seg.begin > seg.end || seg.end > values_.size()) {
      throw std::invalid_argument("wavelength axis: detector segment '" + seg.name + "' out of range");
    }
  }
}

AxisPtr make_axis(std::vector<double> values_nm) {
  return std::make_shared<const WavelengthAxis>(std::move(values_nm));
}

AxisPtr make_uniform_axis(std::size_t n, double lo_nm, double hi_nm) {
  if (n < 2 || !(hi_nm > lo_nm)) {
    throw std::invalid_argument("uniform axis: need n >= 2 and hi > lo");
  }
  std::vector<double> v(n);
  const double step = (hi_nm - lo_nm) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo_nm + step * static_cast<double>(i);
  v.back() = hi_nm;
  return make_axis(std::move(v));
}

Spectrum::Spectrum(AxisPtr axis, std::vector<double> intensities)
    : axis_(std::move(axis)), values_(std::move(intensities)) {
  if (!axis_) throw std::invalid_argument("spectrum: null axis");
  if (values_.size() != axis_->size()) {
    throw std::invalid_argument("spectrum: " + std::to_string(values_.size()) +
                                " intensities for an axis of " + std::to_string(axis_->size()) +
                                " bins");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw std::invalid_argument("spectrum: non-finite intensity at bin " + std::to_string(i));
    }
  }
}

bool Spectrum::same_axis(const Spectrum& other) const {
  return axis_ == other.axis_ || *axis_ == *other.axis_;
}

BandMask::BandMask(std::vector<BandInterval> excluded) : excluded_(std::move(excluded)) {
  for (const auto& iv : excluded_) {
    if (!(iv.lo_nm <= iv.hi_nm)) {
      throw std::invalid_argument("band mask: interval with lo > hi");
    }
  }
}

bool BandMask::excludes(double wavelength_nm) const {
  return std::any_of(excluded_.begin(), excluded_.end(), [&](const BandInterval& iv) {
    return wavelength_nm >= iv.lo_nm && wavelength_nm <= iv.hi_nm;
  });
}

BandMask chemcam_calib_mask() {
  return BandMask({{240.811, 246.635},
                   {338.457, 340.797},
                   {382.13, 387.859},
                   {473.184, 492.427},
                   {849.0, 905.574}});
}

Spectrum normalize_max(const Spectrum& s) {
  const auto& v = s.intensities();
  const double peak = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (!(peak > 0.0)) throw std::domain_error("degenerate spectrum");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / peak;
  return Spectrum(s.axis_ptr(), std::move(out));
}

double l2_norm(std::span<const double> v) {
  // Scaled accumulation avoids overflow on raw detector counts.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) return 0.0;
  double sum = 0.0;
  for (double x : v) {
    const double r = x / scale;
    sum += r * r;
  }
  return scale * std::sqrt(sum);
}

std::vector<double> scaled_to_unit_l2(std::span<const double> v) {
  const double norm = l2_norm(v);
  if (!(norm > 0.0)) throw std::domain_error("degenerate spectrum");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

Spectrum normalize_l2(const Spectrum& s) {
  return Spectrum(s.axis_ptr(), scaled_to_unit_l2(s.intensities()));
}

AxisPtr apply_band_mask(const WavelengthAxis& axis, const BandMask& m) {
  std::vector<double> kept;
  kept.reserve(axis.size());
  for (double w : axis.values()) {
    if (!m.excludes(w)) kept.push_back(w);
  }
  return make_axis(std::move(kept));
}

Spectrum apply_band_mask(const Spectrum& s, const BandMask& m) {
  if (m.excluded().empty()) return s;
  const auto& w = s.axis().values();
  std::vector<double> kept_w;
  std::vector<double> kept_v;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!m.excludes(w[i])) {
      kept_w.push_back(w[i]);
      kept_v.push_back(s[i]);
    }
  }
  return Spectrum(make_axis(std::move(kept_w)), std::move(kept_v));
}

double l2_distance(const Spectrum& a, const Spectrum& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("l2_distance: length mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  if (!a.same_axis(b)) throw std::invalid_argument("l2_distance: spectra on different axes");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  return l2_norm(d);
}

Spectrum normalize(const Spectrum& s, Normalization kind) {
  return kind == Normalization::l2 ? normalize_l2(s) : normalize_max(s);
}

std::string to_string(Normalization kind) { return kind == Normalization::l2 ? "l2" : "max"; }

Normalization parse_normalization(const std::string& name) {
  if (name == "l2") return Normalization::l2;
  if (name == "max") return Normalization::max;
  throw std::invalid_argument("unknown normalization '" + name + "' (expected l2 or max)");
}

}  // namespace specnet
