#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace specnet {

// Index range [begin, end) of one detector segment on a concatenated axis.
struct DetectorSegment {
  std::string name;
  std::size_t begin{0};
  std::size_t end{0};
};

// Wavelength grid in nm. Values are strictly increasing but need not be
// contiguous: detector gaps are simply absent wavelengths.
class WavelengthAxis {
 public:
  explicit WavelengthAxis(std::vector<double> values_nm,
                          std::vector<DetectorSegment> segments = {});

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  const std::vector<DetectorSegment>& segments() const { return segments_; }
  double front() const { return values_.front(); }
  double back() const { return values_.back(); }

  bool operator==(const WavelengthAxis& other) const { return values_ == other.values_; }

 private:
  std::vector<double> values_;
  std::vector<DetectorSegment> segments_;
};

using AxisPtr = std::shared_ptr<const WavelengthAxis>;

AxisPtr make_axis(std::vector<double> values_nm);
// n bins uniformly spaced over [lo_nm, hi_nm], both ends included.
AxisPtr make_uniform_axis(std::size_t n, double lo_nm, double hi_nm);

// Intensities bound to a wavelength axis. Immutable; every value finite.
class Spectrum {
 public:
  Spectrum(AxisPtr axis, std::vector<double> intensities);

  const AxisPtr& axis_ptr() const { return axis_; }
  const WavelengthAxis& axis() const { return *axis_; }
  const std::vector<double>& intensities() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  // True when both spectra are bound to the same (or an identical) axis.
  bool same_axis(const Spectrum& other) const;

 private:
  AxisPtr axis_;
  std::vector<double> values_;
};

// Closed wavelength interval [lo_nm, hi_nm], both ends excluded from the data.
struct BandInterval {
  double lo_nm{0.0};
  double hi_nm{0.0};
};

class BandMask {
 public:
  BandMask() = default;
  explicit BandMask(std::vector<BandInterval> excluded);

  const std::vector<BandInterval>& excluded() const { return excluded_; }
  bool excludes(double wavelength_nm) const;

 private:
  std::vector<BandInterval> excluded_;
};

// Bands dropped from the ChemCam calibration-target data before training.
BandMask chemcam_calib_mask();

Spectrum normalize_max(const Spectrum& s);
Spectrum normalize_l2(const Spectrum& s);
Spectrum apply_band_mask(const Spectrum& s, const BandMask& m);
AxisPtr apply_band_mask(const WavelengthAxis& axis, const BandMask& m);
double l2_distance(const Spectrum& a, const Spectrum& b);

enum class Normalization { l2, max };

Spectrum normalize(const Spectrum& s, Normalization kind);
std::string to_string(Normalization kind);
Normalization parse_normalization(const std::string& name);

// Span-level helpers shared by the network and evaluation code.
double l2_norm(std::span<const double> v);
std::vector<double> scaled_to_unit_l2(std::span<const double> v);

}  // namespace specnet
