#pragma once

#include <optional>
#include <string>
#include <vector>

#include "specnet/spectra.hpp"

namespace specnet {

// Oxide weight percentages for C named compounds.
struct Composition {
  std::vector<std::string> element_names;
  std::vector<double> oxide_wt_pct;

  std::size_t size() const { return oxide_wt_pct.size(); }
  // Throws std::invalid_argument unless every entry is in [0, 100], the sum is
  // at most 100 and the name list matches the value list.
  void validate() const;
};

// SiO2, TiO2, Al2O3, FeOT, MgO, CaO, Na2O, K2O.
const std::vector<std::string>& major_oxides();

enum class PreprocLevel { level_1a, level_1b };

std::string to_string(PreprocLevel level);
PreprocLevel parse_level(const std::string& name);

// One laser shot with its labels. All present spectra share one axis.
struct ShotRecord {
  std::string shot_id;
  std::string target_id;
  std::string session;
  double distance_m{1.0};
  Spectrum raw;
  std::optional<Spectrum> clean_1a;
  std::optional<Spectrum> clean_1b;
  std::optional<Composition> composition;

  const std::optional<Spectrum>& clean(PreprocLevel level) const {
    return level == PreprocLevel::level_1a ? clean_1a : clean_1b;
  }
  void validate() const;
};

}  // namespace specnet
