#pragma once

// Metrics and report files:
//   preprocessing error on unit-l2 spectra, overall and per distance bin
//   per-element calibration RMSE in oxide wt.% with a mean-predictor baseline
//   scatter exports with ordinary least-squares lines
// Report CSV: metric,split,element_or_bin,value,count. Scatter CSV:
// element,truth,pred.

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "specnet/errors.hpp"
#include "specnet/models.hpp"
#include "specnet/shot_record.hpp"

namespace specnet {

// ---------------------------------------------------------------------------
// Batched inference helpers. Spectra are fed as given; results do not depend
// on `threads`.

template <typename T>
std::vector<std::vector<double>> clean_spectra(const PreprocNet<T>& net, const std::vector<std::vector<double>>& raw,
                                               std::size_t threads = 0);
template <typename T>
std::vector<std::vector<double>> predict_calib(const CalibHead<T>& head, const std::vector<std::vector<double>>& clean,
                                               std::size_t threads = 0);
template <typename T>
std::vector<std::vector<double>> predict_e2e(const EndToEndNet<T>& net, const std::vector<std::vector<double>>& raw,
                                             std::size_t threads = 0);

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocReport {
  std::string split;
  double value{0.0};
  std::size_t count{0};
};

// Per-shot ||(y - x) - R(y)|| with y and x scaled to unit l2 norm. A null net
// is the identity (R = 0). Throws DataError when a shot lacks the label.
template <typename T>
std::vector<double> preproc_errors(const PreprocNet<T>* net, const std::vector<ShotRecord>& shots, PreprocLevel level,
                                   std::size_t threads = 0);

template <typename T>
PreprocReport eval_preproc(const PreprocNet<T>& net, const std::vector<ShotRecord>& shots, PreprocLevel level,
                           const std::string& split = "test", std::size_t threads = 0);
PreprocReport eval_preproc_identity(const std::vector<ShotRecord>& shots, PreprocLevel level,
                                    const std::string& split = "test");

// ---------------------------------------------------------------------------
// Distance bins [1,2), ..., [5,6), [6,7] plus an overflow bin for shots
// outside [1, 7] m.

struct DistanceBin {
  double lo_m{0.0};
  double hi_m{0.0};
  bool overflow{false};
  std::size_t count{0};
  double rmse{std::numeric_limits<double>::quiet_NaN()};  // NaN when empty

  std::string label() const;
};

struct DistanceBinReport {
  std::vector<DistanceBin> bins;  // six in-range bins, then overflow

  // Over non-empty in-range bins; NaN with fewer than one.
  double spread() const;
  double max_min_ratio() const;
};

// Bin index 0..5 for d in [1, 7], 6 otherwise.
std::size_t distance_bin(double distance_m);
// Mean of `errors` per bin.
DistanceBinReport bin_by_distance(const std::vector<double>& distances, const std::vector<double>& errors);
template <typename T>
DistanceBinReport eval_by_distance(const PreprocNet<T>& net, const std::vector<ShotRecord>& shots, PreprocLevel level,
                                   std::size_t threads = 0);

// ---------------------------------------------------------------------------
// Calibration

// Per element e: sqrt(mean_m (pred_me - truth_me)^2).
std::vector<double> eval_calib_rmse(const std::vector<std::vector<double>>& preds,
                                    const std::vector<std::vector<double>>& truths);
// Per-element mean, the mean-predictor baseline's constant prediction.
std::vector<double> mean_composition(const std::vector<std::vector<double>>& truths);
// sqrt of the mean squared per-element RMSE.
double total_rmse(const std::vector<double>& per_element);

struct RegressionLine {
  double slope{std::numeric_limits<double>::quiet_NaN()};
  double intercept{std::numeric_limits<double>::quiet_NaN()};
  bool defined{false};  // false when the truths have zero variance
};

RegressionLine ols_fit(const std::vector<double>& truth, const std::vector<double>& pred);

struct CalibReport {
  std::string split;
  std::vector<std::string> elements;
  std::vector<double> rmse;
  std::vector<double> baseline_rmse;
  std::vector<RegressionLine> lines;
  std::size_t count{0};
};

// `baseline` is the constant mean-predictor composition (usually from the
// training split).
CalibReport make_calib_report(const std::vector<std::string>& elements, const std::vector<std::vector<double>>& preds,
                              const std::vector<std::vector<double>>& truths, const std::vector<double>& baseline,
                              const std::string& split = "test");

// Writes element,truth,pred rows and returns each element's OLS line.
std::vector<RegressionLine> scatter_export(const std::vector<std::string>& elements,
                                           const std::vector<std::vector<double>>& preds,
                                           const std::vector<std::vector<double>>& truths, const std::string& path);

// ---------------------------------------------------------------------------
// Report files

struct ReportRow {
  std::string metric;
  std::string split;
  std::string key;
  double value{0.0};
  std::size_t count{0};

  bool operator==(const ReportRow& o) const;  // NaN values compare equal
};

std::vector<ReportRow> report_rows(const PreprocReport& r, const std::string& metric = "preproc_rmse");
std::vector<ReportRow> report_rows(const CalibReport& r);
std::vector<ReportRow> report_rows(const DistanceBinReport& r, const std::string& split);

void write_report(const std::vector<ReportRow>& rows, const std::string& path);
std::vector<ReportRow> read_report(const std::string& path);

}  // namespace specnet
