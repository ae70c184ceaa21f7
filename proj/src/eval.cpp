#include "specnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "csv.hpp"
#include "specnet/errors.hpp"
#include "specnet/parallel.hpp"
#include "specnet/spectra.hpp"

namespace specnet {

namespace {

constexpr std::size_t kChunk = 16;

// Runs fn on consecutive chunks of rows and concatenates the per-row outputs.
template <typename T, typename F>
std::vector<std::vector<double>> chunked(const std::vector<std::vector<double>>& rows, std::size_t threads, F&& fn) {
  std::vector<std::vector<double>> out(rows.size());
  const std::size_t n_chunks = (rows.size() + kChunk - 1) / kChunk;
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(rows.size(), begin + kChunk);
    std::vector<const std::vector<double>*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&rows[i]);
    const nn::Tensor<T> result = fn(pack_batch<T>(ptrs));
    for (std::size_t i = begin; i < end; ++i) {
      const T* item = result.item(i - begin);
      out[i].assign(item, item + result.item_size());
    }
  });
  return out;
}

}  // namespace

template <typename T>
std::vector<std::vector<double>> clean_spectra(const PreprocNet<T>& net, const std::vector<std::vector<double>>& raw,
                                               std::size_t threads) {
  return chunked<T>(raw, threads, [&](const nn::Tensor<T>& y) { return net.infer(y).x_hat; });
}

template <typename T>
std::vector<std::vector<double>> predict_calib(const CalibHead<T>& head, const std::vector<std::vector<double>>& clean,
                                               std::size_t threads) {
  return chunked<T>(clean, threads, [&](const nn::Tensor<T>& x) { return head.forward(x); });
}

template <typename T>
std::vector<std::vector<double>> predict_e2e(const EndToEndNet<T>& net, const std::vector<std::vector<double>>& raw,
                                             std::size_t threads) {
  return chunked<T>(raw, threads, [&](const nn::Tensor<T>& y) { return net.infer(y); });
}

// ---------------------------------------------------------------------------
// Preprocessing

template <typename T>
std::vector<double> preproc_errors(const PreprocNet<T>* net, const std::vector<ShotRecord>& shots, PreprocLevel level,
                                   std::size_t threads) {
  std::vector<std::vector<double>> y(shots.size());
  std::vector<std::vector<double>> x(shots.size());
  for (std::size_t i = 0; i < shots.size(); ++i) {
    const auto& label = shots[i].clean(level);
    if (!label) {
      throw DataError("shot " + shots[i].shot_id + " has no level " + to_string(level) + " clean spectrum");
    }
    try {
      y[i] = scaled_to_unit_l2(shots[i].raw.intensities());
      x[i] = scaled_to_unit_l2(label->intensities());
    } catch (const std::domain_error&) {
      throw DataError("shot " + shots[i].shot_id + ": degenerate spectrum (zero norm)");
    }
  }
  std::vector<std::vector<double>> residual;
  if (net) {
    residual = chunked<T>(y, threads, [&](const nn::Tensor<T>& batch) { return net->infer(batch).z_hat; });
  }
  std::vector<double> errors(shots.size());
  for (std::size_t i = 0; i < shots.size(); ++i) {
    std::vector<double> r(y[i].size());
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = (y[i][k] - x[i][k]) - (net ? residual[i][k] : 0.0);
    errors[i] = l2_norm(r);
  }
  return errors;
}

namespace {

PreprocReport summarize(const std::vector<double>& errors, const std::string& split) {
  if (errors.empty()) throw DataError("preprocessing evaluation: empty test set");
  double sum = 0.0;
  for (double e : errors) sum += e;
  return {split, sum / static_cast<double>(errors.size()), errors.size()};
}

}  // namespace

template <typename T>
PreprocReport eval_preproc(const PreprocNet<T>& net, const std::vector<ShotRecord>& shots, PreprocLevel level,
                           const std::string& split, std::size_t threads) {
  return summarize(preproc_errors(&net, shots, level, threads), split);
}

PreprocReport eval_preproc_identity(const std::vector<ShotRecord>& shots, PreprocLevel level,
                                    const std::string& split) {
  return summarize(preproc_errors<double>(nullptr, shots, level), split);
}

// ---------------------------------------------------------------------------
// Distance bins

namespace {

constexpr std::size_t kDistanceBins = 6;

std::string format_edge(double v) { return csv::format_double(v); }

}  // namespace

std::string DistanceBin::label() const {
  if (overflow) return "overflow";
  const bool last = hi_m >= 7.0;
  return "[" + format_edge(lo_m) + "," + format_edge(hi_m) + (last ? "]" : ")");
}

double DistanceBinReport::spread() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& b : bins) {
    if (b.overflow || b.count == 0) continue;
    lo = std::min(lo, b.rmse);
    hi = std::max(hi, b.rmse);
  }
  return hi >= lo ? hi - lo : std::numeric_limits<double>::quiet_NaN();
}

double DistanceBinReport::max_min_ratio() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& b : bins) {
    if (b.overflow || b.count == 0) continue;
    lo = std::min(lo, b.rmse);
    hi = std::max(hi, b.rmse);
  }
  return hi >= lo && lo > 0.0 ? hi / lo : std::numeric_limits<double>::quiet_NaN();
}

std::size_t distance_bin(double d) {
  if (!(d >= 1.0 && d <= 7.0)) return kDistanceBins;
  return std::min<std::size_t>(kDistanceBins - 1, static_cast<std::size_t>(std::floor(d - 1.0)));
}

DistanceBinReport bin_by_distance(const std::vector<double>& distances, const std::vector<double>& errors) {
  if (distances.size() != errors.size()) throw std::invalid_argument("distance bins: length mismatch");
  DistanceBinReport report;
  for (std::size_t b = 0; b < kDistanceBins; ++b) {
    report.bins.push_back({1.0 + static_cast<double>(b), 2.0 + static_cast<double>(b), false, 0, 0.0});
  }
  report.bins.push_back({0.0, 0.0, true, 0, 0.0});
  for (std::size_t i = 0; i < errors.size(); ++i) {
    auto& bin = report.bins[distance_bin(distances[i])];
    bin.count += 1;
    bin.rmse += errors[i];
  }
  for (auto& b : report.bins) {
    b.rmse = b.count ? b.rmse / static_cast<double>(b.count) : std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

template <typename T>
DistanceBinReport eval_by_distance(const PreprocNet<T>& net, const std::vector<ShotRecord>& shots, PreprocLevel level,
                                   std::size_t threads) {
  std::vector<double> d;
  d.reserve(shots.size());
  for (const auto& s : shots) d.push_back(s.distance_m);
  return bin_by_distance(d, preproc_errors(&net, shots, level, threads));
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

void check_matrix_pair(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& truths) {
  if (preds.size() != truths.size()) {
    throw std::invalid_argument("calibration rmse: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(truths.size()) + " truths");
  }
  if (truths.empty()) throw std::invalid_argument("calibration rmse: no shots");
  const std::size_t C = truths.front().size();
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i].size() != C || preds[i].size() != C) {
      throw std::invalid_argument("calibration rmse: element count differs at shot " + std::to_string(i));
    }
  }
}

}  // namespace

std::vector<double> eval_calib_rmse(const std::vector<std::vector<double>>& preds,
                                    const std::vector<std::vector<double>>& truths) {
  check_matrix_pair(preds, truths);
  std::vector<double> out(truths.front().size(), 0.0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    for (std::size_t e = 0; e < out.size(); ++e) {
      const double d = preds[i][e] - truths[i][e];
      out[e] += d * d;
    }
  }
  for (auto& v : out) v = std::sqrt(v / static_cast<double>(truths.size()));
  return out;
}

std::vector<double> mean_composition(const std::vector<std::vector<double>>& truths) {
  if (truths.empty()) throw std::invalid_argument("mean composition of an empty set");
  std::vector<double> mean(truths.front().size(), 0.0);
  for (const auto& t : truths) {
    if (t.size() != mean.size()) throw std::invalid_argument("mean composition: element count differs");
    for (std::size_t e = 0; e < t.size(); ++e) mean[e] += t[e];
  }
  for (auto& m : mean) m /= static_cast<double>(truths.size());
  return mean;
}

double total_rmse(const std::vector<double>& per_element) {
  if (per_element.empty()) return 0.0;
  double s = 0.0;
  for (double r : per_element) s += r * r;
  return std::sqrt(s / static_cast<double>(per_element.size()));
}

RegressionLine ols_fit(const std::vector<double>& truth, const std::vector<double>& pred) {
  if (truth.size() != pred.size() || truth.empty()) throw std::invalid_argument("ols: need equal, non-empty samples");
  const double n = static_cast<double>(truth.size());
  double mt = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mt += truth[i];
    mp += pred[i];
  }
  mt /= n;
  mp /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    sxx += (truth[i] - mt) * (truth[i] - mt);
    sxy += (truth[i] - mt) * (pred[i] - mp);
  }
  RegressionLine line;
  if (!(sxx > 0.0)) return line;
  line.slope = sxy / sxx;
  line.intercept = mp - line.slope * mt;
  line.defined = true;
  return line;
}

namespace {

std::vector<double> column(const std::vector<std::vector<double>>& m, std::size_t e) {
  std::vector<double> out;
  out.reserve(m.size());
  for (const auto& row : m) out.push_back(row[e]);
  return out;
}

}  // namespace

CalibReport make_calib_report(const std::vector<std::string>& elements, const std::vector<std::vector<double>>& preds,
                              const std::vector<std::vector<double>>& truths, const std::vector<double>& baseline,
                              const std::string& split) {
  check_matrix_pair(preds, truths);
  const std::size_t C = truths.front().size();
  if (elements.size() != C || baseline.size() != C) {
    throw std::invalid_argument("calibration report: element names/baseline do not match the data");
  }
  CalibReport r;
  r.split = split;
  r.elements = elements;
  r.count = truths.size();
  r.rmse = eval_calib_rmse(preds, truths);
  r.baseline_rmse = eval_calib_rmse(std::vector<std::vector<double>>(truths.size(), baseline), truths);
  for (std::size_t e = 0; e < C; ++e) r.lines.push_back(ols_fit(column(truths, e), column(preds, e)));
  return r;
}

std::vector<RegressionLine> scatter_export(const std::vector<std::string>& elements,
                                           const std::vector<std::vector<double>>& preds,
                                           const std::vector<std::vector<double>>& truths, const std::string& path) {
  check_matrix_pair(preds, truths);
  if (elements.size() != truths.front().size()) throw std::invalid_argument("scatter export: element names mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "element,truth,pred\n";
  std::vector<RegressionLine> lines;
  for (std::size_t e = 0; e < elements.size(); ++e) {
    for (std::size_t i = 0; i < truths.size(); ++i) {
      out << elements[e] << ',' << csv::format_double(truths[i][e]) << ',' << csv::format_double(preds[i][e]) << '\n';
    }
    lines.push_back(ols_fit(column(truths, e), column(preds, e)));
  }
  if (!out) throw DataError("write failed: " + path);
  return lines;
}

// ---------------------------------------------------------------------------
// Reports

bool ReportRow::operator==(const ReportRow& o) const {
  const bool same_value = value == o.value || (std::isnan(value) && std::isnan(o.value));
  return metric == o.metric && split == o.split && key == o.key && same_value && count == o.count;
}

std::vector<ReportRow> report_rows(const PreprocReport& r, const std::string& metric) {
  return {{metric, r.split, "all", r.value, r.count}};
}

std::vector<ReportRow> report_rows(const CalibReport& r) {
  std::vector<ReportRow> rows;
  for (std::size_t e = 0; e < r.elements.size(); ++e) {
    rows.push_back({"calib_rmse", r.split, r.elements[e], r.rmse[e], r.count});
  }
  rows.push_back({"calib_rmse", r.split, "total", total_rmse(r.rmse), r.count});
  for (std::size_t e = 0; e < r.elements.size(); ++e) {
    rows.push_back({"baseline_rmse", r.split, r.elements[e], r.baseline_rmse[e], r.count});
  }
  rows.push_back({"baseline_rmse", r.split, "total", total_rmse(r.baseline_rmse), r.count});
  for (std::size_t e = 0; e < r.elements.size(); ++e) {
    // NaN marks an undefined line (zero-variance truths).
    rows.push_back({"ols_slope", r.split, r.elements[e], r.lines[e].slope, r.count});
    rows.push_back({"ols_intercept", r.split, r.elements[e], r.lines[e].intercept, r.count});
  }
  return rows;
}

std::vector<ReportRow> report_rows(const DistanceBinReport& r, const std::string& split) {
  std::vector<ReportRow> rows;
  for (const auto& b : r.bins) rows.push_back({"distance_rmse", split, b.label(), b.rmse, b.count});
  return rows;
}

namespace {

// Bin labels contain a comma; quote fields that need it.
std::string field(const std::string& s) { return s.find(',') == std::string::npos ? s : "\"" + s + "\""; }

std::vector<std::string> split_quoted(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_report(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "metric,split,element_or_bin,value,count\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << r.split << ',' << field(r.key) << ','
        << (std::isnan(r.value) ? std::string("nan") : csv::format_double(r.value)) << ',' << r.count << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<ReportRow> read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || csv::trim(line) != "metric,split,element_or_bin,value,count") {
    throw csv::ParseError(path, 1, "expected header metric,split,element_or_bin,value,count");
  }
  std::vector<ReportRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (csv::trim(line).empty()) continue;
    const auto f = split_quoted(line);
    if (f.size() != 5) throw csv::ParseError(path, n, "expected 5 columns, found " + std::to_string(f.size()));
    ReportRow r{f[0], f[1], f[2], 0.0, 0};
    r.value = f[3] == "nan" ? std::numeric_limits<double>::quiet_NaN() : csv::parse_double(f[3], path, n);
    r.count = static_cast<std::size_t>(csv::parse_double(f[4], path, n));
    rows.push_back(std::move(r));
  }
  return rows;
}

#define SPECNET_INSTANTIATE(T)                                                                                    \
  template std::vector<std::vector<double>> clean_spectra<T>(const PreprocNet<T>&,                               \
                                                             const std::vector<std::vector<double>>&, std::size_t); \
  template std::vector<std::vector<double>> predict_calib<T>(const CalibHead<T>&,                                \
                                                             const std::vector<std::vector<double>>&, std::size_t); \
  template std::vector<std::vector<double>> predict_e2e<T>(const EndToEndNet<T>&,                               \
                                                           const std::vector<std::vector<double>>&, std::size_t);   \
  template std::vector<double> preproc_errors<T>(const PreprocNet<T>*, const std::vector<ShotRecord>&,            \
                                                 PreprocLevel, std::size_t);                                      \
  template PreprocReport eval_preproc<T>(const PreprocNet<T>&, const std::vector<ShotRecord>&, PreprocLevel,       \
                                         const std::string&, std::size_t);                                        \
  template DistanceBinReport eval_by_distance<T>(const PreprocNet<T>&, const std::vector<ShotRecord>&,            \
                                                 PreprocLevel, std::size_t);

SPECNET_INSTANTIATE(float)
SPECNET_INSTANTIATE(double)

#undef SPECNET_INSTANTIATE

}  // namespace specnet
