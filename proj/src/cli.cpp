#include "specnet/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "csv.hpp"
#include "json.hpp"
#include "specnet/dataio.hpp"
#include "specnet/eval.hpp"
#include "specnet/fast_infer.hpp"
#include "specnet/gradcheck.hpp"
#include "specnet/simulator.hpp"
#include "specnet/train.hpp"

namespace specnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VerifyFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::set<std::string> kCommands{"synth",     "train",    "preprocess", "calibrate",
                                      "evaluate",  "gradcheck", "bench"};
const std::set<std::string> kTrainModes{"preproc", "calib", "e2e"};

struct Globals {
  std::vector<std::string> config;
  std::string precision{"single"};
  std::size_t threads{0};
  std::uint64_t seed{0};
};

struct SplitOptions {
  std::string partition{"random"};
  double train_frac{0.6};
};

void add_split_options(CLI::App* app, SplitOptions& s) {
  app->add_option("--partition", s.partition, "Train/test scheme: random (by shot), target (by target) or none")
      ->check(CLI::IsMember({"random", "target", "none"}));
  app->add_option("--train-frac", s.train_frac, "Train fraction of shots")->check(CLI::Range(0.0, 1.0));
}

// ---------------------------------------------------------------------------
// Data helpers

std::string safe_name(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return out;
}

void require_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw DataError("output directory " + parent.string() + " does not exist");
  }
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir + (ec ? ": " + ec.message() : ""));
}

std::ofstream open_out(const std::string& path) {
  require_parent_dir(path);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

DatasetManifest load_dataset(const std::string& path) {
  DatasetManifest m = load_manifest(path);
  if (m.records.empty()) throw DataError(path + ": dataset has no shots");
  return m;
}

// side: train, test or all. With --partition none both sides are the whole set.
std::vector<ShotRecord> pick(const DatasetManifest& m, const SplitOptions& s, std::uint64_t seed,
                             const std::string& side) {
  if (side == "all" || s.partition == "none") return m.records;
  const Split split = s.partition == "target" ? partition_by_target(m, s.train_frac, seed)
                                              : partition_random(m, s.train_frac, seed);
  return select(m.records, side == "train" ? split.train : split.test);
}

std::vector<double> unit(const Spectrum& s, const std::string& what) {
  try {
    return scaled_to_unit_l2(s.intensities());
  } catch (const std::domain_error&) {
    throw DataError(what + ": spectrum has zero norm");
  }
}

std::vector<std::vector<double>> raw_inputs(const std::vector<ShotRecord>& recs) {
  std::vector<std::vector<double>> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(unit(r.raw, "shot " + r.shot_id + " raw"));
  return out;
}

std::vector<std::vector<double>> clean_labels(const std::vector<ShotRecord>& recs, PreprocLevel level) {
  std::vector<std::vector<double>> out;
  out.reserve(recs.size());
  const std::string field = level == PreprocLevel::level_1a ? "clean_1a" : "clean_1b";
  for (const auto& r : recs) {
    const auto& c = r.clean(level);
    if (!c) throw DataError("shot " + r.shot_id + " has no " + field + " spectrum");
    out.push_back(unit(*c, "shot " + r.shot_id + " " + field));
  }
  return out;
}

std::vector<std::string> element_names(const std::vector<ShotRecord>& recs) {
  for (const auto& r : recs) {
    if (r.composition) return r.composition->element_names;
  }
  throw DataError("dataset has no composition labels");
}

std::vector<std::vector<double>> compositions(const std::vector<ShotRecord>& recs,
                                              const std::vector<std::string>& names) {
  std::vector<std::vector<double>> out;
  out.reserve(recs.size());
  for (const auto& r : recs) {
    if (!r.composition) throw DataError("shot " + r.shot_id + " has no composition");
    if (r.composition->element_names != names) {
      throw DataError("shot " + r.shot_id + " lists different elements than the model/dataset");
    }
    out.push_back(r.composition->oxide_wt_pct);
  }
  return out;
}

void require_length(std::size_t model_n, std::size_t data_n, const std::string& model) {
  if (model_n != data_n) {
    throw DataError("model " + model + " expects spectra of N=" + std::to_string(model_n) + " bins, data has N=" +
                    std::to_string(data_n));
  }
}

ModelHeader model_header(const std::string& path, std::initializer_list<ModelKind> allowed) {
  ModelHeader h = read_model_header(path);
  if (std::find(allowed.begin(), allowed.end(), h.kind) == allowed.end()) {
    std::string names;
    for (auto k : allowed) names += (names.empty() ? "" : " or ") + to_string(k);
    throw DataError(path + " holds a " + to_string(h.kind) + " model, expected " + names);
  }
  return h;
}

// x_hat for every input from a saved preprocessing model.
std::vector<std::vector<double>> clean_with(const std::string& path, const std::vector<std::vector<double>>& inputs,
                                            std::size_t threads) {
  const ModelHeader h = model_header(path, {ModelKind::preproc});
  if (!inputs.empty()) require_length(h.config.input_length, inputs.front().size(), path);
  if (h.precision == Precision::single) return clean_spectra(load_model<PreprocNet<float>>(path), inputs, threads);
  return clean_spectra(load_model<PreprocNet<double>>(path), inputs, threads);
}

// Named spectra from a dataset (every shot) or from individual CSV files.
struct Inputs {
  std::vector<std::string> names;
  std::vector<std::vector<double>> spectra;
  AxisPtr axis;
};

Inputs read_inputs(const std::string& data, const std::vector<std::string>& files) {
  if (data.empty() == files.empty()) throw UsageError("give exactly one of --data or --input");
  Inputs in;
  if (!data.empty()) {
    const DatasetManifest m = load_dataset(data);
    in.axis = m.records.front().raw.axis_ptr();
    for (const auto& r : m.records) in.names.push_back(r.shot_id);
    in.spectra = raw_inputs(m.records);
    return in;
  }
  for (const auto& f : files) {
    Spectrum s = load_spectrum_csv(f, in.axis);
    if (!in.axis) in.axis = s.axis_ptr();
    in.names.push_back(fs::path(f).stem().string());
    in.spectra.push_back(unit(s, f));
  }
  return in;
}

void write_predictions(const std::string& path, const std::vector<std::string>& names,
                       const std::vector<std::string>& elements, const std::vector<std::vector<double>>& preds) {
  std::ofstream out = open_out(path);
  out << "shot_id";
  for (const auto& e : elements) out << ',' << e;
  out << '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << names[i];
    for (double v : preds[i]) out << ',' << csv::format_double(v);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

// Optional reporting clamp of predictions to [0, 100] wt.%.
void clamp_wt_pct(std::vector<std::vector<double>>& preds) {
  for (auto& row : preds) {
    for (auto& v : row) v = std::clamp(v, 0.0, 100.0);
  }
}

std::vector<std::string> output_names(const NetConfig& c) {
  if (!c.element_names.empty()) return c.element_names;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < c.num_elements; ++i) out.push_back("element" + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::size_t shots{2000};
  std::string level{"1b"};
  std::size_t length{512};
  std::size_t shots_per_target{1};
  std::string normalization{"l2"};
  double distance_lo{1.0};
  double distance_hi{7.0};
  std::string lines;
};

AxisPtr axis_for_length(std::size_t n) {
  if (n == 512) return default_axis();
  if (n == 5500) return full_resolution_axis();
  return make_uniform_axis(n, 240.0, 905.0);
}

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  if (a.shots == 0) throw UsageError("--shots must be positive");
  if (!(a.distance_lo > 0.0 && a.distance_lo <= a.distance_hi)) throw UsageError("need 0 < --distance-min <= --distance-max");
  const EmissionLineDB db = a.lines.empty() ? EmissionLineDB::builtin() : EmissionLineDB::from_csv_file(a.lines);
  const AxisPtr axis = axis_for_length(a.length);
  db.check_covers(*axis);
  DatasetOptions opt;
  opt.level = parse_level(a.level);
  opt.normalization = parse_normalization(a.normalization);
  opt.shots_per_target = a.shots_per_target;
  opt.seed = g.seed;
  DefaultParamSampler params;
  params.distance_lo_m = a.distance_lo;
  params.distance_hi_m = a.distance_hi;
  make_dir(a.out);

  DatasetManifest m;
  m.axis = axis;
  m.provenance = "synthetic: seed=" + std::to_string(g.seed) + " level=" + to_string(opt.level) +
                 " shots=" + std::to_string(a.shots) + " normalization=" + to_string(opt.normalization);
  m.records = make_dataset(a.shots, DirichletCompositionSampler{}, params, db, axis, opt);
  save_manifest(m, a.out);
  out << "wrote " << m.records.size() << " shots (level " << to_string(opt.level) << ", seed " << g.seed << ", N="
      << axis->size() << ") to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string mode;
  std::string data;
  std::string out;
  std::string trace;
  std::size_t epochs{20};
  std::size_t batch{16};
  double lr{1e-3};
  std::size_t depth{20};
  std::size_t width{64};
  std::size_t kernel{3};
  std::size_t pool_bins{0};
  std::size_t head_channels{4};
  std::size_t head_hidden{16};
  std::string level{"1b"};
  SplitOptions split;
  bool validate{false};
  std::string preproc_model;
  bool use_reference_clean{false};
  bool no_standardize{false};
};

template <typename T>
std::size_t train_typed(const TrainArgs& a, const NetConfig& cfg, const TrainConfig& tc, const SupervisedSet& train,
                        const SupervisedSet* val, std::vector<LossTraceRow>& trace, const Globals& g) {
  Rng init = substream(g.seed, "init");
  if (a.mode == "preproc") {
    PreprocNet<T> net(cfg);
    net.init(init);
    trace = fit_preproc(net, train, tc, val);
    save_model(net, a.out);
    return param_count(net);
  }
  if (a.mode == "calib") {
    CalibHead<T> head(cfg);
    head.init(init);
    trace = fit_calib(head, train, tc, val);
    save_model(head, a.out);
    return param_count(head);
  }
  EndToEndNet<T> net(cfg);
  net.init(init);
  trace = fit_e2e(net, train, tc, val);
  save_model(net, a.out);
  return param_count(net);
}

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  if (a.mode == "calib" && a.preproc_model.empty() == !a.use_reference_clean) {
    throw UsageError("train calib needs exactly one clean source: --preproc-model or --use-reference-clean");
  }
  if (a.epochs == 0 || a.batch < 2) throw UsageError("need --epochs >= 1 and --batch >= 2");
  if (!(a.lr >= 0.0)) throw UsageError("--lr must be >= 0");
  const std::string trace_path = a.trace.empty() ? a.out + ".trace.csv" : a.trace;
  require_parent_dir(a.out);
  require_parent_dir(trace_path);
  const DatasetManifest m = load_dataset(a.data);
  const PreprocLevel level = parse_level(a.level);

  NetConfig cfg;
  cfg.depth = a.depth;
  cfg.width = a.width;
  cfg.kernel_size = a.kernel;
  cfg.input_length = m.records.front().raw.size();
  cfg.pool_bins = a.pool_bins ? a.pool_bins : std::min<std::size_t>(64, cfg.input_length);
  cfg.head_channels = a.head_channels;
  cfg.head_hidden = a.head_hidden;
  if (a.mode != "preproc") {
    cfg.element_names = element_names(m.records);
    cfg.num_elements = cfg.element_names.size();
  }
  cfg.validate();

  auto build = [&](const std::vector<ShotRecord>& recs) {
    SupervisedSet s;
    if (a.mode == "preproc") {
      s.inputs = raw_inputs(recs);
      s.targets = clean_labels(recs, level);
    } else {
      s.targets = compositions(recs, cfg.element_names);
      if (a.mode == "e2e") {
        s.inputs = raw_inputs(recs);
      } else if (a.use_reference_clean) {
        s.inputs = clean_labels(recs, level);
      } else {
        s.inputs = clean_with(a.preproc_model, raw_inputs(recs), g.threads);
      }
    }
    return s;
  };
  const SupervisedSet train = build(pick(m, a.split, g.seed, "train"));
  std::optional<SupervisedSet> val;
  if (a.validate) {
    if (a.split.partition == "none") throw UsageError("--validate needs a partition");
    val = build(pick(m, a.split, g.seed, "test"));
  }

  TrainConfig tc;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.lr = a.lr;
  tc.seed = g.seed;
  tc.precision = parse_precision(g.precision);
  tc.standardize_targets = !a.no_standardize;

  std::vector<LossTraceRow> trace;
  const std::size_t params = tc.precision == Precision::single
                                 ? train_typed<float>(a, cfg, tc, train, val ? &*val : nullptr, trace, g)
                                 : train_typed<double>(a, cfg, tc, train, val ? &*val : nullptr, trace, g);
  write_loss_trace(trace, trace_path);
  double last = 0.0;
  for (const auto& row : trace) {
    if (row.split == "train") last = row.loss;
  }
  out << "trained " << a.mode << " model (" << cfg.describe() << ", " << params << " parameters) on " << train.size()
      << " shots; final train loss " << last << '\n'
      << "wrote " << a.out << " and " << trace_path << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// preprocess / calibrate

struct InferArgs {
  std::string model;
  std::string preproc_model;
  std::string data;
  std::vector<std::string> inputs;
  std::string out;
  bool clean_input{false};
  bool clamp{false};
};

int cmd_preprocess(const InferArgs& a, const Globals& g, std::ostream& out) {
  model_header(a.model, {ModelKind::preproc});
  const Inputs in = read_inputs(a.data, a.inputs);
  const auto cleaned = clean_with(a.model, in.spectra, g.threads);
  make_dir(a.out);
  for (std::size_t i = 0; i < cleaned.size(); ++i) {
    save_spectrum_csv(Spectrum(in.axis, cleaned[i]), (fs::path(a.out) / (safe_name(in.names[i]) + "_clean.csv")).string());
  }
  out << "cleaned " << cleaned.size() << " spectra into " << a.out << '\n';
  return kOk;
}

int cmd_calibrate(const InferArgs& a, const Globals& g, std::ostream& out) {
  const ModelHeader h = model_header(a.model, {ModelKind::calib, ModelKind::e2e});
  require_parent_dir(a.out);
  const Inputs in = read_inputs(a.data, a.inputs);
  require_length(h.config.input_length, in.axis->size(), a.model);
  const bool single = h.precision == Precision::single;
  std::vector<std::vector<double>> preds;
  if (h.kind == ModelKind::e2e) {
    if (!a.preproc_model.empty() || a.clean_input) throw UsageError("an e2e model takes raw spectra only");
    preds = single ? predict_e2e(load_model<EndToEndNet<float>>(a.model), in.spectra, g.threads)
                   : predict_e2e(load_model<EndToEndNet<double>>(a.model), in.spectra, g.threads);
  } else {
    if (a.preproc_model.empty() == !a.clean_input) {
      throw UsageError("a calib model needs --preproc-model (raw input) or --clean-input");
    }
    const auto x = a.clean_input ? in.spectra : clean_with(a.preproc_model, in.spectra, g.threads);
    preds = single ? predict_calib(load_model<CalibHead<float>>(a.model), x, g.threads)
                   : predict_calib(load_model<CalibHead<double>>(a.model), x, g.threads);
  }
  if (a.clamp) clamp_wt_pct(preds);
  write_predictions(a.out, in.names, output_names(h.config), preds);
  out << "wrote " << preds.size() << " predictions to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string split{"test"};
  std::string level{"1b"};
  SplitOptions partition;
  std::string preproc_model;
  bool use_reference_clean{false};
  bool clamp{false};
};

void print_rows(const std::vector<ReportRow>& rows, std::ostream& out) {
  for (const auto& r : rows) {
    out << std::left << std::setw(22) << r.metric << std::setw(8) << r.split << std::setw(10) << r.key << std::right
        << std::setw(14) << r.value << std::setw(8) << r.count << '\n';
  }
}

template <typename T>
std::vector<ReportRow> eval_preproc_rows(const std::string& path, const std::vector<ShotRecord>& recs,
                                         PreprocLevel level, const std::string& split, std::size_t threads) {
  const auto net = load_model<PreprocNet<T>>(path);
  std::vector<ReportRow> rows = report_rows(eval_preproc(net, recs, level, split, threads));
  for (auto& r : report_rows(eval_preproc_identity(recs, level, split), "identity_preproc_rmse")) rows.push_back(r);
  for (auto& r : report_rows(eval_by_distance(net, recs, level, threads), split)) rows.push_back(r);
  return rows;
}

int cmd_evaluate(const EvalArgs& a, const Globals& g, std::ostream& out) {
  const ModelHeader h = model_header(a.model, {ModelKind::preproc, ModelKind::calib, ModelKind::e2e});
  make_dir(a.out);
  const DatasetManifest m = load_dataset(a.data);
  require_length(h.config.input_length, m.records.front().raw.size(), a.model);
  const auto recs = pick(m, a.partition, g.seed, a.split);
  if (recs.empty()) throw DataError("evaluation split '" + a.split + "' is empty");
  const PreprocLevel level = parse_level(a.level);
  const bool single = h.precision == Precision::single;
  const std::string report_path = (fs::path(a.out) / "report.csv").string();

  std::vector<ReportRow> rows;
  if (h.kind == ModelKind::preproc) {
    rows = single ? eval_preproc_rows<float>(a.model, recs, level, a.split, g.threads)
                  : eval_preproc_rows<double>(a.model, recs, level, a.split, g.threads);
  } else {
    const auto names = h.config.element_names.empty() ? element_names(recs) : h.config.element_names;
    const auto truths = compositions(recs, names);
    // The mean predictor is fit on the training side.
    const auto baseline_recs = a.split == "test" ? pick(m, a.partition, g.seed, "train") : recs;
    const auto baseline = mean_composition(compositions(baseline_recs, names));
    std::vector<std::vector<double>> preds;
    if (h.kind == ModelKind::e2e) {
      const auto y = raw_inputs(recs);
      preds = single ? predict_e2e(load_model<EndToEndNet<float>>(a.model), y, g.threads)
                     : predict_e2e(load_model<EndToEndNet<double>>(a.model), y, g.threads);
    } else {
      if (a.preproc_model.empty() == !a.use_reference_clean) {
        throw UsageError("evaluating a calib model needs --preproc-model or --use-reference-clean");
      }
      const auto x = a.use_reference_clean ? clean_labels(recs, level) : clean_with(a.preproc_model, raw_inputs(recs), g.threads);
      preds = single ? predict_calib(load_model<CalibHead<float>>(a.model), x, g.threads)
                     : predict_calib(load_model<CalibHead<double>>(a.model), x, g.threads);
    }
    if (a.clamp) clamp_wt_pct(preds);
    rows = report_rows(make_calib_report(names, preds, truths, baseline, a.split));
    const std::string scatter = (fs::path(a.out) / "scatter.csv").string();
    const auto lines = scatter_export(names, preds, truths, scatter);
    for (std::size_t e = 0; e < names.size(); ++e) {
      if (!lines[e].defined) out << "note: " << names[e] << " truths have zero variance; regression line undefined\n";
    }
    out << "wrote " << scatter << '\n';
  }
  write_report(rows, report_path);
  print_rows(rows, out);
  out << "wrote " << report_path << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  std::vector<std::string> components;
  double tolerance{1e-4};
  double h{1e-6};
};

int cmd_gradcheck(const GradArgs& a, const Globals& g, std::ostream& out) {
  if (g.precision != "double") out << "note: gradient checks always run in double precision\n";
  const auto& names = a.components.empty() ? gradcheck_components() : a.components;
  out << std::left << std::setw(16) << "component" << std::setw(16) << "max_rel_error" << std::setw(10) << "checked"
      << "status\n";
  bool ok = true;
  for (const auto& c : names) {
    const GradCheckResult r = run_gradcheck(c, {a.h, a.tolerance, g.seed});
    ok = ok && r.pass;
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    out << std::left << std::setw(16) << r.component << std::setw(16) << err.str() << std::setw(10) << r.checked
        << (r.pass ? "pass" : "FAIL") << '\n';
  }
  if (!ok) throw VerifyFailure("gradient check failed (tolerance " + csv::format_double(a.tolerance) + ")");
  return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string model;
  std::size_t iterations{1000};
  std::size_t warmup{20};
  std::size_t reference_iterations{10};
  std::size_t length{5500};
  std::size_t depth{20};
  std::size_t width{64};
};

struct Timing {
  double hz;
  double p50_ms;
  double p99_ms;
};

template <typename F>
Timing time_calls(std::size_t n, F&& f) {
  std::vector<double> ms(n);
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    const auto t0 = clock::now();
    f();
    ms[i] = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }
  const double total = std::chrono::duration<double>(clock::now() - start).count();
  std::sort(ms.begin(), ms.end());
  auto pct = [&](double q) { return ms[std::min(n - 1, static_cast<std::size_t>(q * static_cast<double>(n - 1) + 0.5))]; };
  return {static_cast<double>(n) / total, pct(0.5), pct(0.99)};
}

std::string human_bytes(std::size_t n) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6 << " MB";
  return s.str();
}

template <typename T>
int bench_typed(const BenchArgs& a, const PreprocNet<T>& net, std::ostream& out) {
  const NetConfig& cfg = net.config();
  const AxisPtr axis = axis_for_length(cfg.input_length);
  Rng rng = substream(0, "bench");
  const Composition c = DirichletCompositionSampler{}(rng);
  const EmissionLineDB db = EmissionLineDB::builtin();
  const Spectrum clean = synth_clean(c, db, axis);
  const Shot shot = make_shot(c, DefaultParamSampler{}(rng, clean), db, axis, PreprocLevel::level_1b);
  const std::vector<double> y = scaled_to_unit_l2(shot.raw.intensities());
  std::vector<T> yt(y.begin(), y.end());
  std::vector<T> z(y.size());

  FastPreprocNet<T> fast(net);
  for (std::size_t i = 0; i < a.warmup; ++i) fast.residual(yt, z);
  const Timing tf = time_calls(a.iterations, [&] { fast.residual(yt, z); });

  const nn::Tensor<T> batch = pack_batch<T>(std::vector<std::vector<double>>{y});
  const auto ref = net.infer(batch);
  double diff = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(z[i]) - static_cast<double>(ref.z_hat.values[i])));
  }

  out << std::fixed << std::setprecision(1);
  out << "config: " << cfg.describe() << ", precision " << (std::is_same_v<T, float> ? "single" : "double")
      << ", one thread\n";
  out << "fast path: " << tf.hz << " shots/s, p50 " << std::setprecision(2) << tf.p50_ms << " ms, p99 " << tf.p99_ms
      << " ms over " << a.iterations << " iterations\n";
  if (a.reference_iterations > 0) {
    const Timing tr = time_calls(a.reference_iterations, [&] { (void)net.infer(batch); });
    out << std::setprecision(1) << "reference path: " << tr.hz << " shots/s, p50 " << std::setprecision(2)
        << tr.p50_ms << " ms over " << a.reference_iterations << " iterations\n";
  }
  out << std::scientific << std::setprecision(2) << "fast vs reference max |diff|: " << diff << '\n';

  const std::size_t params = param_count(net);
  const std::size_t bytes = serialized_size(net);
  out << "parameters: " << params << " (quoted figure: ~4K)\n";
  out << "serialized size: " << human_bytes(bytes) << " as float64 (" << human_bytes(params * 4)
      << " as float32; quoted figure: ~1MB)\n";
  const std::size_t full_params = param_count(PreprocNet<float>(full_config()));
  out << "note: the quoted figures are ~4K parameters and a ~1MB model. The full trunk (20 convolutions, width 64, "
         "kernel 3) has "
      << full_params << " weights, " << human_bytes(full_params * 4)
      << " in float32: consistent with ~1MB, not with ~4K.\n";
  return kOk;
}

int cmd_bench(const BenchArgs& a, const Globals& g, std::ostream& out) {
  if (a.iterations < 1000) throw UsageError("--iterations must be at least 1000");
  if (!a.model.empty()) {
    const ModelHeader h = model_header(a.model, {ModelKind::preproc, ModelKind::e2e});
    const bool single = h.precision == Precision::single;
    if (h.kind == ModelKind::e2e) {
      return single ? bench_typed(a, load_model<EndToEndNet<float>>(a.model).trunk(), out)
                    : bench_typed(a, load_model<EndToEndNet<double>>(a.model).trunk(), out);
    }
    return single ? bench_typed(a, load_model<PreprocNet<float>>(a.model), out)
                  : bench_typed(a, load_model<PreprocNet<double>>(a.model), out);
  }
  NetConfig cfg;
  cfg.depth = a.depth;
  cfg.width = a.width;
  cfg.input_length = a.length;
  cfg.pool_bins = std::min<std::size_t>(cfg.pool_bins, a.length);
  cfg.validate();
  Rng init = substream(g.seed, "init");
  if (parse_precision(g.precision) == Precision::single) {
    PreprocNet<float> net(cfg);
    net.init(init);
    return bench_typed(a, net, out);
  }
  PreprocNet<double> net(cfg);
  net.init(init);
  return bench_typed(a, net, out);
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> files;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      files.push_back(args[i + 1]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      files.push_back(args[i].substr(9));
    }
  }
  if (files.empty()) return args;

  std::vector<std::string> injected;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw DataError("cannot open config file " + f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError(f + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(f + ": config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      const std::string flag = key.rfind("--", 0) == 0 ? key : "--" + key;
      if (flag == "--config") continue;
      auto emit = [&](const json& v) {
        if (v.is_boolean()) {
          if (v.get<bool>()) injected.push_back(flag);
        } else if (v.is_string()) {
          injected.push_back(flag);
          injected.push_back(v.get<std::string>());
        } else if (v.is_number()) {
          injected.push_back(flag);
          injected.push_back(v.dump());
        } else if (!v.is_null()) {
          throw DataError(f + ": value of '" + key + "' must be a scalar or a list of scalars");
        }
      };
      if (value.is_array()) {
        for (const auto& v : value) emit(v);
      } else {
        emit(value);
      }
    }
  }

  // Insert after the subcommand path so subcommand flags are recognized.
  std::size_t at = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (kCommands.count(args[i])) {
      at = i + 1;
      if (args[i] == "train" && i + 1 < args.size() && kTrainModes.count(args[i + 1])) at = i + 2;
      break;
    }
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(at));
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(at), args.end());
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual CNN preprocessing and calibration for LIBS spectra", "specnet"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "JSON file of flag defaults; explicit flags override")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_option("--precision", g.precision, "single or double")->check(CLI::IsMember({"single", "double"}));
  app.add_option("--threads", g.threads, "Worker threads for inference/evaluation; 0 is sequential");
  app.add_option("--seed", g.seed, "Root seed of every random substream");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--out", sa.out, "Dataset directory")->required();
  synth->add_option("--shots", sa.shots, "Number of shots");
  synth->add_option("--level", sa.level, "Label level")->check(CLI::IsMember({"1a", "1b"}));
  synth->add_option("--length", sa.length, "Spectral bins (512 desk axis, 5500 full axis)")->check(CLI::Range(16, 100000));
  synth->add_option("--shots-per-target", sa.shots_per_target, "Consecutive shots sharing one composition")
      ->check(CLI::PositiveNumber);
  synth->add_option("--normalization", sa.normalization, "l2 or max")->check(CLI::IsMember({"l2", "max"}));
  synth->add_option("--distance-min", sa.distance_lo, "Minimum distance (m)");
  synth->add_option("--distance-max", sa.distance_hi, "Maximum distance (m)");
  synth->add_option("--lines", sa.lines, "Emission line CSV (default: built-in table)")->check(CLI::ExistingFile);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);
  std::vector<CLI::App*> train_modes;
  for (const std::string mode : {"preproc", "calib", "e2e"}) {
    auto* t = train->add_subcommand(mode, "Train the " + mode + " model");
    t->add_option("--data", ta.data, "Dataset directory or manifest")->required();
    t->add_option("--out", ta.out, "Model file")->required();
    t->add_option("--trace", ta.trace, "Loss trace CSV (default <out>.trace.csv)");
    t->add_option("--epochs", ta.epochs, "Epochs");
    t->add_option("--batch", ta.batch, "Minibatch size");
    t->add_option("--lr", ta.lr, "Adam learning rate");
    t->add_option("--depth", ta.depth, "Convolutions in the residual trunk");
    t->add_option("--width", ta.width, "Trunk channels");
    t->add_option("--kernel", ta.kernel, "Kernel size (odd)");
    t->add_option("--pool-bins", ta.pool_bins, "Head pooling segments (default min(64, N))");
    t->add_option("--head-channels", ta.head_channels, "Head convolution channels");
    t->add_option("--head-hidden", ta.head_hidden, "Head hidden units");
    t->add_option("--level", ta.level, "Clean label level")->check(CLI::IsMember({"1a", "1b"}));
    t->add_flag("--validate", ta.validate, "Add test-split rows to the trace");
    t->add_flag("--no-standardize", ta.no_standardize, "Do not standardize calibration targets");
    add_split_options(t, ta.split);
    if (mode == "calib") {
      t->add_option("--preproc-model", ta.preproc_model, "Clean inputs with this preprocessing model");
      t->add_flag("--use-reference-clean", ta.use_reference_clean, "Train on the dataset's clean labels");
    }
    train_modes.push_back(t);
  }

  InferArgs pa;
  auto* preprocess = app.add_subcommand("preprocess", "Clean spectra with a preprocessing model");
  preprocess->add_option("--model", pa.model, "Preprocessing model")->required();
  preprocess->add_option("--data", pa.data, "Dataset directory (every shot)");
  preprocess->add_option("--input", pa.inputs, "Spectrum CSV files")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  preprocess->add_option("--out", pa.out, "Output directory")->required();

  InferArgs ca;
  auto* calibrate = app.add_subcommand("calibrate", "Predict oxide compositions");
  calibrate->add_option("--model", ca.model, "Calibration head or end-to-end model")->required();
  calibrate->add_option("--preproc-model", ca.preproc_model, "Preprocessing model for a calibration head");
  calibrate->add_flag("--clean-input", ca.clean_input, "Inputs are already clean spectra");
  calibrate->add_flag("--clamp", ca.clamp, "Clamp predictions to [0, 100] wt.%");
  calibrate->add_option("--data", ca.data, "Dataset directory (every shot)");
  calibrate->add_option("--input", ca.inputs, "Spectrum CSV files")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  calibrate->add_option("--out", ca.out, "Predictions CSV")->required();

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Write report CSVs for a model on a labeled split");
  evaluate->add_option("--model", ea.model, "Model file")->required();
  evaluate->add_option("--data", ea.data, "Dataset directory or manifest")->required();
  evaluate->add_option("--out", ea.out, "Report directory")->required();
  evaluate->add_option("--split", ea.split, "Evaluated side")->check(CLI::IsMember({"train", "test", "all"}));
  evaluate->add_option("--level", ea.level, "Clean label level")->check(CLI::IsMember({"1a", "1b"}));
  evaluate->add_option("--preproc-model", ea.preproc_model, "Preprocessing model for a calibration head");
  evaluate->add_flag("--use-reference-clean", ea.use_reference_clean, "Feed a calibration head the clean labels");
  evaluate->add_flag("--clamp", ea.clamp, "Clamp predictions to [0, 100] wt.%");
  add_split_options(evaluate, ea.partition);

  GradArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification (double precision)");
  gradcheck->add_option("--component", ga.components, "Restrict to these components")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->check(CLI::IsMember(gradcheck_components()));
  gradcheck->add_option("--tolerance", ga.tolerance, "Maximum relative error");
  gradcheck->add_option("--step", ga.h, "Central difference step");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Single-shot preprocessing throughput");
  bench->add_option("--model", ba.model, "Preprocessing or end-to-end model (default: random init)");
  bench->add_option("--iterations", ba.iterations, "Timed iterations (>= 1000)");
  bench->add_option("--warmup", ba.warmup, "Untimed warmup iterations");
  bench->add_option("--reference-iterations", ba.reference_iterations, "Timed iterations of the layer-by-layer path");
  bench->add_option("--length", ba.length, "Spectral bins without --model");
  bench->add_option("--depth", ba.depth, "Convolutions without --model");
  bench->add_option("--width", ba.width, "Channels without --model");

  try {
    std::vector<std::string> argv = expand_config(args);
    std::reverse(argv.begin(), argv.end());
    try {
      app.parse(argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kOk : kUsage;
    }
    if (synth->parsed()) return cmd_synth(sa, g, out);
    for (auto* t : train_modes) {
      if (t->parsed()) {
        ta.mode = t->get_name();
        return cmd_train(ta, g, out);
      }
    }
    if (preprocess->parsed()) return cmd_preprocess(pa, g, out);
    if (calibrate->parsed()) return cmd_calibrate(ca, g, out);
    if (evaluate->parsed()) return cmd_evaluate(ea, g, out);
    if (gradcheck->parsed()) return cmd_gradcheck(ga, g, out);
    if (bench->parsed()) return cmd_bench(ba, g, out);
    err << "error: no subcommand\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const VerifyFailure& e) {
    err << "verification failed: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace specnet::cli
