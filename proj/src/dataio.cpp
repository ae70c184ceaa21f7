#include "specnet/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>

#include "csv.hpp"
#include "json.hpp"
#include "specnet/rng.hpp"

namespace specnet {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

bool is_blank(std::string_view line) { return csv::trim(line).empty(); }

}  // namespace

// ---------------------------------------------------------------------------
// Spectra

Spectrum load_spectrum_csv(const std::string& path, const AxisPtr& expected_axis) {
  const auto rows = csv::lines(read_file(path));
  if (rows.empty() || csv::split(rows[0]) != std::vector<std::string_view>{"wavelength_nm", "intensity"}) {
    throw csv::ParseError(path, 1, "expected header wavelength_nm,intensity");
  }
  std::vector<double> wl;
  std::vector<double> values;
  wl.reserve(rows.size());
  values.reserve(rows.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (is_blank(rows[i])) continue;
    const auto f = csv::split(rows[i]);
    if (f.size() != 2) {
      throw csv::ParseError(path, i + 1, "expected 2 columns, found " + std::to_string(f.size()));
    }
    const double w = csv::parse_double(f[0], path, i + 1);
    const double v = csv::parse_double(f[1], path, i + 1);
    if (!std::isfinite(v)) throw csv::ParseError(path, i + 1, "non-finite intensity");
    if (expected_axis) {
      if (wl.size() >= expected_axis->size()) {
        throw csv::ParseError(path, i + 1, "more rows than the dataset axis (" +
                                               std::to_string(expected_axis->size()) + " bins)");
      }
      if (w != expected_axis->values()[wl.size()]) {
        throw csv::ParseError(path, i + 1, "wavelength " + std::string(f[0]) + " does not match the dataset axis");
      }
    }
    wl.push_back(w);
    values.push_back(v);
  }
  if (values.empty()) throw DataError(path + ": no data rows");
  if (expected_axis) {
    if (values.size() != expected_axis->size()) {
      throw DataError(path + ": " + std::to_string(values.size()) + " rows, dataset axis has " +
                      std::to_string(expected_axis->size()));
    }
    return Spectrum(expected_axis, std::move(values));
  }
  try {
    return Spectrum(make_axis(std::move(wl)), std::move(values));
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }
}

void save_spectrum_csv(const Spectrum& s, const std::string& path) {
  std::string out = "wavelength_nm,intensity\n";
  out.reserve(s.size() * 40);
  const auto& wl = s.axis().values();
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += csv::format_double(wl[i]);
    out += ',';
    out += csv::format_double(s[i]);
    out += '\n';
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Manifest

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.shot_id).second) throw DataError("duplicate shot_id '" + r.shot_id + "'");
    if (axis && !(r.raw.axis() == *axis)) throw DataError("shot " + r.shot_id + ": raw spectrum off the dataset axis");
    try {
      r.validate();
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
  }
}

namespace {

AxisPtr load_axis_csv(const std::string& path) {
  const auto rows = csv::lines(read_file(path));
  if (rows.empty() || csv::trim(rows[0]) != "wavelength_nm") throw csv::ParseError(path, 1, "expected header wavelength_nm");
  std::vector<double> wl;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (is_blank(rows[i])) continue;
    const auto f = csv::split(rows[i]);
    if (f.size() != 1) throw csv::ParseError(path, i + 1, "expected 1 column, found " + std::to_string(f.size()));
    wl.push_back(csv::parse_double(f[0], path, i + 1));
  }
  try {
    return make_axis(std::move(wl));
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }
}

void save_axis_csv(const WavelengthAxis& axis, const std::string& path) {
  std::string out = "wavelength_nm\n";
  for (double w : axis.values()) out += csv::format_double(w) + '\n';
  write_file(path, out);
}

std::string safe_name(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

template <typename V>
V get_required(const json& obj, const char* key, const std::string& source, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw csv::ParseError(source, line, std::string("missing key '") + key + "'");
  try {
    return it->template get<V>();
  } catch (const json::exception&) {
    throw csv::ParseError(source, line, std::string("key '") + key + "' has the wrong type");
  }
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  fs::path dir = path;
  fs::path manifest_path = dir / "manifest.jsonl";
  if (fs::is_regular_file(dir)) {
    manifest_path = dir;
    dir = dir.parent_path();
  }
  if (!fs::exists(manifest_path)) throw DataError("no manifest at " + manifest_path.string());

  DatasetManifest m;
  const fs::path meta_path = dir / "dataset.json";
  std::string axis_file = "axis.csv";
  if (fs::exists(meta_path)) {
    json meta;
    try {
      meta = json::parse(read_file(meta_path.string()));
    } catch (const json::exception& e) {
      throw DataError(meta_path.string() + ": " + e.what());
    }
    if (meta.value("version", 1) != 1) throw DataError(meta_path.string() + ": unsupported version");
    axis_file = meta.value("axis_file", axis_file);
    m.provenance = meta.value("provenance", std::string());
  }
  if (fs::exists(dir / axis_file)) m.axis = load_axis_csv((dir / axis_file).string());

  const std::string source = manifest_path.string();
  const auto rows = csv::lines(read_file(source));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t line = i + 1;
    if (is_blank(rows[i])) continue;
    json obj;
    try {
      obj = json::parse(rows[i]);
    } catch (const json::exception& e) {
      throw csv::ParseError(source, line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw csv::ParseError(source, line, "expected a JSON object");
    auto load = [&](const std::string& rel) {
      try {
        Spectrum s = load_spectrum_csv((dir / rel).string(), m.axis);
        if (!m.axis) m.axis = s.axis_ptr();
        return s;
      } catch (const DataError& e) {
        throw csv::ParseError(source, line, e.what());
      }
    };
    ShotRecord r{get_required<std::string>(obj, "shot_id", source, line),
                 get_required<std::string>(obj, "target_id", source, line),
                 get_required<std::string>(obj, "session", source, line),
                 get_required<double>(obj, "distance_m", source, line),
                 load(get_required<std::string>(obj, "raw_path", source, line)),
                 std::nullopt,
                 std::nullopt,
                 std::nullopt};
    if (obj.contains("clean_1a_path")) r.clean_1a = load(get_required<std::string>(obj, "clean_1a_path", source, line));
    if (obj.contains("clean_1b_path")) r.clean_1b = load(get_required<std::string>(obj, "clean_1b_path", source, line));
    if (obj.contains("composition")) {
      const auto& c = obj["composition"];
      if (!c.is_object()) throw csv::ParseError(source, line, "composition must be an object");
      Composition comp;
      for (const auto& [name, value] : c.items()) {
        if (!value.is_number()) throw csv::ParseError(source, line, "composition value for " + name + " is not a number");
        comp.element_names.push_back(name);
        comp.oxide_wt_pct.push_back(value.get<double>());
      }
      r.composition = std::move(comp);
    }
    try {
      r.validate();
    } catch (const std::invalid_argument& e) {
      throw csv::ParseError(source, line, e.what());
    }
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& dir_path) {
  manifest.validate();
  const fs::path dir = dir_path;
  std::error_code ec;
  fs::create_directories(dir / "spectra", ec);
  if (ec) throw DataError("cannot create " + (dir / "spectra").string() + ": " + ec.message());

  AxisPtr axis = manifest.axis;
  if (!axis && !manifest.records.empty()) axis = manifest.records.front().raw.axis_ptr();
  json meta;
  meta["version"] = 1;
  meta["axis_file"] = "axis.csv";
  meta["provenance"] = manifest.provenance;
  write_file((dir / "dataset.json").string(), meta.dump(2) + "\n");
  if (axis) save_axis_csv(*axis, (dir / "axis.csv").string());

  std::string lines;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    const std::string stem = "spectra/" + std::to_string(i) + "_" + safe_name(r.shot_id);
    json obj;
    obj["shot_id"] = r.shot_id;
    obj["target_id"] = r.target_id;
    obj["session"] = r.session;
    obj["distance_m"] = r.distance_m;
    obj["raw_path"] = stem + "_raw.csv";
    save_spectrum_csv(r.raw, (dir / (stem + "_raw.csv")).string());
    if (r.clean_1a) {
      obj["clean_1a_path"] = stem + "_clean_1a.csv";
      save_spectrum_csv(*r.clean_1a, (dir / (stem + "_clean_1a.csv")).string());
    }
    if (r.clean_1b) {
      obj["clean_1b_path"] = stem + "_clean_1b.csv";
      save_spectrum_csv(*r.clean_1b, (dir / (stem + "_clean_1b.csv")).string());
    }
    if (r.composition) {
      json comp = json::object();
      for (std::size_t k = 0; k < r.composition->size(); ++k) {
        comp[r.composition->element_names[k]] = r.composition->oxide_wt_pct[k];
      }
      obj["composition"] = std::move(comp);
    }
    lines += obj.dump() + "\n";
  }
  write_file((dir / "manifest.jsonl").string(), lines);
}

// ---------------------------------------------------------------------------
// Partitions

namespace {

void check_fraction(double train_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("train fraction must be in (0, 1)");
}

void sort_split(Split& s) {
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
}

}  // namespace

Split partition_random(const DatasetManifest& manifest, double train_frac, std::uint64_t seed) {
  check_fraction(train_frac);
  const std::size_t n = manifest.records.size();
  if (n < 2) throw DataError("partition needs at least 2 shots");
  auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Rng rng = substream(seed, "partition");
  const auto order = permutation(n, rng);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  sort_split(s);
  return s;
}

Split partition_by_target(const DatasetManifest& manifest, double train_frac, std::uint64_t seed) {
  check_fraction(train_frac);
  std::vector<std::string> targets;
  std::map<std::string, std::vector<std::size_t>> shots;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& id = manifest.records[i].target_id;
    auto [it, inserted] = shots.try_emplace(id);
    if (inserted) targets.push_back(id);
    it->second.push_back(i);
  }
  if (targets.size() < 2) throw DataError("cannot split by target: need at least 2 distinct targets");

  Rng rng = substream(seed, "partition-target");
  const auto order = permutation(targets.size(), rng);
  const std::size_t n = manifest.records.size();
  const std::size_t T = targets.size();

  // Subset sums of target shot counts over the shuffled order. first[s] is
  // the number of leading targets needed before s shots become reachable;
  // a sum first reached at step i always includes target i-1 and its rest
  // is reachable from targets before it.
  constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> first(n + 1, kNever);
  first[0] = 0;
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t c = shots[targets[order[i]]].size();
    for (std::size_t s = n; s >= c && s > 0; --s) {
      if (first[s] == kNever && first[s - c] <= i) first[s] = i + 1;
    }
  }
  const double goal = train_frac * static_cast<double>(n);
  std::size_t best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t s = 1; s < n; ++s) {
    if (first[s] == kNever) continue;
    const double gap = std::abs(static_cast<double>(s) - goal);
    if (gap < best_gap) {
      best_gap = gap;
      best = s;
    }
  }
  // Every target has at least one shot, so best is in [1, n-1] and both sides
  // receive a target.
  std::vector<char> in_train(T, 0);
  for (std::size_t s = best; s > 0;) {
    const std::size_t i = first[s] - 1;
    in_train[i] = 1;
    s -= shots[targets[order[i]]].size();
  }
  Split split;
  for (std::size_t i = 0; i < T; ++i) {
    const auto& idx = shots[targets[order[i]]];
    auto& side = in_train[i] ? split.train : split.test;
    side.insert(side.end(), idx.begin(), idx.end());
  }
  sort_split(split);
  return split;
}

std::vector<ShotRecord> select(const std::vector<ShotRecord>& records, const std::vector<std::size_t>& indices) {
  std::vector<ShotRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Models

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::preproc: return "preproc";
    case ModelKind::calib: return "calib";
    case ModelKind::e2e: return "e2e";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "preproc") return ModelKind::preproc;
  if (name == "calib") return ModelKind::calib;
  if (name == "e2e") return ModelKind::e2e;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

namespace {

constexpr char kMagic[8] = {'S', 'P', 'E', 'C', 'N', 'E', 'T', '\x01'};
constexpr int kModelVersion = 1;

template <typename Net>
struct NetTraits;
template <typename T>
struct NetTraits<PreprocNet<T>> {
  static constexpr ModelKind kind = ModelKind::preproc;
  using value_type = T;
};
template <typename T>
struct NetTraits<CalibHead<T>> {
  static constexpr ModelKind kind = ModelKind::calib;
  using value_type = T;
};
template <typename T>
struct NetTraits<EndToEndNet<T>> {
  static constexpr ModelKind kind = ModelKind::e2e;
  using value_type = T;
};

json config_to_json(const NetConfig& c) {
  json j;
  j["depth"] = c.depth;
  j["width"] = c.width;
  j["kernel_size"] = c.kernel_size;
  j["num_elements"] = c.num_elements;
  j["input_length"] = c.input_length;
  j["pool_bins"] = c.pool_bins;
  j["head_channels"] = c.head_channels;
  j["head_hidden"] = c.head_hidden;
  j["element_names"] = c.element_names;
  return j;
}

NetConfig config_from_json(const json& j) {
  NetConfig c;
  c.depth = j.at("depth").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.num_elements = j.at("num_elements").get<std::size_t>();
  c.input_length = j.at("input_length").get<std::size_t>();
  c.pool_bins = j.at("pool_bins").get<std::size_t>();
  c.head_channels = j.at("head_channels").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.element_names = j.at("element_names").get<std::vector<std::string>>();
  c.validate();
  return c;
}

struct BlockRef {
  std::string name;
  std::string role;
  std::size_t count;
};

template <typename Net>
std::vector<BlockRef> block_table(const Net& net) {
  std::vector<BlockRef> out;
  for (const auto& p : net.parameters()) out.push_back({p.name, "param", p.param->size()});
  for (const auto& b : net.buffers()) out.push_back({b.name, "buffer", b.values->size()});
  return out;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <typename T>
void put_values(std::string& out, std::span<const T> values) {
  for (T v : values) put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
}

std::string header_text(ModelKind kind, Precision precision, const NetConfig& config,
                        const std::vector<BlockRef>& blocks) {
  json h;
  h["format"] = "specnet-model";
  h["version"] = kModelVersion;
  h["kind"] = to_string(kind);
  h["precision"] = to_string(precision);
  h["config"] = config_to_json(config);
  json table = json::array();
  for (const auto& b : blocks) table.push_back({{"name", b.name}, {"role", b.role}, {"count", b.count}});
  h["blocks"] = std::move(table);
  return h.dump(1) + "\n";
}

struct ParsedModel {
  ModelHeader header;
  std::vector<BlockRef> blocks;
  std::string bytes;
  std::size_t data_offset{0};
};

ParsedModel parse_model(const std::string& path, bool header_only) {
  ParsedModel pm;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path);
  char prefix[16];
  in.read(prefix, 16);
  if (in.gcount() != 16) throw DataError(path + ": truncated model file");
  if (std::memcmp(prefix, kMagic, 8) != 0) throw DataError(path + ": not a specnet model (bad magic)");
  const std::uint64_t header_len = get_u64(prefix + 8);
  if (header_len > (1u << 26)) throw DataError(path + ": implausible header length");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) throw DataError(path + ": truncated model header");
  json h;
  try {
    h = json::parse(header);
    if (h.at("format").get<std::string>() != "specnet-model") throw DataError(path + ": unknown format");
    pm.header.version = h.at("version").get<int>();
    if (pm.header.version != kModelVersion) {
      throw DataError(path + ": unsupported model version " + std::to_string(pm.header.version));
    }
    pm.header.kind = parse_model_kind(h.at("kind").get<std::string>());
    pm.header.precision = parse_precision(h.at("precision").get<std::string>());
    pm.header.config = config_from_json(h.at("config"));
    for (const auto& b : h.at("blocks")) {
      pm.blocks.push_back({b.at("name").get<std::string>(), b.at("role").get<std::string>(),
                           b.at("count").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed model header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": malformed model header: " + e.what());
  }
  if (header_only) return pm;
  std::ostringstream rest;
  rest << in.rdbuf();
  pm.bytes = rest.str();
  return pm;
}

}  // namespace

ModelHeader read_model_header(const std::string& path) { return parse_model(path, true).header; }

template <typename Net>
void save_model(const Net& net, const std::string& path) {
  using T = typename NetTraits<Net>::value_type;
  const Precision precision = std::is_same_v<T, float> ? Precision::single : Precision::double_;
  const auto blocks = block_table(net);
  const std::string header = header_text(NetTraits<Net>::kind, precision, net.config(), blocks);
  std::string out(kMagic, kMagic + 8);
  put_u64(out, header.size());
  out += header;
  for (const auto& p : net.parameters()) put_values<T>(out, p.param->value);
  for (const auto& b : net.buffers()) put_values<T>(out, *b.values);
  write_file(path, out);
}

template <typename Net>
Net load_model(const std::string& path, const NetConfig* expected) {
  using T = typename NetTraits<Net>::value_type;
  ParsedModel pm = parse_model(path, false);
  if (pm.header.kind != NetTraits<Net>::kind) {
    throw DataError(path + ": holds a " + to_string(pm.header.kind) + " model, expected " +
                    to_string(NetTraits<Net>::kind));
  }
  if (expected && !(pm.header.config == *expected)) {
    throw DataError(path + ": model configuration mismatch\n  file:     " + pm.header.config.describe() +
                    "\n  expected: " + expected->describe());
  }
  Net net(pm.header.config);
  const auto blocks = block_table(net);
  if (blocks.size() != pm.blocks.size()) throw DataError(path + ": block table does not match the architecture");
  std::size_t total = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name != pm.blocks[i].name || blocks[i].role != pm.blocks[i].role ||
        blocks[i].count != pm.blocks[i].count) {
      throw DataError(path + ": block '" + pm.blocks[i].name + "' does not match the architecture (expected '" +
                      blocks[i].name + "')");
    }
    total += blocks[i].count;
  }
  if (pm.bytes.size() < total * 8) throw DataError(path + ": truncated model data");
  if (pm.bytes.size() > total * 8) throw DataError(path + ": trailing bytes after model data");
  const char* p = pm.bytes.data();
  auto fill = [&](auto& dst) {
    for (auto& v : dst) {
      v = static_cast<T>(std::bit_cast<double>(get_u64(p)));
      p += 8;
    }
  };
  for (auto& prm : net.parameters()) fill(prm.param->value);
  for (auto& b : net.buffers()) fill(*b.values);
  return net;
}

template <typename Net>
std::size_t serialized_size(const Net& net) {
  using T = typename NetTraits<Net>::value_type;
  const Precision precision = std::is_same_v<T, float> ? Precision::single : Precision::double_;
  const auto blocks = block_table(net);
  std::size_t values = 0;
  for (const auto& b : blocks) values += b.count;
  return 16 + header_text(NetTraits<Net>::kind, precision, net.config(), blocks).size() + 8 * values;
}

#define SPECNET_INSTANTIATE(Net)                                              \
  template void save_model<Net>(const Net&, const std::string&);             \
  template Net load_model<Net>(const std::string&, const NetConfig*);        \
  template std::size_t serialized_size<Net>(const Net&);

SPECNET_INSTANTIATE(PreprocNet<float>)
SPECNET_INSTANTIATE(PreprocNet<double>)
SPECNET_INSTANTIATE(CalibHead<float>)
SPECNET_INSTANTIATE(CalibHead<double>)
SPECNET_INSTANTIATE(EndToEndNet<float>)
SPECNET_INSTANTIATE(EndToEndNet<double>)

#undef SPECNET_INSTANTIATE

}  // namespace specnet
