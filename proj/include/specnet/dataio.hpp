#pragma once

// On-disk datasets, the two train/test partition schemes and model files.
//
// Dataset directory layout:
//   dataset.json     {"version": 1, "axis_file": "axis.csv", "provenance": "..."}
//   axis.csv         wavelength_nm
//   manifest.jsonl   one object per shot
//   spectra/*.csv    wavelength_nm,intensity
//
// Manifest keys: shot_id, target_id, session, distance_m, raw_path and the
// optional clean_1a_path, clean_1b_path and composition (oxide -> wt.%).
// Paths are relative to the dataset directory.

#include <cstdint>
#include <string>
#include <vector>

#include "specnet/errors.hpp"
#include "specnet/models.hpp"
#include "specnet/shot_record.hpp"

namespace specnet {

struct DatasetManifest {
  AxisPtr axis;
  std::string provenance;
  std::vector<ShotRecord> records;

  // Throws DataError on duplicate shot ids or records off the axis.
  void validate() const;
};

// Spectrum CSV with header `wavelength_nm,intensity`. When `expected_axis`
// is given the wavelengths must match it exactly and the spectrum shares it.
Spectrum load_spectrum_csv(const std::string& path, const AxisPtr& expected_axis = nullptr);
void save_spectrum_csv(const Spectrum& s, const std::string& path);

// `path` is the dataset directory or its manifest.jsonl.
DatasetManifest load_manifest(const std::string& path);
// Writes the whole directory; values survive the round trip exactly.
void save_manifest(const DatasetManifest& manifest, const std::string& dir);

// Indices into DatasetManifest::records, ascending within each side.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Shots assigned independently of their target; floor(frac * n) train shots,
// clamped to [1, n - 1].
Split partition_random(const DatasetManifest& manifest, double train_frac, std::uint64_t seed);
// Whole targets assigned to one side so that the train shot fraction is as
// close as possible to train_frac; among equally close splits the shuffled
// target order decides.
Split partition_by_target(const DatasetManifest& manifest, double train_frac, std::uint64_t seed);

std::vector<ShotRecord> select(const std::vector<ShotRecord>& records, const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// Model files: 8 magic bytes, little-endian uint64 header length, JSON header
// (version, kind, precision, config, block table), then every block as raw
// little-endian IEEE-754 doubles in table order.

enum class ModelKind { preproc, calib, e2e };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelHeader {
  int version{0};
  ModelKind kind{ModelKind::preproc};
  Precision precision{Precision::single};
  NetConfig config;
};

// Reads only the header.
ModelHeader read_model_header(const std::string& path);

template <typename Net>
void save_model(const Net& net, const std::string& path);

// Throws DataError on a bad magic, unknown version, kind mismatch or
// truncated file, and when `expected` is given and differs from the stored
// configuration (the message prints both).
template <typename Net>
Net load_model(const std::string& path, const NetConfig* expected = nullptr);

// Size of the file save_model would write for `net`.
template <typename Net>
std::size_t serialized_size(const Net& net);

}  // namespace specnet
