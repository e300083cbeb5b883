#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "teapcr/errors.hpp"
#include "teapcr/rng.hpp"
#include "teapcr/tensor.hpp"

namespace teapcr {

enum class ColumnKind { continuous, categorical };

struct FeatureSpec {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
};

/// Typed in-memory table: F feature columns (categoricals stored as dict
/// codes), one label column, optional record-boundary markers. Rows keep
/// their source file order; orig_rows carries provenance through splits.
struct DatasetTable {
  std::vector<FeatureSpec> features;
  std::vector<std::vector<std::string>> category_dicts;  // per feature, empty if continuous
  std::vector<std::string> label_names;
  std::vector<double> values;  // rows x F, row-major
  std::vector<int> labels;
  std::vector<Index> record_ids;
  std::vector<Index> orig_rows;

  Index rows() const { return static_cast<Index>(labels.size()); }
  Index feature_count() const { return static_cast<Index>(features.size()); }
  int classes() const { return static_cast<int>(label_names.size()); }
  double at(Index row, Index f) const { return values[row * feature_count() + f]; }
};

/// Maximal run of rows sharing one record id and one label; windows never
/// straddle these.
struct Segment {
  Index begin = 0, end = 0;  // [begin, end)
  int label = 0;
  Index length() const { return end - begin; }
};

std::vector<Segment> segments_of(const DatasetTable& table);

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct CsvSchema {
  std::string label_column;
  std::string record_column;  // optional; empty = single record
  std::vector<std::string> categorical_columns;
  std::vector<std::string> label_values;  // optional fixed class order
};

/// Parses a header-first CSV into a typed table. Failures carry row/column
/// coordinates. Columns not named in the schema are continuous features.
DatasetTable load_csv(const std::string& path, const CsvSchema& schema);

void write_csv(const DatasetTable& table, const std::string& path,
               const std::string& record_column_name = "record");

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

enum class SplitUnit {
  row,    // shuffle individual rows (the W = 1 tabular regime)
  block,  // shuffle whole (record, class) segments; keeps windows leak-free
};

struct SplitConfig {
  int train_parts = 8;
  int test_parts = 2;
  bool stratify = true;
  std::uint64_t seed = 0;
  SplitUnit unit = SplitUnit::row;
  Index cap_per_class = -1;  // applied before the ratio split; -1 = no cap
};

SplitConfig parse_ratio(const std::string& ratio);  // "8:2" -> parts

/// Deterministic seeded split; per-stratum sizes land within 1 of the exact
/// ratio. Train and test index sets are disjoint by construction.
std::pair<DatasetTable, DatasetTable> split(const DatasetTable& table, const SplitConfig& cfg);

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

struct WindowedBatch {
  Index count = 0, window = 0, features = 0;
  std::vector<FeatureSpec> schema;
  std::vector<std::vector<std::string>> category_dicts;
  std::vector<std::string> label_names;
  std::vector<double> values;  // count x window x features
  std::vector<int> labels;
  std::vector<std::pair<Index, Index>> row_ranges;  // provenance, original [start,end)
  Index skipped_segments = 0;
  Index dropped_rows = 0;

  double at(Index b, Index t, Index f) const {
    return values[(b * window + t) * features + f];
  }
  double& at(Index b, Index t, Index f) {
    return values[(b * window + t) * features + f];
  }
  int classes() const { return static_cast<int>(label_names.size()); }
};

/// Sliding windows within each (record, class) segment; stride defaults to
/// the window length (non-overlapping). Segments shorter than the window are
/// skipped and counted.
WindowedBatch make_windows(const DatasetTable& table, Index window, Index stride = -1);

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Per-feature z-scoring fitted on training windows only. Continuous
/// features with (near-)zero spread are passed through centered and flagged.
struct Normalizer {
  std::vector<double> mean, stddev;
  std::vector<bool> passthrough;    // constant features
  std::vector<bool> is_continuous;  // categoricals are left untouched

  static Normalizer fit(const WindowedBatch& train);
  void apply(WindowedBatch& batch) const;
};

// ---------------------------------------------------------------------------
// synthetic generators (seeded, deterministic)
// ---------------------------------------------------------------------------

/// Temporal task: each class emits sinusoids at a class-specific frequency
/// (cycles_base + k cycles per record) with a per-record random phase, a
/// class-independent trend, and Gaussian noise. Single-step marginals are
/// matched across classes, so the label is recoverable only from temporal
/// shape.
struct SynthTemporalConfig {
  std::uint64_t seed = 1;
  Index record_len = 128;  // the spec's W argument: one record per window
  Index features = 3;
  int classes = 3;
  Index records = 300;
  double noise = 0.4;
  double trend = 0.2;
  Index cycles_base = 2;
};

DatasetTable synth_temporal(const SynthTemporalConfig& cfg);

/// Tabular task (the W = 1 regime): the label is a deterministic nonlinear
/// rule over (x0, x1) plus a three-level categorical, balanced by rotational
/// symmetry. Extra continuous features are distractors.
struct SynthTabularConfig {
  std::uint64_t seed = 1;
  Index features = 4;  // >= 3: two rule inputs, trailing categorical, rest distractors
  int classes = 4;
  Index rows = 4000;
  double spiral = 0.75;
};

DatasetTable synth_tabular(const SynthTabularConfig& cfg);

/// The tabular generating rule, exposed so tests can re-evaluate it.
int synth_tabular_label(double x0, double x1, Index cat_code, int classes, double spiral);

// ---------------------------------------------------------------------------
// dataset manifest (plain-text key = value)
// ---------------------------------------------------------------------------

struct DatasetManifest {
  std::string csv_path;  // resolved relative to the manifest location
  CsvSchema schema;
  Index window = 1;
  Index stride = -1;
  int ratio_train = 8, ratio_test = 2;
  std::string split_unit = "auto";  // auto | row | block
  bool stratify = true;
  int bins = 10;
};

DatasetManifest load_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

}  // namespace teapcr
