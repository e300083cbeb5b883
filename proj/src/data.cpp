#include "teapcr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace teapcr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_cells(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

/// Fisher-Yates with our own Rng so shuffles are identical across standard
/// library implementations.
template <typename T>
void shuffle_units(std::vector<T>& v, Rng& rng) {
  for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) {
    const Index j = rng.uniform_int(0, i);
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
  }
}

}  // namespace

std::vector<Segment> segments_of(const DatasetTable& table) {
  std::vector<Segment> segs;
  const Index n = table.rows();
  Index begin = 0;
  for (Index r = 1; r <= n; ++r) {
    const bool boundary = r == n || table.labels[r] != table.labels[begin] ||
                          table.record_ids[r] != table.record_ids[begin];
    if (boundary) {
      segs.push_back({begin, r, table.labels[begin]});
      begin = r;
    }
  }
  return segs;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

DatasetTable load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_csv: '" + path + "' is empty");
  const auto header = split_cells(line);

  auto column_of = [&](const std::string& name) -> Index {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Index>(i);
    return -1;
  };

  if (schema.label_column.empty()) throw ConfigError("load_csv: no label column named");
  const Index label_col = column_of(schema.label_column);
  if (label_col < 0)
    throw DataError("load_csv: missing label column '" + schema.label_column + "' in " + path);
  Index record_col = -1;
  if (!schema.record_column.empty()) {
    record_col = column_of(schema.record_column);
    if (record_col < 0)
      throw DataError("load_csv: missing record column '" + schema.record_column + "'");
  }
  for (const auto& c : schema.categorical_columns)
    if (column_of(c) < 0) throw DataError("load_csv: missing categorical column '" + c + "'");

  DatasetTable table;
  std::vector<Index> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const Index col = static_cast<Index>(i);
    if (col == label_col || col == record_col) continue;
    const bool cat = std::find(schema.categorical_columns.begin(),
                               schema.categorical_columns.end(),
                               header[i]) != schema.categorical_columns.end();
    table.features.push_back({header[i], cat ? ColumnKind::categorical : ColumnKind::continuous});
    table.category_dicts.emplace_back();
    feature_cols.push_back(col);
  }
  if (table.features.empty()) throw DataError("load_csv: no feature columns in " + path);

  std::map<std::string, int> label_index;
  const bool fixed_labels = !schema.label_values.empty();
  if (fixed_labels) {
    table.label_names = schema.label_values;
    for (std::size_t i = 0; i < schema.label_values.size(); ++i)
      label_index[schema.label_values[i]] = static_cast<int>(i);
  }
  std::map<std::string, Index> record_index;
  std::vector<std::map<std::string, Index>> dict_index(table.features.size());

  Index row_number = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++row_number;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != header.size())
      throw DataError("load_csv: row " + std::to_string(row_number) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));

    const std::string& label_cell = cells[static_cast<std::size_t>(label_col)];
    auto it = label_index.find(label_cell);
    if (it == label_index.end()) {
      if (fixed_labels)
        throw DataError("load_csv: row " + std::to_string(row_number) + ": unknown label value '" +
                        label_cell + "'");
      const int id = static_cast<int>(table.label_names.size());
      table.label_names.push_back(label_cell);
      it = label_index.emplace(label_cell, id).first;
    }
    table.labels.push_back(it->second);

    if (record_col >= 0) {
      const std::string& rc = cells[static_cast<std::size_t>(record_col)];
      auto rit = record_index.find(rc);
      if (rit == record_index.end())
        rit = record_index.emplace(rc, static_cast<Index>(record_index.size())).first;
      table.record_ids.push_back(rit->second);
    } else {
      table.record_ids.push_back(0);
    }

    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
      const std::string& cell = cells[static_cast<std::size_t>(feature_cols[f])];
      if (table.features[f].kind == ColumnKind::continuous) {
        double v = 0;
        if (!parse_double(cell, v))
          throw DataError("load_csv: row " + std::to_string(row_number) + ", column '" +
                          table.features[f].name + "': not numeric: '" + cell + "'");
        table.values.push_back(v);
      } else {
        auto dit = dict_index[f].find(cell);
        if (dit == dict_index[f].end()) {
          dit = dict_index[f].emplace(cell, static_cast<Index>(table.category_dicts[f].size())).first;
          table.category_dicts[f].push_back(cell);
        }
        table.values.push_back(static_cast<double>(dit->second));
      }
    }
    table.orig_rows.push_back(table.rows() - 1);
  }
  if (table.rows() == 0) throw DataError("load_csv: '" + path + "' has no data rows");
  return table;
}

void write_csv(const DatasetTable& table, const std::string& path,
               const std::string& record_column_name) {
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open '" + path + "' for writing");
  bool multi_record = false;
  for (Index r = 1; r < table.rows(); ++r)
    multi_record |= table.record_ids[r] != table.record_ids[0];

  for (const auto& f : table.features) out << f.name << ',';
  if (multi_record) out << record_column_name << ',';
  out << "label\n";

  char buf[64];
  for (Index r = 0; r < table.rows(); ++r) {
    for (Index f = 0; f < table.feature_count(); ++f) {
      const double v = table.at(r, f);
      if (table.features[f].kind == ColumnKind::categorical) {
        out << table.category_dicts[f][static_cast<std::size_t>(v)];
      } else {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
      }
      out << ',';
    }
    if (multi_record) out << 'r' << table.record_ids[r] << ',';
    out << table.label_names[static_cast<std::size_t>(table.labels[r])] << '\n';
  }
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

SplitConfig parse_ratio(const std::string& ratio) {
  SplitConfig cfg;
  const auto colon = ratio.find(':');
  if (colon == std::string::npos)
    throw ConfigError("split ratio '" + ratio + "' must look like '8:2'");
  try {
    cfg.train_parts = std::stoi(ratio.substr(0, colon));
    cfg.test_parts = std::stoi(ratio.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("split ratio '" + ratio + "' must be two integers");
  }
  if (cfg.train_parts < 0 || cfg.test_parts < 0 || cfg.train_parts + cfg.test_parts == 0)
    throw ConfigError("split ratio '" + ratio + "' must have non-negative parts, not both zero");
  return cfg;
}

namespace {

DatasetTable take_rows(const DatasetTable& src, const std::vector<Segment>& units) {
  DatasetTable out;
  out.features = src.features;
  out.category_dicts = src.category_dicts;
  out.label_names = src.label_names;
  const Index F = src.feature_count();
  for (const auto& u : units) {
    for (Index r = u.begin; r < u.end; ++r) {
      for (Index f = 0; f < F; ++f) out.values.push_back(src.at(r, f));
      out.labels.push_back(src.labels[r]);
      out.record_ids.push_back(src.record_ids[r]);
      out.orig_rows.push_back(src.orig_rows[r]);
    }
  }
  return out;
}

}  // namespace

std::pair<DatasetTable, DatasetTable> split(const DatasetTable& table, const SplitConfig& cfg) {
  if (cfg.train_parts < 0 || cfg.test_parts < 0 || cfg.train_parts + cfg.test_parts == 0)
    throw ConfigError("split: invalid ratio parts");
  const double train_frac =
      static_cast<double>(cfg.train_parts) / (cfg.train_parts + cfg.test_parts);

  std::vector<Segment> units;
  if (cfg.unit == SplitUnit::block) {
    units = segments_of(table);
  } else {
    units.reserve(static_cast<std::size_t>(table.rows()));
    for (Index r = 0; r < table.rows(); ++r) units.push_back({r, r + 1, table.labels[r]});
  }

  // group per class; capping and stratified assignment both want this
  std::vector<std::vector<Segment>> by_class(table.label_names.size());
  for (const auto& u : units) by_class[static_cast<std::size_t>(u.label)].push_back(u);

  Rng rng(cfg.seed);
  for (auto& cls : by_class) {
    shuffle_units(cls, rng);
    if (cfg.cap_per_class >= 0 && static_cast<Index>(cls.size()) > cfg.cap_per_class)
      cls.resize(static_cast<std::size_t>(cfg.cap_per_class));
  }

  std::vector<Segment> train_units, test_units;
  if (cfg.stratify) {
    for (std::size_t k = 0; k < by_class.size(); ++k) {
      auto& cls = by_class[k];
      const Index n = static_cast<Index>(cls.size());
      if (n == 0) continue;  // class absent from the data entirely
      Index n_train;
      if (cfg.test_parts == 0) {
        n_train = n;
      } else if (cfg.train_parts == 0) {
        n_train = 0;
      } else {
        if (n < 2)
          throw DataError("split: class '" + table.label_names[k] +
                          "' has too few units to appear on both sides");
        n_train = std::llround(static_cast<double>(n) * train_frac);
        n_train = std::clamp<Index>(n_train, 1, n - 1);
      }
      train_units.insert(train_units.end(), cls.begin(), cls.begin() + n_train);
      test_units.insert(test_units.end(), cls.begin() + n_train, cls.end());
    }
  } else {
    std::vector<Segment> pool;
    for (auto& cls : by_class) pool.insert(pool.end(), cls.begin(), cls.end());
    shuffle_units(pool, rng);
    const Index n = static_cast<Index>(pool.size());
    Index n_train = std::llround(static_cast<double>(n) * train_frac);
    if (cfg.test_parts == 0) n_train = n;
    if (cfg.train_parts == 0) n_train = 0;
    n_train = std::clamp<Index>(n_train, 0, n);
    train_units.assign(pool.begin(), pool.begin() + n_train);
    test_units.assign(pool.begin() + n_train, pool.end());
  }

  auto by_position = [](const Segment& a, const Segment& b) { return a.begin < b.begin; };
  std::sort(train_units.begin(), train_units.end(), by_position);
  std::sort(test_units.begin(), test_units.end(), by_position);
  return {take_rows(table, train_units), take_rows(table, test_units)};
}

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

WindowedBatch make_windows(const DatasetTable& table, Index window, Index stride) {
  if (window < 1) throw ConfigError("make_windows: window must be >= 1");
  if (stride == -1) stride = window;
  if (stride < 1) throw ConfigError("make_windows: stride must be >= 1");

  WindowedBatch batch;
  batch.window = window;
  batch.features = table.feature_count();
  batch.schema = table.features;
  batch.category_dicts = table.category_dicts;
  batch.label_names = table.label_names;

  for (const auto& seg : segments_of(table)) {
    const Index len = seg.length();
    if (len < window) {
      ++batch.skipped_segments;
      batch.dropped_rows += len;
      continue;
    }
    const Index count = (len - window) / stride + 1;
    batch.dropped_rows += len - ((count - 1) * stride + window);
    for (Index i = 0; i < count; ++i) {
      const Index start = seg.begin + i * stride;
      for (Index t = 0; t < window; ++t)
        for (Index f = 0; f < batch.features; ++f)
          batch.values.push_back(table.at(start + t, f));
      batch.labels.push_back(seg.label);
      batch.row_ranges.emplace_back(table.orig_rows[start],
                                    table.orig_rows[start + window - 1] + 1);
      ++batch.count;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

Normalizer Normalizer::fit(const WindowedBatch& train) {
  Normalizer n;
  const Index F = train.features;
  n.mean.assign(static_cast<std::size_t>(F), 0.0);
  n.stddev.assign(static_cast<std::size_t>(F), 1.0);
  n.passthrough.assign(static_cast<std::size_t>(F), false);
  n.is_continuous.assign(static_cast<std::size_t>(F), true);
  for (Index f = 0; f < F; ++f)
    n.is_continuous[static_cast<std::size_t>(f)] =
        train.schema[static_cast<std::size_t>(f)].kind == ColumnKind::continuous;

  const Index samples = train.count * train.window;
  if (samples == 0) throw DataError("Normalizer::fit: no training windows");
  for (Index f = 0; f < F; ++f) {
    if (!n.is_continuous[static_cast<std::size_t>(f)]) continue;
    double sum = 0.0;
    for (Index b = 0; b < train.count; ++b)
      for (Index t = 0; t < train.window; ++t) sum += train.at(b, t, f);
    const double mean = sum / static_cast<double>(samples);
    double var = 0.0;
    for (Index b = 0; b < train.count; ++b)
      for (Index t = 0; t < train.window; ++t) {
        const double d = train.at(b, t, f) - mean;
        var += d * d;
      }
    const double std = std::sqrt(var / static_cast<double>(samples));
    n.mean[static_cast<std::size_t>(f)] = mean;
    if (std < 1e-12) {
      n.passthrough[static_cast<std::size_t>(f)] = true;  // constant feature, centered only
    } else {
      n.stddev[static_cast<std::size_t>(f)] = std;
    }
  }
  return n;
}

void Normalizer::apply(WindowedBatch& batch) const {
  if (static_cast<std::size_t>(batch.features) != mean.size())
    throw ShapeError("Normalizer::apply: feature arity mismatch");
  for (Index b = 0; b < batch.count; ++b)
    for (Index t = 0; t < batch.window; ++t)
      for (Index f = 0; f < batch.features; ++f) {
        if (!is_continuous[static_cast<std::size_t>(f)]) continue;
        double& v = batch.at(b, t, f);
        v -= mean[static_cast<std::size_t>(f)];
        if (!passthrough[static_cast<std::size_t>(f)]) v /= stddev[static_cast<std::size_t>(f)];
      }
}

// ---------------------------------------------------------------------------
// synthetic generators
// ---------------------------------------------------------------------------

DatasetTable synth_temporal(const SynthTemporalConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synth_temporal: need at least 2 classes");
  if (cfg.record_len < 1 || cfg.records < 1 || cfg.features < 1)
    throw ConfigError("synth_temporal: record_len, records and features must be positive");

  DatasetTable t;
  for (Index f = 0; f < cfg.features; ++f) {
    t.features.push_back({"f" + std::to_string(f), ColumnKind::continuous});
    t.category_dicts.emplace_back();
  }
  for (int k = 0; k < cfg.classes; ++k) t.label_names.push_back("c" + std::to_string(k));

  const double two_pi = 2.0 * std::numbers::pi;
  Rng rng(cfg.seed);
  for (Index r = 0; r < cfg.records; ++r) {
    const int k = static_cast<int>(r % cfg.classes);
    const double cycles = static_cast<double>(cfg.cycles_base + k);
    const double phase = rng.uniform(0.0, two_pi);
    for (Index step = 0; step < cfg.record_len; ++step) {
      const double ramp = cfg.record_len > 1
                              ? static_cast<double>(step) / static_cast<double>(cfg.record_len - 1)
                              : 0.0;
      for (Index f = 0; f < cfg.features; ++f) {
        const double psi = two_pi * static_cast<double>(f) / static_cast<double>(cfg.features);
        const double v = std::sin(two_pi * cycles * static_cast<double>(step) /
                                      static_cast<double>(cfg.record_len) +
                                  phase + psi) +
                         cfg.trend * (ramp - 0.5) + cfg.noise * rng.normal(0.0, 1.0);
        t.values.push_back(v);
      }
      t.labels.push_back(k);
      t.record_ids.push_back(r);
      t.orig_rows.push_back(t.rows() - 1);
    }
  }
  return t;
}

int synth_tabular_label(double x0, double x1, Index cat_code, int classes, double spiral) {
  const double two_pi = 2.0 * std::numbers::pi;
  double theta = std::atan2(x1, x0);
  if (theta < 0) theta += two_pi;
  const double radius = std::hypot(x0, x1);
  double phi = std::fmod(theta + spiral * radius + two_pi * static_cast<double>(cat_code) / 3.0,
                         two_pi);
  if (phi < 0) phi += two_pi;
  const int label = static_cast<int>(phi / two_pi * classes);
  return std::min(label, classes - 1);
}

DatasetTable synth_tabular(const SynthTabularConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synth_tabular: need at least 2 classes");
  if (cfg.features < 3)
    throw ConfigError("synth_tabular: need >= 3 features (two rule inputs plus a categorical)");
  if (cfg.rows < 1) throw ConfigError("synth_tabular: rows must be positive");

  DatasetTable t;
  for (Index f = 0; f < cfg.features - 1; ++f) {
    t.features.push_back({"x" + std::to_string(f), ColumnKind::continuous});
    t.category_dicts.emplace_back();
  }
  t.features.push_back({"speed", ColumnKind::categorical});
  t.category_dicts.push_back({"low", "medium", "high"});
  for (int k = 0; k < cfg.classes; ++k) t.label_names.push_back("c" + std::to_string(k));

  Rng rng(cfg.seed);
  for (Index r = 0; r < cfg.rows; ++r) {
    const double x0 = rng.normal(0.0, 1.0);
    const double x1 = rng.normal(0.0, 1.0);
    t.values.push_back(x0);
    t.values.push_back(x1);
    for (Index f = 2; f < cfg.features - 1; ++f) t.values.push_back(rng.normal(0.0, 1.0));
    const Index code = rng.uniform_int(0, 2);
    t.values.push_back(static_cast<double>(code));
    t.labels.push_back(synth_tabular_label(x0, x1, code, cfg.classes, cfg.spiral));
    t.record_ids.push_back(0);
    t.orig_rows.push_back(r);
  }
  return t;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& item : split_cells(s))
    if (!item.empty()) out.push_back(item);
  return out;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("manifest: cannot read boolean '" + s + "' for key '" + key + "'");
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_manifest: cannot open '" + path + "'");
  DatasetManifest m;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("load_manifest: line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "path") m.csv_path = value;
    else if (key == "label_column") m.schema.label_column = value;
    else if (key == "record_column") m.schema.record_column = value;
    else if (key == "categorical_columns") m.schema.categorical_columns = split_list(value);
    else if (key == "label_values") m.schema.label_values = split_list(value);
    else if (key == "window_size") m.window = std::stoll(value);
    else if (key == "stride") m.stride = std::stoll(value);
    else if (key == "split_ratio") {
      const auto r = parse_ratio(value);
      m.ratio_train = r.train_parts;
      m.ratio_test = r.test_parts;
    } else if (key == "split_unit") {
      if (value != "auto" && value != "row" && value != "block")
        throw ConfigError("load_manifest: split_unit must be auto, row or block");
      m.split_unit = value;
    } else if (key == "stratify") m.stratify = parse_bool(value, key);
    else if (key == "bins") m.bins = std::stoi(value);
    else throw ConfigError("load_manifest: unknown key '" + key + "'");
  }
  if (m.csv_path.empty()) throw ConfigError("load_manifest: 'path' is required");
  if (m.schema.label_column.empty()) throw ConfigError("load_manifest: 'label_column' is required");
  // csv path is relative to the manifest location
  std::filesystem::path p(m.csv_path);
  if (p.is_relative()) {
    const auto dir = std::filesystem::path(path).parent_path();
    m.csv_path = (dir / p).string();
  }
  if (m.window < 1) throw ConfigError("load_manifest: window_size must be >= 1");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_manifest: cannot open '" + path + "' for writing");
  out << "path = " << m.csv_path << "\n";
  out << "label_column = " << m.schema.label_column << "\n";
  if (!m.schema.record_column.empty()) out << "record_column = " << m.schema.record_column << "\n";
  if (!m.schema.categorical_columns.empty()) {
    out << "categorical_columns = ";
    for (std::size_t i = 0; i < m.schema.categorical_columns.size(); ++i)
      out << (i ? "," : "") << m.schema.categorical_columns[i];
    out << "\n";
  }
  if (!m.schema.label_values.empty()) {
    out << "label_values = ";
    for (std::size_t i = 0; i < m.schema.label_values.size(); ++i)
      out << (i ? "," : "") << m.schema.label_values[i];
    out << "\n";
  }
  out << "window_size = " << m.window << "\n";
  if (m.stride > 0) out << "stride = " << m.stride << "\n";
  out << "split_ratio = " << m.ratio_train << ":" << m.ratio_test << "\n";
  out << "split_unit = " << m.split_unit << "\n";
  out << "stratify = " << (m.stratify ? "true" : "false") << "\n";
  out << "bins = " << m.bins << "\n";
}

}  // namespace teapcr
