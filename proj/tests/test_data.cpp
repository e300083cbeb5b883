#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "support/oracles.hpp"
#include "teapcr/data.hpp"
#include "teapcr/ops.hpp"
#include "teapcr/optim.hpp"

using namespace teapcr;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

DatasetTable labeled_rows(const std::vector<int>& labels, Index features = 2) {
  DatasetTable t;
  for (Index f = 0; f < features; ++f) {
    t.features.push_back({"f" + std::to_string(f), ColumnKind::continuous});
    t.category_dicts.emplace_back();
  }
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  for (int k = 0; k <= max_label; ++k) t.label_names.push_back("c" + std::to_string(k));
  Rng rng(1);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (Index f = 0; f < features; ++f) t.values.push_back(rng.uniform(-1, 1));
    t.labels.push_back(labels[r]);
    t.record_ids.push_back(0);
    t.orig_rows.push_back(static_cast<Index>(r));
  }
  return t;
}

}  // namespace

TEST_CASE("load_csv: typed parse, categoricals, labels") {
  const auto path = temp_file("teapcr_ok.csv");
  write_file(path,
             "temp,speed,label\n"
             "1.5,low,ok\n"
             "2.5,high,fault\n"
             "3.5,low,ok\n");
  CsvSchema schema;
  schema.label_column = "label";
  schema.categorical_columns = {"speed"};
  auto t = load_csv(path, schema);
  CHECK(t.rows() == 3);
  CHECK(t.feature_count() == 2);
  CHECK(t.features[0].kind == ColumnKind::continuous);
  CHECK(t.features[1].kind == ColumnKind::categorical);
  CHECK(t.at(0, 0) == 1.5);
  CHECK(t.at(1, 1) == 1.0);  // "high" is the second observed category
  CHECK(t.category_dicts[1] == std::vector<std::string>{"low", "high"});
  CHECK(t.label_names == std::vector<std::string>{"ok", "fault"});
  CHECK(t.labels == std::vector<int>{0, 1, 0});
}

TEST_CASE("load_csv: error paths carry coordinates") {
  CsvSchema schema;
  schema.label_column = "label";

  const auto empty = temp_file("teapcr_empty.csv");
  write_file(empty, "");
  CHECK_THROWS_AS(load_csv(empty, schema), DataError);

  const auto headeronly = temp_file("teapcr_headeronly.csv");
  write_file(headeronly, "a,label\n");
  CHECK_THROWS_AS(load_csv(headeronly, schema), DataError);

  const auto missing = temp_file("teapcr_missing.csv");
  write_file(missing, "a,b\n1,2\n");
  CHECK_THROWS_WITH_AS(load_csv(missing, schema), doctest::Contains("missing label column"),
                       DataError);

  const auto badcell = temp_file("teapcr_badcell.csv");
  write_file(badcell, "a,label\n1,x\nnope,y\n");
  CHECK_THROWS_WITH_AS(load_csv(badcell, schema), doctest::Contains("row 3"), DataError);

  CsvSchema fixed = schema;
  fixed.label_values = {"x"};
  const auto unknown = temp_file("teapcr_unknown.csv");
  write_file(unknown, "a,label\n1,x\n2,z\n");
  CHECK_THROWS_WITH_AS(load_csv(unknown, fixed), doctest::Contains("unknown label"), DataError);

  const auto one = temp_file("teapcr_one.csv");
  write_file(one, "a,label\n7,x\n");
  auto t = load_csv(one, schema);
  CHECK(t.rows() == 1);
  CHECK(t.at(0, 0) == 7.0);
}

TEST_CASE("write_csv round-trips through load_csv") {
  SynthTabularConfig cfg;
  cfg.rows = 50;
  auto t = synth_tabular(cfg);
  const auto path = temp_file("teapcr_roundtrip.csv");
  write_csv(t, path);
  CsvSchema schema;
  schema.label_column = "label";
  schema.categorical_columns = {"speed"};
  schema.label_values = t.label_names;  // pin class order
  auto t2 = load_csv(path, schema);
  REQUIRE(t2.rows() == t.rows());
  REQUIRE(t2.feature_count() == t.feature_count());
  const Index cat = t.feature_count() - 1;
  for (Index r = 0; r < t.rows(); ++r) {
    CHECK(t2.labels[r] == t.labels[r]);
    for (Index f = 0; f < cat; ++f) CHECK(t2.at(r, f) == t.at(r, f));
    // categorical codes are dict-order dependent; compare by name
    CHECK(t2.category_dicts[cat][static_cast<std::size_t>(t2.at(r, cat))] ==
          t.category_dicts[cat][static_cast<std::size_t>(t.at(r, cat))]);
  }
}

TEST_CASE("split: paper's exact EngineFaultDB counts at 8:2") {
  std::vector<int> labels;
  for (int i = 0; i < 16000; ++i) labels.push_back(0);
  for (int i = 0; i < 10998; ++i) labels.push_back(1);
  for (int i = 0; i < 15000; ++i) labels.push_back(2);
  for (int i = 0; i < 14001; ++i) labels.push_back(3);
  auto table = labeled_rows(labels, 1);
  SplitConfig cfg;
  cfg.train_parts = 8;
  cfg.test_parts = 2;
  cfg.stratify = true;
  cfg.seed = 42;
  auto [train, test] = split(table, cfg);
  CHECK(train.rows() == 44799);
  CHECK(test.rows() == 11200);
}

TEST_CASE("split: 1:0 leaves test empty; 7:3 on 10 rows per class is exact") {
  auto table = labeled_rows(std::vector<int>(20, 0), 1);
  table.label_names = {"c0"};
  SplitConfig cfg;
  cfg.train_parts = 1;
  cfg.test_parts = 0;
  auto [train, test] = split(table, cfg);
  CHECK(train.rows() == 20);
  CHECK(test.rows() == 0);

  std::vector<int> labels;
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 10; ++i) labels.push_back(k);
  auto t3 = labeled_rows(labels, 1);
  SplitConfig cfg73;
  cfg73.train_parts = 7;
  cfg73.test_parts = 3;
  auto [tr, te] = split(t3, cfg73);
  CHECK(tr.rows() == 21);
  CHECK(te.rows() == 9);
  for (int k = 0; k < 3; ++k) {
    Index n = 0;
    for (Index r = 0; r < tr.rows(); ++r) n += tr.labels[r] == k;
    CHECK(n == 7);
  }
}

TEST_CASE("split: disjoint provenance, deterministic, class-absent error") {
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(i % 4);
  auto table = labeled_rows(labels);
  SplitConfig cfg;
  cfg.seed = 9;
  auto [a1, b1] = split(table, cfg);
  auto [a2, b2] = split(table, cfg);
  CHECK(a1.orig_rows == a2.orig_rows);
  CHECK(b1.orig_rows == b2.orig_rows);

  std::set<Index> train_set(a1.orig_rows.begin(), a1.orig_rows.end());
  for (Index r : b1.orig_rows) CHECK(train_set.count(r) == 0);
  CHECK(a1.rows() + b1.rows() == table.rows());

  cfg.seed = 10;
  auto [a3, b3] = split(table, cfg);
  CHECK(a3.orig_rows != a1.orig_rows);  // seed matters

  // a single-unit class cannot appear on both sides
  auto tiny = labeled_rows({0, 0, 0, 0, 1});
  SplitConfig strat;
  strat.stratify = true;
  CHECK_THROWS_AS(split(tiny, strat), DataError);
}

TEST_CASE("split: per-class cap applies before the ratio") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 2);
  auto table = labeled_rows(labels);
  SplitConfig cfg;
  cfg.cap_per_class = 10;
  auto [train, test] = split(table, cfg);
  CHECK(train.rows() + test.rows() == 20);
  CHECK(train.rows() == 16);
  CHECK(test.rows() == 4);
}

TEST_CASE("make_windows: W=1 yields one window per row") {
  auto table = labeled_rows({0, 1, 0, 1, 1}, 3);
  auto batch = make_windows(table, 1, 1);
  CHECK(batch.count == 5);
  CHECK(batch.window == 1);
  CHECK(batch.features == 3);
  for (Index b = 0; b < 5; ++b) {
    CHECK(batch.labels[b] == table.labels[b]);
    for (Index f = 0; f < 3; ++f) CHECK(batch.at(b, 0, f) == table.at(b, f));
  }
}

TEST_CASE("make_windows: segment arithmetic and dropped rows") {
  auto table = labeled_rows(std::vector<int>(10, 0), 2);
  table.label_names = {"c0"};
  auto batch = make_windows(table, 4, 4);
  CHECK(batch.count == 2);
  CHECK(batch.dropped_rows == 2);
  CHECK(batch.skipped_segments == 0);

  // a short segment is skipped and counted
  auto table2 = labeled_rows({0, 0, 0, 1, 1, 1, 1, 1}, 2);
  auto batch2 = make_windows(table2, 4, 4);
  CHECK(batch2.count == 1);
  CHECK(batch2.skipped_segments == 1);
  CHECK(batch2.dropped_rows == 3 + 1);
}

TEST_CASE("make_windows: total count matches brute-force enumeration; no straddling") {
  Rng rng(33);
  // random segment structure: labels and record ids change at random points
  DatasetTable t;
  t.features.push_back({"f0", ColumnKind::continuous});
  t.category_dicts.emplace_back();
  t.label_names = {"c0", "c1", "c2"};
  int label = 0;
  Index record = 0;
  for (Index r = 0; r < 500; ++r) {
    if (rng.uniform(0, 1) < 0.05) label = static_cast<int>(rng.uniform_int(0, 2));
    if (rng.uniform(0, 1) < 0.02) ++record;
    t.values.push_back(rng.normal(0, 1));
    t.labels.push_back(label);
    t.record_ids.push_back(record);
    t.orig_rows.push_back(r);
  }
  for (Index w : {3, 7}) {
    for (Index stride : {1, 2, 7}) {
      auto batch = make_windows(t, w, stride);
      std::int64_t expect = 0;
      for (const auto& seg : segments_of(t)) expect += oracles::window_count(seg.length(), w, stride);
      CHECK(batch.count == expect);
      // provenance audit: every window lies inside one (record, class) segment
      for (Index b = 0; b < batch.count; ++b) {
        const auto [begin, end] = batch.row_ranges[b];
        CHECK(end - begin == w);
        for (Index r = begin; r < end; ++r) {
          CHECK(t.labels[r] == batch.labels[b]);
          CHECK(t.record_ids[r] == t.record_ids[begin]);
        }
      }
    }
  }
}

TEST_CASE("normalizer: z-scores train windows, constant feature flagged") {
  Rng rng(55);
  DatasetTable t;
  t.features = {{"a", ColumnKind::continuous},
                {"b", ColumnKind::continuous},
                {"c", ColumnKind::categorical}};
  t.category_dicts = {{}, {}, {"x", "y"}};
  t.label_names = {"c0"};
  for (Index r = 0; r < 400; ++r) {
    t.values.push_back(rng.normal(5, 3));
    t.values.push_back(7.0);  // constant
    t.values.push_back(static_cast<double>(r % 2));
    t.labels.push_back(0);
    t.record_ids.push_back(0);
    t.orig_rows.push_back(r);
  }
  auto batch = make_windows(t, 1, 1);
  auto norm = Normalizer::fit(batch);
  CHECK(norm.passthrough[1]);
  CHECK_FALSE(norm.passthrough[0]);
  auto copy = batch;
  norm.apply(copy);
  // recompute statistics: mean 0 +- 1e-9, std 1 +- 1e-9 for the live feature
  double mean = 0, var = 0;
  for (Index b = 0; b < copy.count; ++b) mean += copy.at(b, 0, 0);
  mean /= static_cast<double>(copy.count);
  for (Index b = 0; b < copy.count; ++b) {
    const double d = copy.at(b, 0, 0) - mean;
    var += d * d;
  }
  var /= static_cast<double>(copy.count);
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
  // constant feature comes out centered to zero
  for (Index b = 0; b < copy.count; ++b) CHECK(copy.at(b, 0, 1) == 0.0);
  // categoricals untouched
  for (Index b = 0; b < copy.count; ++b) CHECK(copy.at(b, 0, 2) == batch.at(b, 0, 2));

  // statistics depend only on the training split
  auto perturbed = batch;
  for (auto& v : perturbed.values) v += 100.0;
  auto norm2 = Normalizer::fit(batch);
  CHECK(norm2.mean == norm.mean);
  CHECK(norm2.stddev == norm.stddev);

  // already-standardized data: apply is ~identity
  auto std_batch = copy;
  auto norm3 = Normalizer::fit(copy);
  norm3.apply(std_batch);
  for (Index b = 0; b < 50; ++b)
    CHECK(std_batch.at(b, 0, 0) == doctest::Approx(copy.at(b, 0, 0)).epsilon(1e-9));
}

TEST_CASE("synth_temporal: determinism and matched-filter oracle at zero noise") {
  SynthTemporalConfig cfg;
  cfg.seed = 123;
  cfg.records = 60;
  cfg.record_len = 64;
  cfg.noise = 0.0;
  auto a = synth_temporal(cfg);
  auto b = synth_temporal(cfg);
  CHECK(a.values == b.values);  // byte-identical
  CHECK(a.labels == b.labels);

  // matched filter: project each record on the class frequencies, argmax energy
  const double two_pi = 2.0 * std::numbers::pi;
  Index correct = 0;
  for (const auto& seg : segments_of(a)) {
    const Index L = seg.length();
    double best_energy = -1;
    int best_k = -1;
    for (int k = 0; k < cfg.classes; ++k) {
      const double cycles = static_cast<double>(cfg.cycles_base + k);
      double energy = 0;
      for (Index f = 0; f < cfg.features; ++f) {
        double cs = 0, sn = 0;
        for (Index t = 0; t < L; ++t) {
          const double angle = two_pi * cycles * static_cast<double>(t) / static_cast<double>(L);
          const double v = a.at(seg.begin + t, f);
          sn += v * std::sin(angle);
          cs += v * std::cos(angle);
        }
        energy += sn * sn + cs * cs;
      }
      if (energy > best_energy) {
        best_energy = energy;
        best_k = k;
      }
    }
    correct += best_k == seg.label;
  }
  CHECK(correct == static_cast<Index>(segments_of(a).size()));
}

TEST_CASE("synth_temporal: single-step marginals carry (almost) no class signal") {
  SynthTemporalConfig cfg;
  cfg.seed = 321;
  cfg.records = 120;
  cfg.record_len = 64;
  cfg.noise = 0.3;
  auto table = synth_temporal(cfg);

  // degenerate baseline: multinomial logistic regression on single steps
  const Index F = table.feature_count();
  const int K = cfg.classes;
  Rng rng(7);
  auto w = Tensor<double>::zeros({F, static_cast<Index>(K)}, true);
  auto bias = Tensor<double>::zeros({static_cast<Index>(K)}, true);
  Adam<double> opt({w, bias}, {.lr = 0.05});
  const Index n_train = table.rows() / 2;
  std::vector<Index> order(static_cast<std::size_t>(n_train));
  for (Index i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
  const Index bs = 256;
  for (int epoch = 0; epoch < 20; ++epoch) {
    for (Index start = 0; start + bs <= n_train; start += bs) {
      auto x = Tensor<double>::zeros({bs, F});
      std::vector<Index> y(static_cast<std::size_t>(bs));
      for (Index i = 0; i < bs; ++i) {
        const Index r = order[static_cast<std::size_t>(start + i)];
        for (Index f = 0; f < F; ++f) x.value()(i * F + f) = table.at(r, f);
        y[static_cast<std::size_t>(i)] = table.labels[r];
      }
      opt.zero_grad();
      Tape<double> tape;
      auto loss = cross_entropy(add_broadcast(matmul(x, w), bias), y);
      tape.backward(loss);
      opt.step();
    }
  }
  // evaluate on held-out rows
  Index correct = 0, total = 0;
  for (Index r = n_train; r < table.rows(); ++r) {
    auto x = Tensor<double>::zeros({1, F});
    for (Index f = 0; f < F; ++f) x.value()(f) = table.at(r, f);
    auto logits = add_broadcast(matmul(x, w), bias);
    correct += argmax_rows(logits)[0] == table.labels[r];
    ++total;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(total);
  CHECK(acc <= 1.0 / K + 0.1);
}

TEST_CASE("synth_tabular: rule oracle, balance, degenerate guard") {
  SynthTabularConfig cfg;
  cfg.seed = 99;
  cfg.rows = 10000;
  cfg.classes = 4;
  auto t = synth_tabular(cfg);
  CHECK(t.rows() == 10000);
  CHECK(t.features.back().kind == ColumnKind::categorical);
  CHECK(t.category_dicts.back().size() == 3);

  // re-evaluate the generating rule on every emitted row
  for (Index r = 0; r < t.rows(); ++r) {
    const int expect = synth_tabular_label(t.at(r, 0), t.at(r, 1),
                                           static_cast<Index>(t.at(r, t.feature_count() - 1)),
                                           cfg.classes, cfg.spiral);
    REQUIRE(t.labels[r] == expect);
  }

  // class balance within 5% of uniform
  std::vector<Index> counts(static_cast<std::size_t>(cfg.classes), 0);
  for (int l : t.labels) ++counts[static_cast<std::size_t>(l)];
  for (Index c : counts) {
    const double share = static_cast<double>(c) / static_cast<double>(t.rows());
    CHECK(std::abs(share - 1.0 / cfg.classes) < 0.05 / cfg.classes);
  }

  SynthTabularConfig bad = cfg;
  bad.classes = 1;
  CHECK_THROWS_AS(synth_tabular(bad), ConfigError);

  auto again = synth_tabular(cfg);
  CHECK(again.values == t.values);
}

TEST_CASE("manifest: round trip and validation") {
  SynthTabularConfig cfg;
  cfg.rows = 30;
  auto t = synth_tabular(cfg);
  const auto csv = temp_file("teapcr_manifest_data.csv");
  write_csv(t, csv);

  DatasetManifest m;
  m.csv_path = csv;
  m.schema.label_column = "label";
  m.schema.categorical_columns = {"speed"};
  m.window = 1;
  m.ratio_train = 7;
  m.ratio_test = 3;
  m.split_unit = "row";
  m.bins = 8;
  const auto mpath = temp_file("teapcr_test.manifest");
  write_manifest(m, mpath);
  auto m2 = load_manifest(mpath);
  CHECK(m2.schema.label_column == "label");
  CHECK(m2.schema.categorical_columns == std::vector<std::string>{"speed"});
  CHECK(m2.window == 1);
  CHECK(m2.ratio_train == 7);
  CHECK(m2.bins == 8);
  auto loaded = load_csv(m2.csv_path, m2.schema);
  CHECK(loaded.rows() == 30);

  const auto badpath = temp_file("teapcr_bad.manifest");
  write_file(badpath, "path = x.csv\nlabel_column = y\nnonsense_key = 1\n");
  CHECK_THROWS_AS(load_manifest(badpath), ConfigError);
  write_file(badpath, "label_column = y\n");
  CHECK_THROWS_AS(load_manifest(badpath), ConfigError);
}
