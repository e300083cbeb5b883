#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teapcr/data.hpp"
#include "teapcr/tensor.hpp"

namespace teapcr {

/// Token assignment for one feature. Continuous features own a contiguous
/// token range [base, base+bins); categorical features map observed category
/// codes to tokens plus one reserved unknown token for categories never seen
/// in the training split.
struct VocabFeature {
  ColumnKind kind = ColumnKind::continuous;
  // continuous
  std::vector<double> edges;  // interior bin edges, strictly increasing
  Index base = 0;
  Index bins = 1;
  // categorical
  std::vector<Index> category_tokens;  // full-dict code -> token, -1 if unseen in train
  Index unknown_token = -1;
};

struct FeatureVocab {
  std::vector<VocabFeature> features;
  Index vocab_size = 0;
  bool discretize_continuous = true;
  std::vector<std::string> warnings;  // e.g. constant features with degenerate bins

  Index feature_count() const { return static_cast<Index>(features.size()); }

  /// Bin / category lookup for one raw value. Continuous values at an exact
  /// edge go to the higher bin (half-open intervals, final bin closed);
  /// values beyond the edges clamp to the end bins.
  Index token_for(Index feature, double value) const;

  /// Tokens for one sample of F raw values (categoricals as dict codes).
  std::vector<Index> tokenize(const double* row, Index arity) const;
  std::vector<Index> tokenize(const std::vector<double>& row) const {
    return tokenize(row.data(), static_cast<Index>(row.size()));
  }
};

/// Equal-frequency (quantile) bin edges per continuous feature, one token per
/// observed category per categorical feature. Must be built from the
/// training split only. With discretize_continuous = false (the TAPCR "ID
/// encoding only" rule) continuous features receive no tokens at all.
FeatureVocab build_vocab(const DatasetTable& train, int bins_per_feature,
                         bool discretize_continuous = true);

}  // namespace teapcr
