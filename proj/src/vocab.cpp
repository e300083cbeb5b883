#include "teapcr/vocab.hpp"

#include <algorithm>
#include <set>

namespace teapcr {

FeatureVocab build_vocab(const DatasetTable& train, int bins_per_feature,
                         bool discretize_continuous) {
  if (bins_per_feature < 2) throw ConfigError("build_vocab: need at least 2 bins per feature");
  if (train.rows() == 0) throw DataError("build_vocab: empty training table");

  FeatureVocab vocab;
  vocab.discretize_continuous = discretize_continuous;
  const Index F = train.feature_count();
  Index next_token = 0;

  for (Index f = 0; f < F; ++f) {
    VocabFeature vf;
    vf.kind = train.features[static_cast<std::size_t>(f)].kind;
    if (vf.kind == ColumnKind::continuous) {
      if (discretize_continuous) {
        std::vector<double> sorted(static_cast<std::size_t>(train.rows()));
        for (Index r = 0; r < train.rows(); ++r)
          sorted[static_cast<std::size_t>(r)] = train.at(r, f);
        std::sort(sorted.begin(), sorted.end());
        const Index n = static_cast<Index>(sorted.size());
        for (int b = 1; b < bins_per_feature; ++b) {
          const double edge = sorted[static_cast<std::size_t>(
              static_cast<Index>(b) * n / bins_per_feature)];
          if (vf.edges.empty() || edge > vf.edges.back()) vf.edges.push_back(edge);
        }
        // drop a leading edge equal to the minimum; it would leave bin 0 empty
        if (!vf.edges.empty() && vf.edges.front() <= sorted.front()) {
          vf.edges.erase(vf.edges.begin());
        }
        vf.bins = static_cast<Index>(vf.edges.size()) + 1;
        if (vf.bins == 1)
          vocab.warnings.push_back("feature '" + train.features[static_cast<std::size_t>(f)].name +
                                   "' is constant; single degenerate bin");
        vf.base = next_token;
        next_token += vf.bins;
      }
      // without discretization a continuous feature has no tokens
    } else {
      const auto& dict = train.category_dicts[static_cast<std::size_t>(f)];
      vf.category_tokens.assign(dict.size(), -1);
      std::set<Index> observed;
      for (Index r = 0; r < train.rows(); ++r)
        observed.insert(static_cast<Index>(train.at(r, f)));
      for (Index code : observed) {
        if (code < 0 || code >= static_cast<Index>(dict.size()))
          throw IndexError("build_vocab: categorical code out of dictionary range");
        vf.category_tokens[static_cast<std::size_t>(code)] = next_token++;
      }
      vf.unknown_token = next_token++;  // reserved for categories unseen in training
    }
    vocab.features.push_back(std::move(vf));
  }
  vocab.vocab_size = next_token;
  return vocab;
}

Index FeatureVocab::token_for(Index feature, double value) const {
  if (feature < 0 || feature >= feature_count())
    throw IndexError("token_for: feature index out of range");
  const VocabFeature& vf = features[static_cast<std::size_t>(feature)];
  if (vf.kind == ColumnKind::continuous) {
    if (!discretize_continuous)
      throw UsageError("token_for: continuous features are not tokenized in this vocab");
    // number of edges <= value; exact edges go to the higher bin
    const auto it = std::upper_bound(vf.edges.begin(), vf.edges.end(), value);
    return vf.base + static_cast<Index>(it - vf.edges.begin());
  }
  const Index code = static_cast<Index>(value);
  if (code < 0 || code >= static_cast<Index>(vf.category_tokens.size()))
    throw IndexError("token_for: categorical code " + std::to_string(code) +
                     " outside the dictionary");
  const Index token = vf.category_tokens[static_cast<std::size_t>(code)];
  return token >= 0 ? token : vf.unknown_token;
}

std::vector<Index> FeatureVocab::tokenize(const double* row, Index arity) const {
  if (arity != feature_count())
    throw ShapeError("tokenize: sample has " + std::to_string(arity) + " values, vocab expects " +
                     std::to_string(feature_count()));
  std::vector<Index> tokens(static_cast<std::size_t>(arity));
  for (Index f = 0; f < arity; ++f) tokens[static_cast<std::size_t>(f)] = token_for(f, row[f]);
  return tokens;
}

}  // namespace teapcr
