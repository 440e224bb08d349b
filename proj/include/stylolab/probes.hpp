#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stylolab/corpus.hpp"
#include "stylolab/encoder.hpp"
#include "stylolab/tensor.hpp"

namespace stylolab::probes {

enum class FeatureKind {
  WordLengthMean,
  CapitalizationRate,
  TypeTokenRatio,
  PunctuationDensity,
  FunctionWordFreq,
  SentenceLengthMean,
  HedgingRate,
  CitationDensity,
  ConnectiveRate,
};

/// One stylometric target. `arg` names the word for FunctionWordFreq and is
/// ignored otherwise.
struct StyleFeature {
  FeatureKind kind = FeatureKind::WordLengthMean;
  std::string arg;
};

/// Short stable name used in reports: wl_mean, cap_rate, ttr, punct_density,
/// fw_<word>, sent_len_mean, hedge_rate, cite_density, connective_rate.
std::string feature_name(const StyleFeature& f);

/// The nine categories with the function-word slot instantiated twice
/// (fw_the, fw_we), ten targets total.
std::vector<StyleFeature> default_features();

/// Deterministic scalar from raw passage text. Words are maximal alphabetic
/// runs; tokens are punctuation marks plus the remaining non-space chunks, so
/// the counts line up with the generator's token stream. Type-token and list
/// matches are case-folded (sentence-initial capitals still count); the
/// citation pattern is a bracketed numeral or a parenthesised name-year.
/// Throws EmptySequence on empty text, or when a word-denominated feature
/// finds no words.
double extract_feature(const std::string& text, const StyleFeature& f);

struct ProbeFit {
  Tensor w;       // d
  double b = 0.0;
};

/// Closed-form ridge: minimizes ||Xw + b - y||^2 + lambda ||w||^2 with the
/// bias unpenalized (solved on centered data, Cholesky). X is n x d, y has n
/// entries. A singular system (only possible at lambda = 0) throws
/// SingularSystem suggesting lambda > 0.
ProbeFit fit_probe(const Tensor& X, const Tensor& y, double lambda);

/// Xw + b for each row, returned as an n-vector.
Tensor probe_predict(const ProbeFit& fit, const Tensor& X);

/// 1 - SS_res/SS_tot. Needs >= 2 targets; zero target variance throws
/// ZeroVariance. Can go negative on held-out data.
double r_squared(const Tensor& predictions, const Tensor& targets);

struct ProbeMatrix {
  std::string model;                    // caller-set label for reports
  std::vector<std::string> features;    // row axis, feature_name() order
  std::vector<std::vector<double>> r2;  // feature x (n_layers + 1)
  int n_train = 0;
  int n_test = 0;
  double ridge_lambda = 1.0;
};

/// Shuffles the corpus passages with `seed` and deals disjoint train/test
/// hands. Throws TooFewSamples when the corpus cannot cover both.
std::pair<std::vector<corpus::Passage>, std::vector<corpus::Passage>> split_passages(
    const corpus::Corpus& c, int n_train, int n_test, uint64_t seed);

/// Fits one ridge probe per (feature, layer) on the train passages and
/// reports held-out R^2. Layer inputs are the pad-masked mean-pooled hidden
/// states of that layer; layer 0 is the embedding stream. Train and test ids
/// must be disjoint.
ProbeMatrix probe_sweep(const encoder::Encoder& enc,
                        const std::vector<corpus::Passage>& train,
                        const std::vector<corpus::Passage>& test,
                        const std::vector<StyleFeature>& features, double lambda = 1.0);

struct PeakEntry {
  double r2 = 0.0;
  int layer = 0;  // lowest layer on ties
};

struct ProbeCompareReport {
  std::vector<std::string> models;
  std::vector<std::string> features;
  std::vector<std::vector<double>> max_abs_diff;  // feature x layer, pairwise spread
  std::vector<std::vector<PeakEntry>> peaks;      // model x feature
};

/// Per-cell divergence across models plus the per-feature peak-R^2 table.
/// All matrices must share the feature and layer axes.
ProbeCompareReport probe_compare(const std::vector<ProbeMatrix>& mats);

/// CSV rows "feature,layer,r2" under a comment header carrying the model
/// label, split sizes, and lambda. Byte-identical across reruns. probe_csv
/// returns the text; write_probe_csv writes exactly that text.
std::string probe_csv(const ProbeMatrix& m);
void write_probe_csv(const ProbeMatrix& m, const std::string& path);

}  // namespace stylolab::probes
