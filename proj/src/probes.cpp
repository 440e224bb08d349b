#include "stylolab/probes.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "stylolab/error.hpp"
#include "stylolab/kernels.hpp"
#include "stylolab/rng.hpp"
#include "stylolab/wordlists.hpp"

namespace stylolab::probes {
namespace {

bool is_mark(char c) {
  for (char m : corpus::kPunctMarks) {
    if (c == m) return true;
  }
  return false;
}

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string folded(const std::string& w) {
  std::string out = w;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Maximal alphabetic runs, in order.
std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < text.size()) {
    if (!is_alpha(text[i])) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && is_alpha(text[j])) ++j;
    words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

struct TokenCounts {
  int64_t total = 0;
  int64_t punct = 0;
};

/// Punctuation marks count one token each; any other non-space chunk (words
/// with trailing brackets, citations like "[12]") counts one. Mirrors the
/// generator, which emits marks and citations as standalone tokens.
TokenCounts count_tokens(const std::string& text) {
  TokenCounts tc;
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (is_mark(c)) {
      ++tc.total;
      ++tc.punct;
      ++i;
      continue;
    }
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i])) &&
           !is_mark(text[i])) {
      ++i;
    }
    ++tc.total;
  }
  return tc;
}

template <size_t N>
double list_rate(const std::vector<std::string>& words, const std::array<const char*, N>& list) {
  std::unordered_set<std::string> set(list.begin(), list.end());
  int64_t hits = 0;
  for (const std::string& w : words) hits += set.count(folded(w)) > 0 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(words.size());
}

const std::vector<std::string>& require_words(const std::vector<std::string>& words) {
  if (words.empty()) throw Error(ErrorCode::EmptySequence, "passage has no words");
  return words;
}

int64_t citation_count(const std::string& text) {
  static const std::regex pattern(R"(\[[0-9]+\]|\([A-Z][A-Za-z]+,?[ \t][0-9]{4}\))");
  auto begin = std::sregex_iterator(text.begin(), text.end(), pattern);
  return static_cast<int64_t>(std::distance(begin, std::sregex_iterator()));
}

double sentence_length_mean(const std::string& text) {
  int64_t sentences = 0;
  int64_t total_words = 0;
  size_t start = 0;
  // period-delimited segments; segments without words are not sentences
  for (size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '.') {
      const size_t n = split_words(text.substr(start, i - start)).size();
      if (n > 0) {
        ++sentences;
        total_words += static_cast<int64_t>(n);
      }
      start = i + 1;
    }
  }
  if (sentences == 0) throw Error(ErrorCode::EmptySequence, "passage has no words");
  return static_cast<double>(total_words) / static_cast<double>(sentences);
}

/// Pad-masked mean of one layer's rows.
Tensor pool_rows(const Tensor& H, const std::vector<int32_t>& ids) {
  const int64_t d = H.cols();
  Tensor out({d});
  int64_t kept = 0;
  for (int64_t r = 0; r < H.rows(); ++r) {
    if (ids[static_cast<size_t>(r)] == corpus::kPadId) continue;
    kernels::axpy(1.0, H.data() + r * d, out.data(), d);
    ++kept;
  }
  if (kept == 0) throw Error(ErrorCode::EmptyAfterMask, "passage is all padding");
  for (int64_t c = 0; c < d; ++c) out.at(c) /= static_cast<double>(kept);
  return out;
}

/// Cholesky factor of A (d x d, symmetric) in place; lower triangle holds L.
void cholesky(Tensor& A) {
  const int64_t d = A.rows();
  double scale = 0.0;
  for (int64_t i = 0; i < d; ++i) scale = std::max(scale, std::abs(A.at(i, i)));
  for (int64_t j = 0; j < d; ++j) {
    for (int64_t i = j; i < d; ++i) {
      double s = A.at(i, j);
      for (int64_t k = 0; k < j; ++k) s -= A.at(i, k) * A.at(j, k);
      if (i == j) {
        if (s <= scale * 1e-12) {
          throw Error(ErrorCode::SingularSystem,
                      "ridge system is singular; use lambda > 0");
        }
        A.at(j, j) = std::sqrt(s);
      } else {
        A.at(i, j) = s / A.at(j, j);
      }
    }
  }
}

/// Solves L L^T x = rhs given the factor from cholesky().
void cholesky_solve(const Tensor& L, Tensor& x) {
  const int64_t d = L.rows();
  for (int64_t i = 0; i < d; ++i) {
    double s = x.at(i);
    for (int64_t k = 0; k < i; ++k) s -= L.at(i, k) * x.at(k);
    x.at(i) = s / L.at(i, i);
  }
  for (int64_t i = d - 1; i >= 0; --i) {
    double s = x.at(i);
    for (int64_t k = i + 1; k < d; ++k) s -= L.at(k, i) * x.at(k);
    x.at(i) = s / L.at(i, i);
  }
}

}  // namespace

std::string feature_name(const StyleFeature& f) {
  switch (f.kind) {
    case FeatureKind::WordLengthMean: return "wl_mean";
    case FeatureKind::CapitalizationRate: return "cap_rate";
    case FeatureKind::TypeTokenRatio: return "ttr";
    case FeatureKind::PunctuationDensity: return "punct_density";
    case FeatureKind::FunctionWordFreq: return "fw_" + f.arg;
    case FeatureKind::SentenceLengthMean: return "sent_len_mean";
    case FeatureKind::HedgingRate: return "hedge_rate";
    case FeatureKind::CitationDensity: return "cite_density";
    case FeatureKind::ConnectiveRate: return "connective_rate";
  }
  return "?";
}

std::vector<StyleFeature> default_features() {
  return {
      {FeatureKind::WordLengthMean, ""},     {FeatureKind::CapitalizationRate, ""},
      {FeatureKind::TypeTokenRatio, ""},     {FeatureKind::PunctuationDensity, ""},
      {FeatureKind::FunctionWordFreq, "the"}, {FeatureKind::FunctionWordFreq, "we"},
      {FeatureKind::SentenceLengthMean, ""}, {FeatureKind::HedgingRate, ""},
      {FeatureKind::CitationDensity, ""},    {FeatureKind::ConnectiveRate, ""},
  };
}

double extract_feature(const std::string& text, const StyleFeature& f) {
  if (text.find_first_not_of(" \t\n\r") == std::string::npos) {
    throw Error(ErrorCode::EmptySequence, "empty passage");
  }
  switch (f.kind) {
    case FeatureKind::WordLengthMean: {
      const auto words = require_words(split_words(text));
      int64_t chars = 0;
      for (const std::string& w : words) chars += static_cast<int64_t>(w.size());
      return static_cast<double>(chars) / static_cast<double>(words.size());
    }
    case FeatureKind::CapitalizationRate: {
      const auto words = require_words(split_words(text));
      int64_t caps = 0;
      for (const std::string& w : words) {
        caps += std::isupper(static_cast<unsigned char>(w[0])) ? 1 : 0;
      }
      return static_cast<double>(caps) / static_cast<double>(words.size());
    }
    case FeatureKind::TypeTokenRatio: {
      const auto words = require_words(split_words(text));
      std::set<std::string> types;
      for (const std::string& w : words) types.insert(folded(w));
      return static_cast<double>(types.size()) / static_cast<double>(words.size());
    }
    case FeatureKind::PunctuationDensity: {
      const TokenCounts tc = count_tokens(text);
      return static_cast<double>(tc.punct) / static_cast<double>(tc.total);
    }
    case FeatureKind::FunctionWordFreq: {
      const auto words = require_words(split_words(text));
      const std::string want = folded(f.arg);
      int64_t hits = 0;
      for (const std::string& w : words) hits += folded(w) == want ? 1 : 0;
      return static_cast<double>(hits) / static_cast<double>(words.size());
    }
    case FeatureKind::SentenceLengthMean:
      return sentence_length_mean(text);
    case FeatureKind::HedgingRate:
      return list_rate(require_words(split_words(text)), words::kHedgeWords);
    case FeatureKind::CitationDensity: {
      const TokenCounts tc = count_tokens(text);
      return static_cast<double>(citation_count(text)) / static_cast<double>(tc.total);
    }
    case FeatureKind::ConnectiveRate:
      return list_rate(require_words(split_words(text)), words::kConnectiveWords);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown feature kind");
}

ProbeFit fit_probe(const Tensor& X, const Tensor& y, double lambda) {
  if (X.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "fit_probe: X must be 2-D");
  const int64_t n = X.rows();
  const int64_t d = X.cols();
  if (y.size() != n) {
    throw Error(ErrorCode::LengthMismatch,
                "fit_probe: " + std::to_string(n) + " rows vs " + std::to_string(y.size()) +
                    " targets");
  }
  if (n == 0) throw Error(ErrorCode::TooFewSamples, "fit_probe: no samples");
  if (lambda < 0.0) throw Error(ErrorCode::InvalidConfig, "fit_probe: lambda must be >= 0");

  Tensor xmean({d});
  double ymean = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    kernels::axpy(1.0, X.data() + r * d, xmean.data(), d);
    ymean += y.at(r);
  }
  for (int64_t c = 0; c < d; ++c) xmean.at(c) /= static_cast<double>(n);
  ymean /= static_cast<double>(n);

  Tensor Xc = X;
  Tensor yc({n});
  for (int64_t r = 0; r < n; ++r) {
    kernels::axpy(-1.0, xmean.data(), Xc.data() + r * d, d);
    yc.at(r) = y.at(r) - ymean;
  }

  Tensor A = Tensor::zeros(d, d);
  kernels::mm_tn(Xc.data(), n, d, Xc.data(), d, A.data());
  for (int64_t c = 0; c < d; ++c) A.at(c, c) += lambda;

  ProbeFit fit;
  fit.w = Tensor({d});
  kernels::mm_tn(Xc.data(), n, d, yc.data(), 1, fit.w.data());
  cholesky(A);
  cholesky_solve(A, fit.w);
  fit.b = ymean - kernels::dot(xmean.data(), fit.w.data(), d);
  return fit;
}

Tensor probe_predict(const ProbeFit& fit, const Tensor& X) {
  if (X.ndim() != 2 || X.cols() != fit.w.size()) {
    throw Error(ErrorCode::ShapeMismatch, "probe_predict: X does not match the fit");
  }
  Tensor out({X.rows()});
  for (int64_t r = 0; r < X.rows(); ++r) {
    out.at(r) = kernels::dot(X.data() + r * X.cols(), fit.w.data(), X.cols()) + fit.b;
  }
  return out;
}

double r_squared(const Tensor& predictions, const Tensor& targets) {
  const int64_t n = targets.size();
  if (predictions.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "r_squared: prediction/target size mismatch");
  }
  if (n < 2) throw Error(ErrorCode::TooFewSamples, "r_squared: needs at least 2 targets");
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += targets.at(i);
  mean /= static_cast<double>(n);
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double t = targets.at(i) - mean;
    const double r = targets.at(i) - predictions.at(i);
    ss_tot += t * t;
    ss_res += r * r;
  }
  if (ss_tot == 0.0) throw Error(ErrorCode::ZeroVariance, "r_squared: targets have zero variance");
  return 1.0 - ss_res / ss_tot;
}

std::pair<std::vector<corpus::Passage>, std::vector<corpus::Passage>> split_passages(
    const corpus::Corpus& c, int n_train, int n_test, uint64_t seed) {
  if (n_train < 1 || n_test < 1) {
    throw Error(ErrorCode::InvalidConfig, "split_passages: both sides need >= 1 passage");
  }
  const size_t want = static_cast<size_t>(n_train) + static_cast<size_t>(n_test);
  if (want > c.passages.size()) {
    throw Error(ErrorCode::TooFewSamples,
                "split_passages: corpus has " + std::to_string(c.passages.size()) +
                    " passages, split wants " + std::to_string(want));
  }
  std::vector<size_t> order(c.passages.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::pair<std::vector<corpus::Passage>, std::vector<corpus::Passage>> out;
  for (int i = 0; i < n_train; ++i) out.first.push_back(c.passages[order[static_cast<size_t>(i)]]);
  for (int i = 0; i < n_test; ++i) {
    out.second.push_back(c.passages[order[static_cast<size_t>(n_train + i)]]);
  }
  return out;
}

namespace {

/// Per-layer design matrices plus per-feature targets for one passage list.
struct PooledSplit {
  std::vector<Tensor> X;               // one n x d matrix per layer
  std::vector<std::vector<double>> y;  // feature x n
};

PooledSplit pool_split(const encoder::Encoder& enc, const std::vector<corpus::Passage>& passages,
                       const std::vector<StyleFeature>& features) {
  const int64_t n = static_cast<int64_t>(passages.size());
  const int64_t layers = enc.config().n_layers + 1;
  const int64_t d = enc.config().d_model;
  PooledSplit out;
  for (int64_t l = 0; l < layers; ++l) out.X.emplace_back(Tensor::zeros(n, d));
  out.y.assign(features.size(), std::vector<double>(static_cast<size_t>(n)));
  for (int64_t i = 0; i < n; ++i) {
    const corpus::Passage& p = passages[static_cast<size_t>(i)];
    const encoder::HiddenStack stack = enc.forward_capture(p.tokens);
    for (int64_t l = 0; l < layers; ++l) {
      const Tensor pooled = pool_rows(stack.layers[static_cast<size_t>(l)], p.tokens);
      std::copy(pooled.data(), pooled.data() + d, out.X[static_cast<size_t>(l)].data() + i * d);
    }
    for (size_t f = 0; f < features.size(); ++f) {
      out.y[f][static_cast<size_t>(i)] = extract_feature(p.text, features[f]);
    }
  }
  return out;
}

}  // namespace

ProbeMatrix probe_sweep(const encoder::Encoder& enc, const std::vector<corpus::Passage>& train,
                        const std::vector<corpus::Passage>& test,
                        const std::vector<StyleFeature>& features, double lambda) {
  if (train.empty() || test.empty()) {
    throw Error(ErrorCode::TooFewSamples, "probe_sweep: empty split");
  }
  if (features.empty()) throw Error(ErrorCode::InvalidConfig, "probe_sweep: no features");
  std::unordered_set<int> train_ids;
  for (const corpus::Passage& p : train) train_ids.insert(p.id);
  for (const corpus::Passage& p : test) {
    if (train_ids.count(p.id) > 0) {
      throw Error(ErrorCode::InvalidConfig,
                  "probe_sweep: passage " + std::to_string(p.id) + " is in both splits");
    }
  }

  const PooledSplit tr = pool_split(enc, train, features);
  const PooledSplit te = pool_split(enc, test, features);

  ProbeMatrix m;
  m.n_train = static_cast<int>(train.size());
  m.n_test = static_cast<int>(test.size());
  m.ridge_lambda = lambda;
  for (const StyleFeature& f : features) m.features.push_back(feature_name(f));
  m.r2.assign(features.size(), std::vector<double>(tr.X.size()));
  for (size_t f = 0; f < features.size(); ++f) {
    const Tensor y_tr({static_cast<int64_t>(train.size())}, tr.y[f]);
    const Tensor y_te({static_cast<int64_t>(test.size())}, te.y[f]);
    for (size_t l = 0; l < tr.X.size(); ++l) {
      const ProbeFit fit = fit_probe(tr.X[l], y_tr, lambda);
      m.r2[f][l] = r_squared(probe_predict(fit, te.X[l]), y_te);
    }
  }
  return m;
}

ProbeCompareReport probe_compare(const std::vector<ProbeMatrix>& mats) {
  if (mats.size() < 2) {
    throw Error(ErrorCode::InvalidConfig, "probe_compare: needs at least two matrices");
  }
  const ProbeMatrix& first = mats.front();
  const size_t layers = first.r2.empty() ? 0 : first.r2.front().size();
  for (const ProbeMatrix& m : mats) {
    if (m.features != first.features) {
      throw Error(ErrorCode::ShapeMismatch, "probe_compare: feature axes differ");
    }
    for (const std::vector<double>& row : m.r2) {
      if (row.size() != layers) {
        throw Error(ErrorCode::ShapeMismatch, "probe_compare: layer axes differ");
      }
    }
  }

  ProbeCompareReport rep;
  rep.features = first.features;
  for (const ProbeMatrix& m : mats) rep.models.push_back(m.model);
  rep.max_abs_diff.assign(first.features.size(), std::vector<double>(layers, 0.0));
  for (size_t f = 0; f < first.features.size(); ++f) {
    for (size_t l = 0; l < layers; ++l) {
      for (size_t a = 0; a < mats.size(); ++a) {
        for (size_t b = a + 1; b < mats.size(); ++b) {
          rep.max_abs_diff[f][l] =
              std::max(rep.max_abs_diff[f][l], std::abs(mats[a].r2[f][l] - mats[b].r2[f][l]));
        }
      }
    }
  }
  for (const ProbeMatrix& m : mats) {
    std::vector<PeakEntry> row;
    for (size_t f = 0; f < first.features.size(); ++f) {
      PeakEntry best{m.r2[f][0], 0};
      for (size_t l = 1; l < layers; ++l) {
        if (m.r2[f][l] > best.r2) best = {m.r2[f][l], static_cast<int>(l)};
      }
      row.push_back(best);
    }
    rep.peaks.push_back(std::move(row));
  }
  return rep;
}

std::string probe_csv(const ProbeMatrix& m) {
  std::ostringstream out;
  out << "# stylolab probe matrix v1; model=" << m.model << " n_train=" << m.n_train
      << " n_test=" << m.n_test << " lambda=" << m.ridge_lambda << "\n";
  out << "feature,layer,r2\n";
  out << std::setprecision(17);
  for (size_t f = 0; f < m.features.size(); ++f) {
    for (size_t l = 0; l < m.r2[f].size(); ++l) {
      out << m.features[f] << "," << l << "," << m.r2[f][l] << "\n";
    }
  }
  return out.str();
}

void write_probe_csv(const ProbeMatrix& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  f << probe_csv(m);
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace stylolab::probes
