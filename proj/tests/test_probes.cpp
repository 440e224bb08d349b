#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "stylolab/corpus.hpp"
#include "stylolab/encoder.hpp"
#include "stylolab/error.hpp"
#include "stylolab/probes.hpp"
#include "stylolab/rng.hpp"

using namespace stylolab;
using namespace stylolab::probes;

namespace {

double feat(const std::string& text, FeatureKind kind, const std::string& arg = "") {
  return extract_feature(text, {kind, arg});
}

encoder::EncoderConfig tiny_config(int layers, uint64_t seed) {
  encoder::EncoderConfig c;
  c.n_layers = layers;
  c.d_model = 8;
  c.heads = 2;
  c.mlp_mult = 2;
  c.max_len = 16;
  c.vocab = 12;
  c.seed = seed;
  return c;
}

corpus::Corpus tiny_corpus() {
  corpus::CorpusConfig cfg;
  cfg.n_authors = 6;
  cfg.n_sets = 2;
  cfg.n_domains = 1;
  cfg.passages_per_set = 6;
  cfg.target_len = 18;
  cfg.len_slack = 6;
  cfg.require_tiers = false;
  cfg.seed = 77;
  return corpus::generate_corpus(cfg);
}

/// Pad-ignoring mean over rows, the probe input convention.
Tensor pooled_layer0(const encoder::Encoder& enc, const std::vector<int32_t>& ids) {
  const encoder::HiddenStack stack = enc.forward_capture(ids);
  const Tensor& H = stack.layers[0];
  Tensor out({H.cols()});
  for (int64_t c = 0; c < H.cols(); ++c) {
    double s = 0.0;
    for (int64_t r = 0; r < H.rows(); ++r) s += H.at(r, c);
    out.at(c) = s / static_cast<double>(H.rows());
  }
  return out;
}

std::vector<long double> solve_ld(std::vector<std::vector<long double>> A,
                                  std::vector<long double> b) {
  const size_t d = b.size();
  for (size_t col = 0; col < d; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < d; ++r) {
      if (fabsl(A[r][col]) > fabsl(A[piv][col])) piv = r;
    }
    std::swap(A[col], A[piv]);
    std::swap(b[col], b[piv]);
    for (size_t r = col + 1; r < d; ++r) {
      const long double f = A[r][col] / A[col][col];
      for (size_t c = col; c < d; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<long double> x(d);
  for (size_t i = d; i-- > 0;) {
    long double s = b[i];
    for (size_t c = i + 1; c < d; ++c) s -= A[i][c] * x[c];
    x[i] = s / A[i][i];
  }
  return x;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("word-level extractors match hand counts") {
  CHECK(feat("The cat sat.", FeatureKind::WordLengthMean) == 3.0);
  CHECK(feat("The cat sat.", FeatureKind::CapitalizationRate) == doctest::Approx(1.0 / 3.0));
  CHECK(feat("a a a b", FeatureKind::TypeTokenRatio) == 0.5);
  // type counting folds case, capitalization is measured separately
  CHECK(feat("The the cat", FeatureKind::TypeTokenRatio) == doctest::Approx(2.0 / 3.0));
  CHECK(feat("ab cdef", FeatureKind::WordLengthMean) == 3.0);
  // words are maximal alphabetic runs: "[12]" contributes none
  CHECK(feat("ab [12] cdef", FeatureKind::WordLengthMean) == 3.0);
}

TEST_CASE("punctuation density counts marks as standalone tokens") {
  CHECK(feat("a, b.", FeatureKind::PunctuationDensity) == 0.5);
  CHECK(feat("Stone walls. Iron gates!", FeatureKind::PunctuationDensity) ==
        doctest::Approx(2.0 / 6.0));
  CHECK(feat("no marks here", FeatureKind::PunctuationDensity) == 0.0);
  CHECK(feat(".,;", FeatureKind::PunctuationDensity) == 1.0);

  // a 130-token stream drawn at rate 0.12 measures within the generator's
  // +-0.03 tolerance
  Rng rng(3);
  std::string text;
  for (int t = 0; t < 130; ++t) {
    if (!text.empty()) text += ' ';
    if (rng.uniform() < 0.12) {
      text += corpus::kPunctMarks[rng.index(corpus::kPunctMarks.size())];
    } else {
      const int len = 3 + static_cast<int>(rng.index(5));
      for (int k = 0; k < len; ++k) text += static_cast<char>('a' + rng.index(26));
    }
  }
  CHECK(std::abs(feat(text, FeatureKind::PunctuationDensity) - 0.12) <= 0.03);
}

TEST_CASE("function word frequency is case-folded and per word") {
  CHECK(feat("The cat the dog", FeatureKind::FunctionWordFreq, "the") == 0.5);
  CHECK(feat("The cat the dog", FeatureKind::FunctionWordFreq, "we") == 0.0);
  CHECK(feat("We think we know", FeatureKind::FunctionWordFreq, "we") == 0.5);
}

TEST_CASE("sentence length splits on periods and skips wordless segments") {
  CHECK(feat("The cat sat.", FeatureKind::SentenceLengthMean) == 3.0);
  CHECK(feat("a. b c.", FeatureKind::SentenceLengthMean) == 1.5);
  CHECK(feat("one two three", FeatureKind::SentenceLengthMean) == 3.0);
  CHECK(feat("a.. b.", FeatureKind::SentenceLengthMean) == 1.0);
}

TEST_CASE("hedge and connective rates use the shipped lists") {
  CHECK(feat("It may rain", FeatureKind::HedgingRate) == doctest::Approx(1.0 / 3.0));
  CHECK(feat("this suggests nothing", FeatureKind::HedgingRate) == doctest::Approx(1.0 / 3.0));
  CHECK(feat("However, we note", FeatureKind::ConnectiveRate) == doctest::Approx(1.0 / 3.0));
  CHECK(feat("granite quarry", FeatureKind::ConnectiveRate) == 0.0);
}

TEST_CASE("citation density matches bracketed numerals and name-year") {
  CHECK(feat("see [12] and [3]", FeatureKind::CitationDensity) == 0.5);
  // "(Smith" "," "2019)" are three tokens of six
  CHECK(feat("as shown (Smith, 2019) here", FeatureKind::CitationDensity) ==
        doctest::Approx(1.0 / 6.0));
  CHECK(feat("plain (smith, 2019) lowercase", FeatureKind::CitationDensity) == 0.0);
  CHECK(feat("not [ab] a citation", FeatureKind::CitationDensity) == 0.0);
}

TEST_CASE("extractors reject degenerate text") {
  CHECK_THROWS_WITH_AS(feat("", FeatureKind::WordLengthMean), doctest::Contains("empty"), Error);
  CHECK_THROWS_AS(feat("   ", FeatureKind::TypeTokenRatio), Error);
  // non-empty text but no alphabetic runs
  CHECK_THROWS_WITH_AS(feat("123 456", FeatureKind::WordLengthMean), doctest::Contains("words"),
                       Error);
  CHECK_THROWS_AS(feat("123.", FeatureKind::SentenceLengthMean), Error);
  // token-denominated features still work without words
  CHECK(feat(".,;", FeatureKind::CitationDensity) == 0.0);
}

TEST_CASE("feature names follow the report convention") {
  CHECK(feature_name({FeatureKind::WordLengthMean, ""}) == "wl_mean");
  CHECK(feature_name({FeatureKind::FunctionWordFreq, "the"}) == "fw_the");
  CHECK(feature_name({FeatureKind::FunctionWordFreq, "we"}) == "fw_we");
  CHECK(feature_name({FeatureKind::PunctuationDensity, ""}) == "punct_density");

  const std::vector<StyleFeature> defaults = default_features();
  REQUIRE(defaults.size() == 10);
  std::vector<std::string> names;
  for (const StyleFeature& f : defaults) names.push_back(feature_name(f));
  CHECK(names == std::vector<std::string>{"wl_mean", "cap_rate", "ttr", "punct_density", "fw_the",
                                          "fw_we", "sent_len_mean", "hedge_rate", "cite_density",
                                          "connective_rate"});
}

TEST_CASE("ridge recovers an exactly linear relation at lambda zero") {
  Rng rng(11);
  const int64_t n = 30, d = 4;
  Tensor X = Tensor::zeros(n, d);
  for (int64_t i = 0; i < n * d; ++i) X.at(i) = rng.normal();
  const std::vector<double> w_true = {0.7, -1.3, 0.25, 2.0};
  const double b_true = 0.4;
  Tensor y({n});
  for (int64_t r = 0; r < n; ++r) {
    double s = b_true;
    for (int64_t c = 0; c < d; ++c) s += X.at(r, c) * w_true[static_cast<size_t>(c)];
    y.at(r) = s;
  }
  const ProbeFit fit = fit_probe(X, y, 0.0);
  const Tensor pred = probe_predict(fit, X);
  for (int64_t r = 0; r < n; ++r) CHECK(std::abs(pred.at(r) - y.at(r)) < 1e-8);
  for (int64_t c = 0; c < d; ++c) {
    CHECK(fit.w.at(c) == doctest::Approx(w_true[static_cast<size_t>(c)]).epsilon(1e-6));
  }
  CHECK(fit.b == doctest::Approx(b_true).epsilon(1e-6));
}

TEST_CASE("ridge maps constant targets to a pure bias") {
  Rng rng(12);
  Tensor X = Tensor::zeros(10, 3);
  for (int64_t i = 0; i < X.size(); ++i) X.at(i) = rng.normal();
  Tensor y({10});
  for (int64_t r = 0; r < 10; ++r) y.at(r) = 2.5;
  const ProbeFit fit = fit_probe(X, y, 1.0);
  for (int64_t c = 0; c < 3; ++c) CHECK(fit.w.at(c) == 0.0);
  CHECK(fit.b == 2.5);
}

TEST_CASE("ridge matches a long-double normal-equations oracle") {
  Rng rng(13);
  const int64_t n = 40, d = 6;
  const double lambda = 1.0;
  Tensor X = Tensor::zeros(n, d);
  for (int64_t i = 0; i < n * d; ++i) X.at(i) = rng.normal();
  Tensor y({n});
  for (int64_t r = 0; r < n; ++r) y.at(r) = rng.normal(0.0, 2.0);

  std::vector<long double> xm(static_cast<size_t>(d), 0.0L);
  long double ym = 0.0L;
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t c = 0; c < d; ++c) xm[static_cast<size_t>(c)] += X.at(r, c);
    ym += y.at(r);
  }
  for (auto& v : xm) v /= n;
  ym /= n;
  std::vector<std::vector<long double>> A(static_cast<size_t>(d),
                                          std::vector<long double>(static_cast<size_t>(d), 0.0L));
  std::vector<long double> rhs(static_cast<size_t>(d), 0.0L);
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t i = 0; i < d; ++i) {
      const long double xi = X.at(r, i) - xm[static_cast<size_t>(i)];
      rhs[static_cast<size_t>(i)] += xi * (y.at(r) - ym);
      for (int64_t j = 0; j < d; ++j) {
        A[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
            xi * (X.at(r, j) - xm[static_cast<size_t>(j)]);
      }
    }
  }
  for (int64_t i = 0; i < d; ++i) A[static_cast<size_t>(i)][static_cast<size_t>(i)] += lambda;
  const std::vector<long double> w_want = solve_ld(A, rhs);
  long double b_want = ym;
  for (int64_t c = 0; c < d; ++c) b_want -= xm[static_cast<size_t>(c)] * w_want[static_cast<size_t>(c)];

  const ProbeFit fit = fit_probe(X, y, lambda);
  for (int64_t c = 0; c < d; ++c) {
    CHECK(std::abs(fit.w.at(c) - static_cast<double>(w_want[static_cast<size_t>(c)])) < 1e-8);
  }
  CHECK(std::abs(fit.b - static_cast<double>(b_want)) < 1e-8);
}

TEST_CASE("ridge flags singular systems and bad config") {
  Tensor X = Tensor::zeros(10, 3);
  Rng rng(14);
  for (int64_t r = 0; r < 10; ++r) {
    X.at(r, 0) = rng.normal();
    X.at(r, 1) = X.at(r, 0);  // duplicate column
    X.at(r, 2) = rng.normal();
  }
  Tensor y({10});
  for (int64_t r = 0; r < 10; ++r) y.at(r) = rng.normal();
  CHECK_THROWS_WITH_AS(fit_probe(X, y, 0.0), doctest::Contains("lambda"), Error);
  CHECK_NOTHROW(fit_probe(X, y, 1.0));
  CHECK_THROWS_AS(fit_probe(X, y, -0.5), Error);
  Tensor y_short({9});
  CHECK_THROWS_AS(fit_probe(X, y_short, 1.0), Error);
  CHECK_THROWS_AS(probe_predict(fit_probe(X, y, 1.0), Tensor::zeros(4, 2)), Error);
}

TEST_CASE("r_squared hand cases") {
  const Tensor y({4}, {1.0, 2.0, 3.0, 4.0});
  CHECK(r_squared(y, y) == 1.0);
  const Tensor mean_pred({4}, {2.5, 2.5, 2.5, 2.5});
  CHECK(r_squared(mean_pred, y) == 0.0);
  // anti-correlated: SS_res = 8, SS_tot = 2 over {1,2,3}
  const Tensor anti({3}, {3.0, 2.0, 1.0});
  const Tensor y3({3}, {1.0, 2.0, 3.0});
  CHECK(r_squared(anti, y3) == -3.0);

  const Tensor flat({3}, {5.0, 5.0, 5.0});
  CHECK_THROWS_WITH_AS(r_squared(flat, flat), doctest::Contains("variance"), Error);
  CHECK_THROWS_AS(r_squared(Tensor({1}, {1.0}), Tensor({1}, {1.0})), Error);
  CHECK_THROWS_AS(r_squared(Tensor({2}, {1.0, 2.0}), y3), Error);
}

TEST_CASE("planted embedding feature reads out at layer 0, independent noise does not") {
  encoder::EncoderConfig cfg = tiny_config(2, 3);
  encoder::Encoder enc(cfg);
  Tensor& emb = enc.params().value("tok_emb");
  for (int32_t t = 0; t < cfg.vocab; ++t) emb.at(t, 5) = static_cast<double>(t);

  Rng rng(99);
  const int n = 120, n_train = 90, len = 12;
  Tensor X = Tensor::zeros(n, cfg.d_model);
  Tensor target({n});
  for (int i = 0; i < n; ++i) {
    std::vector<int32_t> ids(len);
    double mean_id = 0.0;
    for (int t = 0; t < len; ++t) {
      ids[static_cast<size_t>(t)] = 2 + static_cast<int32_t>(rng.index(static_cast<size_t>(cfg.vocab - 2)));
      mean_id += ids[static_cast<size_t>(t)];
    }
    target.at(i) = mean_id / len;
    const Tensor pooled = pooled_layer0(enc, ids);
    for (int64_t c = 0; c < cfg.d_model; ++c) X.at(i, c) = pooled.at(c);
  }

  auto slice = [&](const Tensor& src, int lo, int hi) {
    Tensor out = Tensor::zeros(hi - lo, src.cols());
    for (int r = lo; r < hi; ++r) {
      for (int64_t c = 0; c < src.cols(); ++c) out.at(r - lo, c) = src.at(r, c);
    }
    return out;
  };
  auto slice1 = [&](const Tensor& src, int lo, int hi) {
    Tensor out({hi - lo});
    for (int r = lo; r < hi; ++r) out.at(r - lo) = src.at(r);
    return out;
  };

  const ProbeFit fit = fit_probe(slice(X, 0, n_train), slice1(target, 0, n_train), 1.0);
  const double r2 = r_squared(probe_predict(fit, slice(X, n_train, n)), slice1(target, n_train, n));
  CHECK(r2 >= 0.95);

  Tensor noise({n});
  for (int64_t i = 0; i < n; ++i) noise.at(i) = rng.normal();
  const ProbeFit nfit = fit_probe(slice(X, 0, n_train), slice1(noise, 0, n_train), 1.0);
  const double nr2 =
      r_squared(probe_predict(nfit, slice(X, n_train, n)), slice1(noise, n_train, n));
  CHECK(nr2 <= 0.1);
}

TEST_CASE("split_passages deals disjoint hands deterministically") {
  const corpus::Corpus c = tiny_corpus();
  REQUIRE(c.passages.size() == 12);
  auto [train, test] = split_passages(c, 8, 4, 21);
  CHECK(train.size() == 8);
  CHECK(test.size() == 4);
  std::set<int> seen;
  for (const auto& p : train) seen.insert(p.id);
  for (const auto& p : test) CHECK(seen.count(p.id) == 0);

  auto [train2, test2] = split_passages(c, 8, 4, 21);
  for (size_t i = 0; i < train.size(); ++i) CHECK(train2[i].id == train[i].id);
  for (size_t i = 0; i < test.size(); ++i) CHECK(test2[i].id == test[i].id);

  CHECK_THROWS_WITH_AS(split_passages(c, 10, 4, 1), doctest::Contains("passages"), Error);
  CHECK_THROWS_AS(split_passages(c, 0, 4, 1), Error);
}

TEST_CASE("probe_sweep fills a feature-by-layer grid deterministically") {
  const corpus::Corpus c = tiny_corpus();
  encoder::EncoderConfig cfg = tiny_config(2, 5);
  cfg.max_len = 32;
  cfg.vocab = c.vocab.size();
  const encoder::Encoder enc(cfg);
  auto [train, test] = split_passages(c, 8, 4, 21);
  // fw_the would be all-zero on this tiny corpus; stick to features the
  // 18-token passages are guaranteed to vary in
  const std::vector<StyleFeature> feats = {{FeatureKind::WordLengthMean, ""},
                                           {FeatureKind::CapitalizationRate, ""},
                                           {FeatureKind::TypeTokenRatio, ""},
                                           {FeatureKind::PunctuationDensity, ""}};

  const ProbeMatrix m = probe_sweep(enc, train, test, feats, 1.0);
  CHECK(m.n_train == 8);
  CHECK(m.n_test == 4);
  CHECK(m.ridge_lambda == 1.0);
  REQUIRE(m.features.size() == 4);
  CHECK(m.features[0] == "wl_mean");
  REQUIRE(m.r2.size() == 4);
  for (const auto& row : m.r2) {
    REQUIRE(row.size() == 3);  // layers 0..2
    for (double v : row) {
      CHECK(std::isfinite(v));
      CHECK(v <= 1.0);
    }
  }

  const ProbeMatrix m2 = probe_sweep(enc, train, test, feats, 1.0);
  CHECK(m2.r2 == m.r2);

  CHECK_THROWS_WITH_AS(probe_sweep(enc, train, train, feats, 1.0), doctest::Contains("splits"),
                       Error);
  CHECK_THROWS_AS(probe_sweep(enc, train, test, {}, 1.0), Error);
  CHECK_THROWS_AS(probe_sweep(enc, {}, test, feats, 1.0), Error);
}

TEST_CASE("probe_compare reports spread and peaks") {
  ProbeMatrix a;
  a.model = "mean_cosine";
  a.features = {"wl_mean", "ttr"};
  a.r2 = {{0.1, 0.5, 0.4}, {0.2, 0.2, 0.3}};
  ProbeMatrix b = a;
  b.model = "maxsim";
  b.r2 = {{0.15, 0.45, 0.4}, {0.2, 0.25, 0.28}};

  const ProbeCompareReport rep = probe_compare({a, b});
  CHECK(rep.models == std::vector<std::string>{"mean_cosine", "maxsim"});
  CHECK(rep.features == a.features);
  CHECK(rep.max_abs_diff[0][0] == doctest::Approx(0.05));
  CHECK(rep.max_abs_diff[0][2] == 0.0);
  CHECK(rep.max_abs_diff[1][2] == doctest::Approx(0.02));
  REQUIRE(rep.peaks.size() == 2);
  CHECK(rep.peaks[0][0].r2 == 0.5);
  CHECK(rep.peaks[0][0].layer == 1);
  CHECK(rep.peaks[1][1].layer == 2);

  // ties resolve to the lowest layer
  ProbeMatrix t = a;
  t.r2 = {{0.5, 0.5, 0.2}, {0.1, 0.1, 0.1}};
  const ProbeCompareReport tied = probe_compare({t, t});
  CHECK(tied.peaks[0][0].layer == 0);
  CHECK(tied.max_abs_diff[0][0] == 0.0);

  ProbeMatrix wrong = a;
  wrong.features = {"wl_mean", "cap_rate"};
  CHECK_THROWS_WITH_AS(probe_compare({a, wrong}), doctest::Contains("axes"), Error);
  ProbeMatrix ragged = a;
  ragged.r2[1] = {0.1, 0.2};
  CHECK_THROWS_AS(probe_compare({a, ragged}), Error);
  CHECK_THROWS_AS(probe_compare({a}), Error);
}

TEST_CASE("probe csv is stable and exact") {
  ProbeMatrix m;
  m.model = "maxsim";
  m.features = {"wl_mean", "ttr"};
  m.r2 = {{0.5, 0.25}, {1.0, -3.0}};
  m.n_train = 8;
  m.n_test = 4;
  m.ridge_lambda = 1.0;

  const std::string path = "probe_matrix_test.csv";
  write_probe_csv(m, path);
  const std::string got = slurp(path);
  CHECK(got ==
        "# stylolab probe matrix v1; model=maxsim n_train=8 n_test=4 lambda=1\n"
        "feature,layer,r2\n"
        "wl_mean,0,0.5\n"
        "wl_mean,1,0.25\n"
        "ttr,0,1\n"
        "ttr,1,-3\n");
  write_probe_csv(m, path);
  CHECK(slurp(path) == got);
  std::remove(path.c_str());

  CHECK_THROWS_AS(write_probe_csv(m, "no_such_dir/x.csv"), Error);
}
