#include "stylolab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "stylolab/error.hpp"
#include "stylolab/wordlists.hpp"

namespace stylolab::corpus {

namespace {

using nlohmann::json;

constexpr int kMinWordLen = 3;
constexpr int kMaxWordLen = 12;
constexpr int kWordsPerLength = 8;
constexpr int kNumCitations = 30;
constexpr int kPassagesPerPaper = 5;
constexpr int kMaxDomains = 3;

// Disjoint per-domain letter inventories: generated content words can never
// collide across domains, nor with the curated lists (those mix inventories).
struct LetterSet {
  const char* consonants;
  const char* vowels;
};
constexpr std::array<LetterSet, kMaxDomains> kDomainLetters = {{
    {"bdglmnr", "ae"},
    {"ptksvzf", "io"},
    {"chjqwx", "uy"},
}};

// Per-domain citation emission rates (per token). Citation habit is treated
// as a venue convention, not an author knob, so it rides on the domain.
constexpr std::array<double, kMaxDomains> kCiteRates = {0.01, 0.03, 0.06};

// Substream tags for the corpus generator.
constexpr uint64_t kStyleStream = 0x5701;
constexpr uint64_t kLexiconStream = 0x5702;
constexpr uint64_t kPassageStreamBase = 0x10000;
constexpr uint64_t kTierStreamBase = 0x20000;

std::string capitalized(const std::string& w) {
  std::string c = w;
  c[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(c[0])));
  return c;
}

bool is_punct_char(char c) {
  for (char m : kPunctMarks)
    if (m == c) return true;
  return false;
}

AuthorStyle sample_style(int id, Rng& rng) {
  AuthorStyle s;
  s.id = id;
  s.function_word_dist.resize(words::kFunctionWords.size());
  double total = 0.0;
  for (double& p : s.function_word_dist) {
    p = std::exp(0.7 * rng.normal());
    total += p;
  }
  for (double& p : s.function_word_dist) p /= total;
  s.punct_rates[0] = rng.uniform(0.04, 0.10);  // period: also sets sentence length
  s.punct_rates[1] = rng.uniform(0.02, 0.10);  // comma
  for (size_t m = 2; m < kPunctMarks.size(); ++m) s.punct_rates[m] = rng.uniform(0.002, 0.02);
  s.word_len_mu = rng.uniform(4.5, 8.5);
  s.word_len_sigma = 1.5;
  s.capitalization_rate = rng.uniform(0.05, 0.5);
  s.hedging_rate = rng.uniform(0.0, 0.08);
  s.connective_rate = rng.uniform(0.0, 0.10);
  return s;
}

void validate_style(const AuthorStyle& s) {
  double total = 0.0;
  for (double p : s.function_word_dist) {
    if (p < 0.0 || p > 1.0) throw Error(ErrorCode::InvalidConfig, "function-word weight outside [0,1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig,
                "function-word distribution sums to " + std::to_string(total));
  }
  for (double r : s.punct_rates) {
    if (r < 0.0 || r > 1.0) throw Error(ErrorCode::InvalidConfig, "punctuation rate outside [0,1]");
  }
}

AuthorStyle mix_styles(const std::vector<AuthorStyle>& styles, const std::vector<int>& members) {
  AuthorStyle mix;
  mix.function_word_dist.assign(styles[0].function_word_dist.size(), 0.0);
  mix.punct_rates.fill(0.0);
  mix.word_len_mu = 0.0;
  mix.word_len_sigma = 0.0;
  mix.capitalization_rate = 0.0;
  mix.hedging_rate = 0.0;
  mix.connective_rate = 0.0;
  const double inv = 1.0 / static_cast<double>(members.size());
  for (int m : members) {
    const AuthorStyle& s = styles[static_cast<size_t>(m)];
    for (size_t i = 0; i < mix.function_word_dist.size(); ++i) {
      mix.function_word_dist[i] += inv * s.function_word_dist[i];
    }
    for (size_t i = 0; i < mix.punct_rates.size(); ++i) mix.punct_rates[i] += inv * s.punct_rates[i];
    mix.word_len_mu += inv * s.word_len_mu;
    mix.word_len_sigma += inv * s.word_len_sigma;
    mix.capitalization_rate += inv * s.capitalization_rate;
    mix.hedging_rate += inv * s.hedging_rate;
    mix.connective_rate += inv * s.connective_rate;
  }
  // Renormalize away accumulated rounding so the simplex invariant is exact
  // to the checked tolerance.
  double total = 0.0;
  for (double p : mix.function_word_dist) total += p;
  for (double& p : mix.function_word_dist) p /= total;
  return mix;
}

bool sets_disjoint(const AuthorSet& a, const AuthorSet& b) {
  for (int m : a.members)
    if (std::find(b.members.begin(), b.members.end(), m) != b.members.end()) return false;
  return true;
}

bool sets_overlap_partially(const AuthorSet& a, const AuthorSet& b) {
  if (a.members == b.members) return false;
  return !sets_disjoint(a, b);
}

int fw_index(const char* word) {
  for (size_t i = 0; i < words::kFunctionWords.size(); ++i) {
    if (std::string(words::kFunctionWords[i]) == word) return static_cast<int>(i);
  }
  throw Error(ErrorCode::InvalidConfig, std::string("function-word list is missing '") + word + "'");
}

}  // namespace

double AuthorStyle::punct_total() const {
  double t = 0.0;
  for (double r : punct_rates) t += r;
  return t;
}

Vocab::Vocab() {
  id_to_token_ = {"<pad>", "<unk>"};
  token_to_id_ = {{"<pad>", kPadId}, {"<unk>", kUnkId}};
}

int32_t Vocab::add(const std::string& tok) {
  auto it = token_to_id_.find(tok);
  if (it != token_to_id_.end()) return it->second;
  const int32_t id = static_cast<int32_t>(id_to_token_.size());
  id_to_token_.push_back(tok);
  token_to_id_.emplace(tok, id);
  return id;
}

int32_t Vocab::lookup(const std::string& tok) const {
  auto it = token_to_id_.find(tok);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocab::contains(const std::string& tok) const { return token_to_id_.count(tok) > 0; }

const std::string& Vocab::token(int32_t id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorCode::OutOfVocab, "token id " + std::to_string(id) + " outside vocabulary of " +
                                           std::to_string(size()));
  }
  return id_to_token_[static_cast<size_t>(id)];
}

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::A: return "A";
    case Tier::B: return "B";
    case Tier::C: return "C";
  }
  return "?";
}

bool TripletSet::complete() const {
  for (const auto& [tier, missing] : shortfall)
    if (missing > 0) return false;
  return true;
}

Corpus generate_corpus(const CorpusConfig& config) {
  if (config.n_authors < 1 || config.n_sets < 1 || config.n_domains < 1 ||
      config.passages_per_set < 1 || config.target_len < 16) {
    throw Error(ErrorCode::InvalidConfig, "corpus config has a non-positive or too-small dimension");
  }
  if (config.n_domains > kMaxDomains) {
    throw Error(ErrorCode::InvalidConfig,
                "at most " + std::to_string(kMaxDomains) + " domains are supported, got " +
                    std::to_string(config.n_domains));
  }

  Corpus c;
  c.config = config;
  Rng root(config.seed);

  // --- author styles ---
  if (!config.style_overrides.empty()) {
    if (static_cast<int>(config.style_overrides.size()) != config.n_authors) {
      throw Error(ErrorCode::InvalidConfig,
                  "style_overrides must supply exactly one style per author");
    }
    c.styles = config.style_overrides;
    for (int a = 0; a < config.n_authors; ++a) {
      c.styles[static_cast<size_t>(a)].id = a;
      validate_style(c.styles[static_cast<size_t>(a)]);
    }
  } else {
    Rng style_rng = root.substream(kStyleStream);
    c.styles.reserve(static_cast<size_t>(config.n_authors));
    for (int a = 0; a < config.n_authors; ++a) {
      c.styles.push_back(sample_style(a, style_rng));
      validate_style(c.styles.back());
    }
  }

  // --- author sets: three members each, assigned round-robin so membership
  // wraps and produces exactly the partial overlaps Tier B needs ---
  for (int s = 0; s < config.n_sets; ++s) {
    AuthorSet set;
    set.id = s;
    for (int k = 0; k < 3; ++k) {
      const int author = (3 * s + k) % config.n_authors;
      if (std::find(set.members.begin(), set.members.end(), author) == set.members.end()) {
        set.members.push_back(author);
      }
    }
    set.domain = s % config.n_domains;  // primary = domain of paper 0, see below
    c.sets.push_back(std::move(set));
  }

  if (config.require_tiers) {
    if (config.n_domains < 2) {
      throw Error(ErrorCode::InfeasibleTier,
                  "Tier C needs at least 2 domains, config has " + std::to_string(config.n_domains));
    }
    bool any_disjoint = false;
    bool any_overlap = false;
    for (size_t i = 0; i < c.sets.size(); ++i) {
      for (size_t j = 0; j < c.sets.size(); ++j) {
        if (i == j) continue;
        any_disjoint = any_disjoint || sets_disjoint(c.sets[i], c.sets[j]);
        any_overlap = any_overlap || sets_overlap_partially(c.sets[i], c.sets[j]);
      }
    }
    if (!any_disjoint) {
      throw Error(ErrorCode::InfeasibleTier,
                  "Tier A needs two author-sets with disjoint members; increase n_authors or n_sets");
    }
    if (!any_overlap) {
      throw Error(ErrorCode::InfeasibleTier,
                  "Tier B needs a partially overlapping author-set pair; requires 3*n_sets > n_authors");
    }
  }

  // --- vocabulary ---
  Rng lex_rng = root.substream(kLexiconStream);
  for (char m : kPunctMarks) {
    const int32_t id = c.vocab.add(std::string(1, m));
    c.vocab.mark_punct(id);
  }
  for (int k = 1; k <= kNumCitations; ++k) c.vocab.add("[" + std::to_string(k) + "]");
  auto add_with_variant = [&](const std::string& w) {
    c.vocab.add(w);
    c.vocab.add(capitalized(w));
  };
  for (const char* w : words::kFunctionWords) add_with_variant(w);
  for (const char* w : words::kHedgeWords) add_with_variant(w);
  for (const char* w : words::kConnectiveWords) add_with_variant(w);

  // Domain lexicons: pronounceable CV strings over the domain's inventory,
  // kWordsPerLength distinct words per length.
  std::vector<std::vector<std::vector<std::string>>> domain_words(
      static_cast<size_t>(config.n_domains));
  c.domain_lexicons.resize(static_cast<size_t>(config.n_domains));
  for (int d = 0; d < config.n_domains; ++d) {
    const LetterSet& letters = kDomainLetters[static_cast<size_t>(d)];
    const std::string cons = letters.consonants;
    const std::string vows = letters.vowels;
    domain_words[static_cast<size_t>(d)].resize(kMaxWordLen + 1);
    for (int len = kMinWordLen; len <= kMaxWordLen; ++len) {
      auto& bucket = domain_words[static_cast<size_t>(d)][static_cast<size_t>(len)];
      while (static_cast<int>(bucket.size()) < kWordsPerLength) {
        std::string w;
        for (int i = 0; i < len; ++i) {
          const std::string& pool = (i % 2 == 0) ? cons : vows;
          w += pool[lex_rng.index(pool.size())];
        }
        if (std::find(bucket.begin(), bucket.end(), w) == bucket.end()) bucket.push_back(w);
      }
      for (const std::string& w : bucket) {
        c.domain_lexicons[static_cast<size_t>(d)].push_back(c.vocab.add(w));
        c.vocab.add(capitalized(w));
      }
    }
  }
  c.domain_cite_rates.assign(kCiteRates.begin(), kCiteRates.begin() + config.n_domains);

  // --- paper groups: balanced round-robin over domains, rotated per set so
  // author-set id and passage domain stay independent by construction ---
  int papers_per_set = std::max(config.passages_per_set / kPassagesPerPaper, 2);
  if (config.require_tiers) papers_per_set = std::max(papers_per_set, config.n_domains);
  papers_per_set = std::min(papers_per_set, config.passages_per_set);
  if (config.require_tiers && papers_per_set < std::max(2, config.n_domains)) {
    throw Error(ErrorCode::InfeasibleTier,
                "passages_per_set too small to give every author-set a paper in every domain");
  }

  const int fw_the = fw_index("the");
  const int fw_we = fw_index("we");
  std::vector<AuthorStyle> set_styles;
  set_styles.reserve(c.sets.size());
  for (const AuthorSet& s : c.sets) set_styles.push_back(mix_styles(c.styles, s.members));

  int paper_counter = 0;
  int passage_id = 0;
  const int slack = std::min(config.len_slack, 8);
  for (int s = 0; s < config.n_sets; ++s) {
    const AuthorStyle& style = set_styles[static_cast<size_t>(s)];
    const double punct_total = style.punct_total();
    std::vector<int> paper_ids(static_cast<size_t>(papers_per_set));
    std::vector<int> paper_domains(static_cast<size_t>(papers_per_set));
    for (int k = 0; k < papers_per_set; ++k) {
      paper_ids[static_cast<size_t>(k)] = paper_counter++;
      paper_domains[static_cast<size_t>(k)] = (s + k) % config.n_domains;
    }

    for (int j = 0; j < config.passages_per_set; ++j) {
      const int paper_slot = j % papers_per_set;
      const int domain = paper_domains[static_cast<size_t>(paper_slot)];
      const double cite_rate = c.domain_cite_rates[static_cast<size_t>(domain)];

      Rng rng = root.substream(kPassageStreamBase + static_cast<uint64_t>(passage_id));
      int length = config.target_len +
                   static_cast<int>(std::lround(3.0 * rng.normal()));
      length = std::clamp(length, config.target_len - slack, config.target_len + slack);

      Passage p;
      p.id = passage_id++;
      p.author_set = s;
      p.domain = domain;
      p.paper_group = paper_ids[static_cast<size_t>(paper_slot)];
      p.length = length;
      p.tokens.reserve(static_cast<size_t>(length));

      for (int t = 0; t < length; ++t) {
        const double u = rng.uniform();
        if (u < punct_total) {
          double acc = 0.0;
          size_t mark = 0;
          for (size_t m = 0; m < kPunctMarks.size(); ++m) {
            acc += style.punct_rates[m];
            if (u < acc) {
              mark = m;
              break;
            }
          }
          p.tokens.push_back(c.vocab.lookup(std::string(1, kPunctMarks[mark])));
        } else if (u < punct_total + cite_rate) {
          const int k = 1 + static_cast<int>(rng.index(kNumCitations));
          p.tokens.push_back(c.vocab.lookup("[" + std::to_string(k) + "]"));
        } else {
          const double v = rng.uniform();
          std::string w;
          if (v < style.hedging_rate) {
            w = words::kHedgeWords[rng.index(words::kHedgeWords.size())];
          } else if (v < style.hedging_rate + style.connective_rate) {
            w = words::kConnectiveWords[rng.index(words::kConnectiveWords.size())];
          } else if (v < style.hedging_rate + style.connective_rate + kFunctionWordShare) {
            w = words::kFunctionWords[rng.categorical(style.function_word_dist)];
          } else {
            const int len = std::clamp(
                static_cast<int>(std::lround(style.word_len_mu + style.word_len_sigma * rng.normal())),
                kMinWordLen, kMaxWordLen);
            const auto& bucket = domain_words[static_cast<size_t>(domain)][static_cast<size_t>(len)];
            w = bucket[rng.index(bucket.size())];
          }
          if (rng.uniform() < style.capitalization_rate) w = capitalized(w);
          p.tokens.push_back(c.vocab.lookup(w));
        }
      }
      p.text = detokenize(c.vocab, p.tokens);
      p.style_truth = {
          {"wl_mu", style.word_len_mu},
          {"cap_rate", style.capitalization_rate},
          {"hedge_rate", style.hedging_rate},
          {"conn_rate", style.connective_rate},
          {"punct_total", punct_total},
          {"punct_period", style.punct_rates[0]},
          {"cite_rate", cite_rate},
          {"fw_the", kFunctionWordShare * style.function_word_dist[static_cast<size_t>(fw_the)]},
          {"fw_we", kFunctionWordShare * style.function_word_dist[static_cast<size_t>(fw_we)]},
      };
      c.passages.push_back(std::move(p));
    }
  }
  return c;
}

namespace {

struct TierIndex {
  // passage indices per (set, domain)
  std::vector<std::vector<std::vector<int>>> by_set_domain;
  std::vector<std::pair<int, int>> disjoint_pairs;
  std::vector<std::pair<int, int>> overlap_pairs;
};

TierIndex index_corpus(const Corpus& c) {
  TierIndex idx;
  const size_t ns = c.sets.size();
  const size_t nd = static_cast<size_t>(c.config.n_domains);
  idx.by_set_domain.assign(ns, std::vector<std::vector<int>>(nd));
  for (size_t i = 0; i < c.passages.size(); ++i) {
    const Passage& p = c.passages[i];
    idx.by_set_domain[static_cast<size_t>(p.author_set)][static_cast<size_t>(p.domain)].push_back(
        static_cast<int>(i));
  }
  for (size_t a = 0; a < ns; ++a) {
    for (size_t b = 0; b < ns; ++b) {
      if (a == b) continue;
      if (sets_disjoint(c.sets[a], c.sets[b])) {
        idx.disjoint_pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
      } else if (sets_overlap_partially(c.sets[a], c.sets[b])) {
        idx.overlap_pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
      }
    }
  }
  return idx;
}

}  // namespace

TripletSet build_triplets(const Corpus& corpus, const TripletRequest& request, uint64_t seed) {
  TripletSet out;
  const TierIndex idx = index_corpus(corpus);
  Rng root(seed);

  struct Key {
    int a, p, n;
    bool operator<(const Key& o) const {
      return std::tie(a, p, n) < std::tie(o.a, o.p, o.n);
    }
  };

  auto run_tier = [&](Tier tier, int want) {
    Rng rng = root.substream(kTierStreamBase + static_cast<uint64_t>(tier));
    std::set<Key> seen;
    int built = 0;
    const int64_t attempts = static_cast<int64_t>(want) * 400;
    const auto& pairs = (tier == Tier::B) ? idx.overlap_pairs : idx.disjoint_pairs;
    for (int64_t it = 0; it < attempts && built < want; ++it) {
      if (pairs.empty()) break;
      const auto [sa, sn] = pairs[rng.index(pairs.size())];
      const auto& anchor_domains = idx.by_set_domain[static_cast<size_t>(sa)];
      const int nd = corpus.config.n_domains;

      int d1 = static_cast<int>(rng.index(static_cast<size_t>(nd)));
      int d2 = d1;
      if (tier == Tier::C) {
        if (nd < 2) break;
        d2 = static_cast<int>(rng.index(static_cast<size_t>(nd - 1)));
        if (d2 >= d1) ++d2;
      }
      const auto& anchor_pool = anchor_domains[static_cast<size_t>(d1)];
      const auto& positive_pool = anchor_domains[static_cast<size_t>(d2)];
      const auto& negative_pool =
          idx.by_set_domain[static_cast<size_t>(sn)][static_cast<size_t>(d1)];
      if (anchor_pool.empty() || positive_pool.empty() || negative_pool.empty()) continue;

      const int a = anchor_pool[rng.index(anchor_pool.size())];
      const int p = positive_pool[rng.index(positive_pool.size())];
      if (a == p) continue;
      if (corpus.passages[static_cast<size_t>(a)].paper_group ==
          corpus.passages[static_cast<size_t>(p)].paper_group) {
        continue;
      }
      std::vector<int> candidates;
      for (int n : negative_pool) {
        if (std::abs(corpus.passages[static_cast<size_t>(n)].length -
                     corpus.passages[static_cast<size_t>(p)].length) <= 5) {
          candidates.push_back(n);
        }
      }
      if (candidates.empty()) continue;
      const int n = candidates[rng.index(candidates.size())];
      if (!seen.insert({a, p, n}).second) continue;
      out.triplets.push_back({a, p, n, tier});
      ++built;
    }
    out.shortfall[tier] = want - built;
  };

  run_tier(Tier::A, request.tier_a);
  run_tier(Tier::B, request.tier_b);
  run_tier(Tier::C, request.tier_c);
  return out;
}

std::vector<int32_t> tokenize(const Vocab& vocab, const std::string& text, int64_t* unk_count) {
  std::vector<int32_t> out;
  std::istringstream in(text);
  std::string chunk;
  while (in >> chunk) {
    size_t i = 0;
    while (i < chunk.size()) {
      const char ch = chunk[i];
      if (is_punct_char(ch)) {
        out.push_back(vocab.lookup(std::string(1, ch)));
        ++i;
      } else if (ch == '[') {
        size_t j = i + 1;
        while (j < chunk.size() && std::isdigit(static_cast<unsigned char>(chunk[j]))) ++j;
        if (j < chunk.size() && chunk[j] == ']' && j > i + 1) {
          const int32_t id = vocab.lookup(chunk.substr(i, j - i + 1));
          if (id == kUnkId && unk_count) ++*unk_count;
          out.push_back(id);
          i = j + 1;
        } else {
          // lone bracket: treat the run up to the next separator as a word
          size_t k = i + 1;
          while (k < chunk.size() && !is_punct_char(chunk[k])) ++k;
          const int32_t id = vocab.lookup(chunk.substr(i, k - i));
          if (id == kUnkId && unk_count) ++*unk_count;
          out.push_back(id);
          i = k;
        }
      } else {
        size_t k = i;
        while (k < chunk.size() && !is_punct_char(chunk[k]) && chunk[k] != '[') ++k;
        const std::string word = chunk.substr(i, k - i);
        const int32_t id = vocab.lookup(word);
        if (id == kUnkId && word != "<unk>" && unk_count) ++*unk_count;
        out.push_back(id);
        i = k;
      }
    }
  }
  return out;
}

std::string detokenize(const Vocab& vocab, const std::vector<int32_t>& tokens) {
  std::string text;
  for (int32_t id : tokens) {
    const std::string& tok = vocab.token(id);
    if (vocab.is_punct(id)) {
      text += tok;  // attach to the preceding token
    } else {
      if (!text.empty()) text += ' ';
      text += tok;
    }
  }
  return text;
}

double author_domain_cramers_v(const Corpus& corpus) {
  const size_t ns = corpus.sets.size();
  const size_t nd = static_cast<size_t>(corpus.config.n_domains);
  if (ns < 2 || nd < 2) return 0.0;
  std::vector<std::vector<double>> counts(ns, std::vector<double>(nd, 0.0));
  std::vector<double> row(ns, 0.0);
  std::vector<double> col(nd, 0.0);
  const double total = static_cast<double>(corpus.passages.size());
  for (const Passage& p : corpus.passages) {
    counts[static_cast<size_t>(p.author_set)][static_cast<size_t>(p.domain)] += 1.0;
    row[static_cast<size_t>(p.author_set)] += 1.0;
    col[static_cast<size_t>(p.domain)] += 1.0;
  }
  double chi2 = 0.0;
  for (size_t i = 0; i < ns; ++i) {
    for (size_t j = 0; j < nd; ++j) {
      const double expected = row[i] * col[j] / total;
      if (expected > 0.0) {
        const double d = counts[i][j] - expected;
        chi2 += d * d / expected;
      }
    }
  }
  const double k = static_cast<double>(std::min(ns, nd)) - 1.0;
  return std::sqrt(chi2 / (total * k));
}

namespace {

json style_to_json(const AuthorStyle& s) {
  return json{{"id", s.id},
              {"function_word_dist", s.function_word_dist},
              {"punct_rates", s.punct_rates},
              {"word_len_mu", s.word_len_mu},
              {"word_len_sigma", s.word_len_sigma},
              {"capitalization_rate", s.capitalization_rate},
              {"hedging_rate", s.hedging_rate},
              {"connective_rate", s.connective_rate}};
}

AuthorStyle style_from_json(const json& j) {
  AuthorStyle s;
  s.id = j.at("id").get<int>();
  s.function_word_dist = j.at("function_word_dist").get<std::vector<double>>();
  const auto rates = j.at("punct_rates").get<std::vector<double>>();
  std::copy(rates.begin(), rates.end(), s.punct_rates.begin());
  s.word_len_mu = j.at("word_len_mu").get<double>();
  s.word_len_sigma = j.at("word_len_sigma").get<double>();
  s.capitalization_rate = j.at("capitalization_rate").get<double>();
  s.hedging_rate = j.at("hedging_rate").get<double>();
  s.connective_rate = j.at("connective_rate").get<double>();
  return s;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& passages_path,
                 const std::string& sidecar_path) {
  std::ofstream pf(passages_path);
  if (!pf) throw Error(ErrorCode::IoError, "cannot open " + passages_path + " for writing");
  for (const Passage& p : corpus.passages) {
    json line{{"id", p.id},          {"text", p.text},
              {"tokens", p.tokens},  {"author_set", p.author_set},
              {"domain", p.domain},  {"paper_group", p.paper_group},
              {"length", p.length},  {"style_truth", p.style_truth}};
    pf << line.dump() << '\n';
  }
  if (!pf) throw Error(ErrorCode::IoError, "write failed for " + passages_path);

  json side;
  side["config"] = {{"n_authors", corpus.config.n_authors},
                    {"n_sets", corpus.config.n_sets},
                    {"n_domains", corpus.config.n_domains},
                    {"passages_per_set", corpus.config.passages_per_set},
                    {"target_len", corpus.config.target_len},
                    {"len_slack", corpus.config.len_slack},
                    {"seed", corpus.config.seed},
                    {"require_tiers", corpus.config.require_tiers}};
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<size_t>(corpus.vocab.size()));
  for (int32_t id = 0; id < corpus.vocab.size(); ++id) tokens.push_back(corpus.vocab.token(id));
  side["tokens"] = tokens;
  side["punct_ids"] = corpus.vocab.punct_ids();
  side["styles"] = json::array();
  for (const AuthorStyle& s : corpus.styles) side["styles"].push_back(style_to_json(s));
  side["sets"] = json::array();
  for (const AuthorSet& s : corpus.sets) {
    side["sets"].push_back(json{{"id", s.id}, {"members", s.members}, {"domain", s.domain}});
  }
  side["domain_lexicons"] = corpus.domain_lexicons;
  side["domain_cite_rates"] = corpus.domain_cite_rates;

  std::ofstream sf(sidecar_path);
  if (!sf) throw Error(ErrorCode::IoError, "cannot open " + sidecar_path + " for writing");
  sf << side.dump(2) << '\n';
  if (!sf) throw Error(ErrorCode::IoError, "write failed for " + sidecar_path);
}

Corpus load_corpus(const std::string& passages_path, const std::string& sidecar_path) {
  std::ifstream sf(sidecar_path);
  if (!sf) throw Error(ErrorCode::IoError, "cannot open " + sidecar_path);
  json side;
  try {
    sf >> side;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "bad sidecar JSON: " + std::string(e.what()));
  }

  Corpus c;
  try {
    const json& cfg = side.at("config");
    c.config.n_authors = cfg.at("n_authors").get<int>();
    c.config.n_sets = cfg.at("n_sets").get<int>();
    c.config.n_domains = cfg.at("n_domains").get<int>();
    c.config.passages_per_set = cfg.at("passages_per_set").get<int>();
    c.config.target_len = cfg.at("target_len").get<int>();
    c.config.len_slack = cfg.at("len_slack").get<int>();
    c.config.seed = cfg.at("seed").get<uint64_t>();
    c.config.require_tiers = cfg.at("require_tiers").get<bool>();

    const auto tokens = side.at("tokens").get<std::vector<std::string>>();
    for (size_t i = 2; i < tokens.size(); ++i) c.vocab.add(tokens[i]);
    if (c.vocab.size() != static_cast<int32_t>(tokens.size())) {
      throw Error(ErrorCode::IoError, "sidecar token list contains duplicates");
    }
    for (int32_t id : side.at("punct_ids").get<std::vector<int32_t>>()) c.vocab.mark_punct(id);
    for (const json& js : side.at("styles")) c.styles.push_back(style_from_json(js));
    for (const json& js : side.at("sets")) {
      AuthorSet s;
      s.id = js.at("id").get<int>();
      s.members = js.at("members").get<std::vector<int>>();
      s.domain = js.at("domain").get<int>();
      c.sets.push_back(std::move(s));
    }
    c.domain_lexicons = side.at("domain_lexicons").get<std::vector<std::vector<int32_t>>>();
    c.domain_cite_rates = side.at("domain_cite_rates").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "bad sidecar fields: " + std::string(e.what()));
  }

  std::ifstream pf(passages_path);
  if (!pf) throw Error(ErrorCode::IoError, "cannot open " + passages_path);
  std::string line;
  while (std::getline(pf, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      Passage p;
      p.id = j.at("id").get<int>();
      p.text = j.at("text").get<std::string>();
      p.tokens = j.at("tokens").get<std::vector<int32_t>>();
      p.author_set = j.at("author_set").get<int>();
      p.domain = j.at("domain").get<int>();
      p.paper_group = j.at("paper_group").get<int>();
      p.length = j.at("length").get<int>();
      p.style_truth = j.at("style_truth").get<std::map<std::string, double>>();
      c.passages.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, "bad passage line: " + std::string(e.what()));
    }
  }
  return c;
}

}  // namespace stylolab::corpus
