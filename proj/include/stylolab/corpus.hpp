#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylolab/rng.hpp"

namespace stylolab::corpus {

/// Reserved token ids. Real tokens start at 2.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kUnkId = 1;

/// Punctuation inventory, in emission/vocab order.
inline constexpr std::array<char, 6> kPunctMarks = {'.', ',', ';', ':', '!', '?'};

/// Share of word slots that draw from the function-word list. Fixed across
/// authors so that per-word function-word frequencies are governed purely by
/// each author's distribution over the list.
inline constexpr double kFunctionWordShare = 0.45;

/// Stylometric fingerprint of one author. Every knob is a per-token or
/// per-word emission rate, so extractor measurements have a planted ground
/// truth to be audited against.
struct AuthorStyle {
  int id = -1;
  std::vector<double> function_word_dist;  // simplex over the function-word list
  std::array<double, kPunctMarks.size()> punct_rates{};  // per-mark, per-token
  double word_len_mu = 6.0;     // content-word length target, clamped to [3,12]
  double word_len_sigma = 1.5;
  double capitalization_rate = 0.2;  // per word
  double hedging_rate = 0.03;        // per word
  double connective_rate = 0.05;     // per word

  double punct_total() const;
};

struct AuthorSet {
  int id = -1;
  std::vector<int> members;  // AuthorStyle ids, non-empty
  int domain = -1;           // primary domain (first paper group); reporting only
};

struct Passage {
  int id = -1;
  std::vector<int32_t> tokens;
  std::string text;
  int author_set = -1;
  int domain = -1;
  int paper_group = -1;  // pseudo-paper id, globally unique
  int length = 0;        // token count
  std::map<std::string, double> style_truth;  // planted parameter values
};

class Vocab {
 public:
  Vocab();

  /// Returns the id of `tok`, inserting it if new.
  int32_t add(const std::string& tok);
  /// Returns the id of `tok`, or kUnkId when absent.
  int32_t lookup(const std::string& tok) const;
  const std::string& token(int32_t id) const;
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }
  bool contains(const std::string& tok) const;

  void mark_punct(int32_t id) { punct_ids_.insert(id); }
  const std::set<int32_t>& punct_ids() const { return punct_ids_; }
  bool is_punct(int32_t id) const { return punct_ids_.count(id) > 0; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
  std::set<int32_t> punct_ids_;
};

struct CorpusConfig {
  int n_authors = 40;
  int n_sets = 14;
  int n_domains = 3;
  int passages_per_set = 60;
  int target_len = 130;
  int len_slack = 10;  // hard bound on |length - target_len|
  uint64_t seed = 1;
  /// When true (default), the generator verifies the author-set structure can
  /// support all three triplet tiers and fails otherwise. Degenerate
  /// diagnostic corpora (single author, single domain) opt out.
  bool require_tiers = true;
  /// Optional planted styles, one per author, replacing the sampled ones.
  /// Used by audits that need exact parameter control.
  std::vector<AuthorStyle> style_overrides;
};

struct Corpus {
  CorpusConfig config;
  Vocab vocab;
  std::vector<AuthorStyle> styles;
  std::vector<AuthorSet> sets;
  std::vector<Passage> passages;

  /// Per-domain word ids (lowercase variants), for audits.
  std::vector<std::vector<int32_t>> domain_lexicons;
  /// Per-domain citation emission rate, per token.
  std::vector<double> domain_cite_rates;
};

/// Builds the synthetic corpus. Author-set membership and per-passage domain
/// assignment are independent by construction: every set publishes the same
/// number of papers in every domain (exactly balanced when the paper count
/// divides evenly). Deterministic given config.seed.
Corpus generate_corpus(const CorpusConfig& config);

enum class Tier { A, B, C };

const char* tier_name(Tier t);

/// Indices into Corpus::passages.
struct TieredTriplet {
  int anchor = -1;
  int positive = -1;
  int negative = -1;
  Tier tier = Tier::A;
};

struct TripletRequest {
  int tier_a = 50;
  int tier_b = 50;
  int tier_c = 48;
};

struct TripletSet {
  std::vector<TieredTriplet> triplets;
  /// requested minus built, per tier; all zero when the request was satisfied.
  std::map<Tier, int> shortfall;

  bool complete() const;
};

/// Samples tiered triplets. Anchor and positive always share an author-set
/// and come from different pseudo-papers; |len(positive) - len(negative)| <= 5.
/// On candidate exhaustion the result is partial and shortfall records the gap.
TripletSet build_triplets(const Corpus& corpus, const TripletRequest& request, uint64_t seed);

/// Whitespace-and-punctuation tokenizer over a fixed vocabulary. Punctuation
/// marks and bracketed-numeral citations are atomic tokens. Unknown words map
/// to kUnkId and bump *unk_count when provided.
std::vector<int32_t> tokenize(const Vocab& vocab, const std::string& text,
                              int64_t* unk_count = nullptr);

/// Inverse of tokenize on generated text: words space-separated, punctuation
/// attached to the preceding token.
std::string detokenize(const Vocab& vocab, const std::vector<int32_t>& tokens);

/// JSON-lines corpus file plus sidecar vocabulary/metadata JSON.
/// Formats are documented in docs/file_formats.md.
void save_corpus(const Corpus& corpus, const std::string& passages_path,
                 const std::string& sidecar_path);
Corpus load_corpus(const std::string& passages_path, const std::string& sidecar_path);

/// Decorrelation audit: Cramér's V between author-set id and domain id over
/// passages. Zero (to rounding) for balanced construction.
double author_domain_cramers_v(const Corpus& corpus);

}  // namespace stylolab::corpus
