#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stylolab/corpus.hpp"
#include "stylolab/encoder.hpp"
#include "stylolab/scoring.hpp"
#include "stylolab/training.hpp"

namespace stylolab::cli {

/// Flat key-value config text: [section] headers, one `key = value` per line,
/// '#' and ';' comments. Order-preserving so serialization is canonical.
struct IniFile {
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections;

  const std::string* find(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
};

/// Throws InvalidConfig on malformed lines or duplicate keys.
IniFile parse_ini(const std::string& text);
std::string serialize_ini(const IniFile& f);

uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

/// Everything one experiment needs; a single seed fans out to corpus,
/// encoder, and training so runs are reproducible from one number.
struct ExperimentConfig {
  corpus::CorpusConfig corpus;
  encoder::EncoderConfig encoder;  // vocab filled from the corpus at use time
  training::TrainConfig train;
  std::vector<scoring::Scorer> scorers;
  std::string strategy = "layer-delta";
  std::vector<int64_t> positions;  // positions strategy only
  corpus::TripletRequest tiers;
  int probe_train = 2000;
  int probe_test = 500;
  double probe_lambda = 1.0;
  std::string out_dir = "runs/default";
  uint64_t seed = 7;
};

/// Strict parse: unknown sections or keys are errors, so typos cannot
/// silently fall back to defaults.
ExperimentConfig config_from_ini(const IniFile& f);
ExperimentConfig load_config(const std::string& path);

/// Canonical serialization of the experiment identity. Excludes seed and
/// out_dir: the seed is recorded alongside the hash in every artifact, and
/// the output location is not part of what was computed.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// Comment line every artifact starts with:
/// "# stylolab <kind> v1; config=<hash> seed=<seed> strategy=<strategy>".
std::string meta_line(const std::string& kind, const std::string& hash, uint64_t seed,
                      const std::string& strategy);

/// Parsed-back fields of a meta line, for cross-file consistency checks.
struct MetaFields {
  std::string kind;
  std::string config;
  uint64_t seed = 0;
  std::string strategy;
};
std::optional<MetaFields> parse_meta_line(const std::string& line);

/// Flag spelling {mean|li|pli} to scorer; pli takes patch_n from the config.
scoring::Scorer scorer_from_flag(const std::string& flag, int64_t patch_n = 2);
std::string flag_from_scorer(const scoring::Scorer& s);
encoder::PatchStrategy strategy_from_flag(const std::string& flag,
                                          const std::vector<int64_t>& positions);

struct Series {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

/// Self-contained polyline chart; NaN points break the line. Deterministic
/// output, no timestamps.
std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series);

/// Overlapping translucent histograms on a shared binning.
struct HistGroup {
  std::string label;
  std::vector<double> values;
};
std::string svg_histogram(const std::string& title, const std::string& xlabel,
                          const std::vector<HistGroup>& groups, int bins);

/// Row-labelled heatmap, columns 0..n-1, two-color ramp with min/max legend.
std::string svg_heatmap(const std::string& title, const std::vector<std::string>& rows,
                        const std::vector<std::vector<double>>& values);

/// Entry point behind main(); returns the process exit code (0 ok, 1 usage,
/// 2 data/validation).
int cli_main(int argc, const char* const* argv);

}  // namespace stylolab::cli
