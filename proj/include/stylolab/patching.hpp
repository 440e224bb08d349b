#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "stylolab/encoder.hpp"
#include "stylolab/scoring.hpp"
#include "stylolab/training.hpp"

namespace stylolab::patching {

/// Percent-recovery denominators smaller than this are flagged rather than
/// divided by; the flag count is reported next to every averaged value.
inline constexpr double kEpsDen = 1e-9;

/// One (triplet, layer) cell of a patch grid. The anchor is never patched.
/// s_patched injects the positive's activations into the negative's encode
/// (the canonical patched pass); s_patched_mirror injects the negative into
/// the positive's encode, which is what gives rank recovery its second term.
struct PatchRun {
  int triplet = -1;
  int layer = 0;
  double s_clean = 0.0;    // s(a, p), plain
  double s_corrupt = 0.0;  // s(a, n), plain
  double s_patched = 0.0;
  double s_patched_mirror = 0.0;
};

struct PatchGrid {
  std::vector<PatchRun> runs;  // ordered by (triplet, layer), layers 0..n_layers
  int n_layers = 0;
  std::string scorer;
  std::string strategy;
  std::string tier = "all";
  int checkpoint_step = -1;
};

enum class Metric { Percent, Rank, Sensitivity };
const char* metric_name(Metric m);

/// Per-layer aggregate of one metric over a grid. values[l] averages the
/// layer-l runs that survived flagging; flagged[l] counts the excluded ones
/// (always zero for rank and sensitivity). A layer with no surviving runs
/// holds NaN and n_effective 0.
struct RecoveryCurve {
  Metric metric = Metric::Percent;
  std::vector<double> values;
  std::vector<int64_t> n_effective;
  std::vector<int64_t> flagged;
  std::string scorer;
  std::string strategy;
  std::string tier = "all";
  int checkpoint_step = -1;
};

/// The correctly-ranked subset: triplets with s(a,p) strictly above s(a,n).
std::vector<training::TokenTriplet> filter_correct(
    const training::Model& model, const std::vector<training::TokenTriplet>& triplets);

/// Three-pass protocol over every (triplet, layer): clean and corrupt scores
/// computed once per triplet, then both patched directions per layer.
/// Encoder and scorer failures are rethrown with (triplet, layer) attached.
PatchGrid run_patch_grid(const training::Model& model,
                         const std::vector<training::TokenTriplet>& triplets,
                         const encoder::PatchStrategy& strategy, int checkpoint_step = -1,
                         const std::string& tier = "all", int align_budget = 5);

struct PercentOutcome {
  double value = 0.0;
  bool flagged = false;  // |s_clean - s_corrupt| below eps_den; value meaningless
};

/// (s_patched - s_corrupt) / (s_clean - s_corrupt) * 100. Unbounded by
/// design; collapsing denominators flag the run instead of exploding it.
PercentOutcome percent_recovery(const PatchRun& run, double eps_den = kEpsDen);

RecoveryCurve percent_curve(const PatchGrid& grid, double eps_den = kEpsDen);
/// Fraction of runs per layer ranking the patched positive above the patched
/// negative. 0.5 is chance; the grid must be built from correctly-ranked
/// triplets for the paper's reading.
RecoveryCurve rank_recovery(const PatchGrid& grid);
/// Mean |s_patched - s_corrupt| per layer.
RecoveryCurve score_sensitivity(const PatchGrid& grid);

/// Earliest layer whose rank recovery strictly exceeds the threshold.
std::optional<int> consolidation_point(const RecoveryCurve& rank_curve,
                                       double threshold = 0.75);

struct CheckpointRef {
  int step = -1;
  std::string path;
};

/// Percent-recovery curve per checkpoint (rank is too coarse for dynamics).
/// All checkpoints must share the encoder architecture; failures name the
/// offending step.
std::vector<RecoveryCurve> dynamics_sweep(const std::vector<CheckpointRef>& checkpoints,
                                          const scoring::Scorer& scorer,
                                          const std::vector<training::TokenTriplet>& triplets,
                                          const encoder::PatchStrategy& strategy,
                                          const std::unordered_set<int32_t>& punct_ids = {},
                                          int align_budget = 5);

/// Versioned CSV: one row per (curve, layer) with columns
/// scorer,checkpoint,tier,strategy,layer,metric,value,n_effective,flags.
/// curves_csv returns the full text so callers can stack their own headers
/// above it; write_curves_csv writes exactly that text.
std::string curves_csv(const std::vector<RecoveryCurve>& curves);
void write_curves_csv(const std::vector<RecoveryCurve>& curves, const std::string& path);

}  // namespace stylolab::patching
