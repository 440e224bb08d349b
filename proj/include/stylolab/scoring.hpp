#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "stylolab/tape.hpp"

namespace stylolab::scoring {

enum class ScorerKind { MeanCosine, MaxSim, Pli };

/// The three scoring mechanisms. mean_cosine compares masked mean vectors;
/// maxsim sums, over kept anchor tokens, the max cosine to any kept candidate
/// token; pli does the same over contiguous patches of patch_n kept tokens
/// (a ragged final patch is averaged over its true size).
struct Scorer {
  ScorerKind kind = ScorerKind::MeanCosine;
  int64_t patch_n = 2;     // pli only
  bool mask_punct = false;  // maxsim defaults to true
  bool mask_pad = true;

  static Scorer mean_cosine() { return {ScorerKind::MeanCosine, 2, false, true}; }
  static Scorer maxsim() { return {ScorerKind::MaxSim, 2, true, true}; }
  static Scorer pli(int64_t n = 2) { return {ScorerKind::Pli, n, false, true}; }
  std::string name() const;
};

/// Builds the row-keep mask for one side: drops padding (per `valid`) when
/// mask_pad is set and punctuation tokens when mask_punct is set. An empty
/// `valid` means every position is real.
std::vector<uint8_t> keep_mask(const Scorer& scorer, const std::vector<int32_t>& ids,
                               const std::vector<uint8_t>& valid,
                               const std::unordered_set<int32_t>& punct_ids);

/// Scalar score. Ha is the anchor side (rows summed over for maxsim/pli), Hp
/// the candidate side. An empty keep vector keeps every row.
double score(const Scorer& scorer, const Tensor& Ha, const Tensor& Hp,
             const std::vector<uint8_t>& keep_a = {}, const std::vector<uint8_t>& keep_p = {});

/// Same computation as a tape graph, for training. `score` routes through
/// this on a throwaway tape, so both paths are bit-identical by construction.
Var score_taped(const Scorer& scorer, Tape& tape, Var ha, Var hp,
                const std::vector<uint8_t>& keep_a = {}, const std::vector<uint8_t>& keep_p = {});

struct ScoreGrad {
  Tensor dHa;
  Tensor dHp;
};

/// Closed-form gradients of score w.r.t. both hidden matrices (masked rows
/// zero). Written directly from the chain rule with the same kernels the tape
/// uses, so it must agree with tape autodiff bit-for-bit — that agreement is
/// the gradient-structure verification.
ScoreGrad score_grad(const Scorer& scorer, const Tensor& Ha, const Tensor& Hp,
                     const std::vector<uint8_t>& keep_a = {},
                     const std::vector<uint8_t>& keep_p = {});

struct SparsityReport {
  int64_t anchor_nonzero_rows = 0;
  int64_t candidate_nonzero_rows = 0;
  double anchor_fraction = 0.0;     // over all anchor rows
  double candidate_fraction = 0.0;  // over all candidate rows
};

/// Counts rows that receive any gradient, per side. Dense-and-uniform vs
/// sparse-and-selective in one number.
SparsityReport sparsity_report(const Scorer& scorer, const Tensor& Ha, const Tensor& Hp,
                               const std::vector<uint8_t>& keep_a = {},
                               const std::vector<uint8_t>& keep_p = {});

struct DpiWitness {
  Tensor anchor;          // 4 x d
  Tensor anchor_swapped;  // rows 1 and 2 exchanged (across the n=2 patch boundary)
  Tensor candidate;       // 4 x d
};

/// Constructs matrices whose entries lie on a dyadic grid so row sums are
/// exact and therefore order-invariant: mean_cosine cannot tell anchor from
/// anchor_swapped (difference exactly 0), while pli(n=2) generically can.
DpiWitness dpi_witness(int64_t d, uint64_t seed);

}  // namespace stylolab::scoring
