#pragma once

#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stylolab/corpus.hpp"
#include "stylolab/encoder.hpp"
#include "stylolab/scoring.hpp"

namespace stylolab::training {

struct TrainConfig {
  double temperature = 0.05;
  int batch_size = 16;
  int steps = 3000;
  double lr = 3e-4;
  double weight_decay = 0.01;
  std::vector<int> checkpoint_steps;  // empty = default schedule
  uint64_t seed = 0;
};

/// {0, 50, 150, 300, 500, 1000, 2000} clipped to the step budget, plus final.
std::vector<int> default_checkpoint_steps(int steps);

/// A triplet materialized down to token ids, decoupled from corpus storage.
struct TokenTriplet {
  std::vector<int32_t> anchor;
  std::vector<int32_t> positive;
  std::vector<int32_t> negative;
};

std::vector<TokenTriplet> materialize(const corpus::Corpus& corpus,
                                      const corpus::TripletSet& triplets);

/// Encoder + scorer pairing. Every scorer reads the final-layernorm states;
/// the scoring mechanism, not the representation, is the experimental
/// variable.
struct Model {
  encoder::Encoder enc;
  scoring::Scorer scorer;
  std::unordered_set<int32_t> punct_ids;

  Model(encoder::Encoder e, scoring::Scorer s, std::unordered_set<int32_t> punct = {});

  /// Representation the scorer consumes, for a captured stack.
  Tensor states(const encoder::HiddenStack& stack) const;
  /// Same representation as a tape node (training route).
  Var states_taped(Tape& tape, const encoder::BoundParams& p,
                   const encoder::Encoder::TapedRun& run) const;
  /// Scorer keep mask for this model's masking policy.
  std::vector<uint8_t> keep(const std::vector<int32_t>& ids,
                            const std::vector<uint8_t>& valid) const;
};

/// End-to-end score of a candidate passage against an anchor passage.
double model_score(const Model& model, const std::vector<int32_t>& anchor_ids,
                   const std::vector<int32_t>& candidate_ids);

/// Score from precomputed representations (used when the candidate side comes
/// out of a patched run). `valid` vectors may be empty (= all real tokens).
double model_score_states(const Model& model, const Tensor& Ha,
                          const std::vector<int32_t>& anchor_ids,
                          const std::vector<uint8_t>& anchor_valid, const Tensor& Hp,
                          const std::vector<int32_t>& candidate_ids,
                          const std::vector<uint8_t>& candidate_valid);

/// -log softmax(s_pos / tau) against {s_pos} ∪ negatives, max-subtracted.
double infonce(double s_pos, const std::vector<double>& s_negs, double tau);

/// Adam with decoupled weight decay; moment buffers sized lazily on first use.
struct AdamW {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t t = 0;
  std::vector<Tensor> m, v;

  void step(encoder::Params& params, const std::vector<Tensor>& grads);
};

/// Mean in-batch InfoNCE over the batch: positives are scored against their
/// anchor, negatives are the other triplets' positives plus every negative.
double batch_loss(const Model& model, const std::vector<TokenTriplet>& batch, double tau);

/// Loss plus parameter gradients (two-stage backward: scoring tape over
/// representation leaves, then a seeded re-encode per passage, reduced in a
/// fixed order).
std::pair<double, std::vector<Tensor>> batch_loss_and_grads(
    const Model& model, const std::vector<TokenTriplet>& batch, double tau);

/// One optimizer update; returns the pre-update batch loss.
double train_step(Model& model, AdamW& opt, const std::vector<TokenTriplet>& batch, double tau);

struct LossPoint {
  int step;
  double loss;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::vector<std::string> checkpoint_paths;
  std::string loss_csv_path;
};

/// Full training loop: seeded batch sampling, checkpoints named
/// ckpt_{scorer}_{step} at the configured schedule, per-step loss CSV with
/// columns (step, loss, scorer, seed). Byte-identical across reruns.
TrainResult train_run(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc_cfg,
                      const scoring::Scorer& scorer, const std::vector<TokenTriplet>& triplets,
                      const TrainConfig& cfg, const std::string& out_dir);

/// L2-normalized, keep-masked mean of the model's representation rows.
Tensor passage_embedding(const Model& model, const std::vector<int32_t>& ids);

/// Mean squared distance between normalized positive-pair embeddings.
double alignment(const std::vector<std::pair<Tensor, Tensor>>& pairs);

/// log of the mean of exp(-2 ||x_i - x_j||^2) over unordered distinct pairs.
double uniformity(const std::vector<Tensor>& sample);

/// alignment over positive pairs and uniformity over every embedding the
/// pairs mention. alignment is 0 iff all pairs coincide; uniformity <= 0.
struct GeometryReport {
  double alignment = 0.0;
  double uniformity = 0.0;
};

GeometryReport geometry(const std::vector<std::pair<Tensor, Tensor>>& pairs);

struct RankingEval {
  double accuracy = 0.0;
  double failure_rate = 0.0;
  int64_t n_plus = 0;
  std::vector<uint8_t> correct;  // per triplet: s(a,p) > s(a,n) strictly
};

RankingEval ranking_from_scores(const std::vector<double>& pos_scores,
                                const std::vector<double>& neg_scores);
RankingEval ranking_eval(const Model& model, const std::vector<TokenTriplet>& triplets);

}  // namespace stylolab::training
