#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylolab/tape.hpp"

namespace stylolab::encoder {

struct EncoderConfig {
  int n_layers = 8;
  int d_model = 64;
  int heads = 4;
  int mlp_mult = 4;
  int max_len = 160;
  int32_t vocab = 0;
  uint64_t seed = 0;
};

/// Ordered, name-addressable parameter store. Insertion order defines the
/// parameter id used by the tape and the optimizer, and is part of the
/// checkpoint format.
class Params {
 public:
  int add(std::string name, Tensor value);
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  int id(const std::string& name) const;
  const std::string& name(int id) const { return names_[static_cast<size_t>(id)]; }
  Tensor& value(int id) { return values_[static_cast<size_t>(id)]; }
  const Tensor& value(int id) const { return values_[static_cast<size_t>(id)]; }
  Tensor& value(const std::string& name) { return value(id(name)); }
  const Tensor& value(const std::string& name) const { return value(id(name)); }
  int count() const { return static_cast<int>(values_.size()); }
  int64_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> by_name_;
};

/// Residual-stream trace. layers[0] is the post-embedding stream and
/// layers[l] the stream after block l, so there are n_layers+1 snapshots.
/// valid[i] == 1 marks a real token; 0 marks padding introduced by patch
/// alignment. Padded rows are excluded from attention keys, pooling, and
/// scorer masks.
struct HiddenStack {
  std::vector<Tensor> layers;
  std::vector<uint8_t> valid;

  int64_t length() const { return layers.empty() ? 0 : layers[0].rows(); }
};

enum class PatchKind { FullStream, LayerDelta, Positions };

struct PatchStrategy {
  PatchKind kind = PatchKind::LayerDelta;
  std::vector<int64_t> positions;  // Positions only

  static PatchStrategy full_stream() { return {PatchKind::FullStream, {}}; }
  static PatchStrategy layer_delta() { return {PatchKind::LayerDelta, {}}; }
  static PatchStrategy at_positions(std::vector<int64_t> pos) {
    return {PatchKind::Positions, std::move(pos)};
  }
  std::string name() const;
};

/// Parameters bound onto a tape, one Var per parameter id.
struct BoundParams {
  std::vector<Var> vars;
  Var operator[](int id) const { return vars[static_cast<size_t>(id)]; }
};

/// Pre-layernorm transformer encoder with learned absolute positional
/// embeddings and a GELU MLP. Every forward path (capture, patched, training)
/// funnels through the same tape ops, so plain and trained routes are
/// bit-identical by construction.
class Encoder {
 public:
  /// Fresh parameters drawn from config.seed: normal(0, 0.02) for weights
  /// and embeddings, residual-writing projections scaled by 1/sqrt(2L),
  /// layernorm gains 1, all biases 0.
  explicit Encoder(const EncoderConfig& config);
  Encoder(const EncoderConfig& config, Params params);

  const EncoderConfig& config() const { return config_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Binds every parameter as a tape leaf. train=true tags them with their
  /// parameter ids so Tape::param_grads() can route gradients back.
  BoundParams bind(Tape& tape, bool train) const;

  /// --- graph-building primitives (shared by all routes) ---
  Var embed(Tape& tape, const BoundParams& p, const std::vector<int32_t>& ids) const;
  /// Applies block `layer` (1-based) to stream x. `key_bias` is a length-m
  /// additive attention bias (0 for valid keys, -1e30 for padding).
  Var apply_block(Tape& tape, const BoundParams& p, int layer, Var x, Var key_bias) const;
  Var apply_final_norm(Tape& tape, const BoundParams& p, Var x) const;
  Var key_bias_from(Tape& tape, const std::vector<uint8_t>& valid) const;

  struct TapedRun {
    std::vector<Var> stack;  // n_layers+1 entries
    Var final_states;        // final layernorm of stack.back()
  };
  /// Full forward on an existing tape. Callers own the tape lifetime.
  TapedRun forward_taped(Tape& tape, const BoundParams& p,
                         const std::vector<int32_t>& ids,
                         const std::vector<uint8_t>& valid = {}) const;

  /// Clean pass capturing the whole residual stream.
  HiddenStack forward_capture(const std::vector<int32_t>& ids) const;

  /// Final-layernorm states for a captured stack.
  Tensor final_states(const HiddenStack& stack) const;

  /// Runs the corrupt input while substituting clean activations at `layer`
  /// per the strategy. Layer 0 denotes the post-embedding stream; under
  /// layer-delta there is no block 0 to re-contribute, so layer 0 is defined
  /// as a no-op (the corrupt run unchanged). Lengths may differ by at most
  /// align_budget: longer clean states are truncated, shorter ones pad-mask
  /// the tail.
  std::pair<HiddenStack, Tensor> forward_patched(const std::vector<int32_t>& corrupt_ids,
                                                 const HiddenStack& clean, int layer,
                                                 const PatchStrategy& strategy,
                                                 int align_budget = 5) const;

  /// Per-position convex combination of stack layers with softmax(weights).
  /// The pooled matrix is a valid scorer input for representation variants.
  Tensor layerwise_pool(const HiddenStack& stack, const Tensor& layer_weights) const;
  /// Same combination on-tape, differentiable in the weights.
  Var layerwise_pool_taped(Tape& tape, const std::vector<Var>& stack, Var layer_weights) const;

 private:
  void validate_ids(const std::vector<int32_t>& ids) const;
  void init_params();

  EncoderConfig config_;
  Params params_;
};

/// Versioned binary checkpoint: config plus every named parameter with shape
/// metadata; bit-exact round trip. Layout documented in docs/file_formats.md.
void save_checkpoint(const Encoder& encoder, const std::string& path);
Encoder load_checkpoint(const std::string& path);

}  // namespace stylolab::encoder
