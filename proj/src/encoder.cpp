#include "stylolab/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "stylolab/error.hpp"
#include "stylolab/rng.hpp"

namespace stylolab::encoder {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kMaskBias = -1e30;  // additive key mask; finite so softmax never sees NaN
constexpr char kCheckpointMagic[8] = {'S', 'L', 'A', 'B', 'C', 'K', 'P', '1'};

std::string block_prefix(int layer) { return "block" + std::to_string(layer) + "."; }
}  // namespace

int Params::add(std::string name, Tensor value) {
  if (by_name_.count(name) > 0) {
    throw Error(ErrorCode::InvalidConfig, "duplicate parameter name: " + name);
  }
  const int id = static_cast<int>(values_.size());
  by_name_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return id;
}

int Params::id(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) {
    throw Error(ErrorCode::MissingInput, "unknown parameter: " + name);
  }
  return it->second;
}

int64_t Params::scalar_count() const {
  int64_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

std::string PatchStrategy::name() const {
  switch (kind) {
    case PatchKind::FullStream: return "full_stream";
    case PatchKind::LayerDelta: return "layer_delta";
    case PatchKind::Positions: return "positions(k=" + std::to_string(positions.size()) + ")";
  }
  return "?";
}

Encoder::Encoder(const EncoderConfig& config) : config_(config) {
  if (config_.n_layers < 0 || config_.d_model < 1 || config_.heads < 1 || config_.mlp_mult < 1 ||
      config_.max_len < 1 || config_.vocab < 2) {
    throw Error(ErrorCode::InvalidConfig, "encoder config has a non-positive dimension");
  }
  if (config_.d_model % config_.heads != 0) {
    throw Error(ErrorCode::InvalidConfig,
                "d_model " + std::to_string(config_.d_model) + " not divisible by heads " +
                    std::to_string(config_.heads));
  }
  init_params();
}

Encoder::Encoder(const EncoderConfig& config, Params params) : config_(config) {
  Encoder expected(config);  // reuse construction-time validation and layout
  for (int i = 0; i < expected.params_.count(); ++i) {
    const std::string& name = expected.params_.name(i);
    if (!params.has(name)) {
      throw Error(ErrorCode::MissingInput, "checkpoint lacks parameter " + name);
    }
    if (!params.value(name).same_shape(expected.params_.value(i))) {
      throw Error(ErrorCode::ShapeMismatch,
                  "parameter " + name + " has shape " + params.value(name).shape_string() +
                      ", expected " + expected.params_.value(i).shape_string());
    }
  }
  params_ = std::move(params);
}

void Encoder::init_params() {
  const int d = config_.d_model;
  const int hidden = d * config_.mlp_mult;
  const double out_scale = 1.0 / std::sqrt(2.0 * std::max(1, config_.n_layers));
  Rng root(config_.seed);

  auto normal_tensor = [&](std::vector<int64_t> shape, double std, uint64_t tag) {
    Tensor t(std::move(shape));
    Rng r = root.substream(0x9100 + tag);
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = std * r.normal();
    return t;
  };
  auto filled = [](std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = v;
    return t;
  };

  uint64_t tag = 0;
  params_.add("tok_emb", normal_tensor({config_.vocab, d}, kInitStd, tag++));
  params_.add("pos_emb", normal_tensor({config_.max_len, d}, kInitStd, tag++));
  for (int l = 1; l <= config_.n_layers; ++l) {
    const std::string pre = block_prefix(l);
    params_.add(pre + "ln1.g", filled({d}, 1.0));
    params_.add(pre + "ln1.b", filled({d}, 0.0));
    params_.add(pre + "attn.wq", normal_tensor({d, d}, kInitStd, tag++));
    params_.add(pre + "attn.bq", filled({d}, 0.0));
    params_.add(pre + "attn.wk", normal_tensor({d, d}, kInitStd, tag++));
    params_.add(pre + "attn.bk", filled({d}, 0.0));
    params_.add(pre + "attn.wv", normal_tensor({d, d}, kInitStd, tag++));
    params_.add(pre + "attn.bv", filled({d}, 0.0));
    params_.add(pre + "attn.wo", normal_tensor({d, d}, kInitStd * out_scale, tag++));
    params_.add(pre + "attn.bo", filled({d}, 0.0));
    params_.add(pre + "ln2.g", filled({d}, 1.0));
    params_.add(pre + "ln2.b", filled({d}, 0.0));
    params_.add(pre + "mlp.w1", normal_tensor({d, hidden}, kInitStd, tag++));
    params_.add(pre + "mlp.b1", filled({hidden}, 0.0));
    params_.add(pre + "mlp.w2", normal_tensor({hidden, d}, kInitStd * out_scale, tag++));
    params_.add(pre + "mlp.b2", filled({d}, 0.0));
  }
  params_.add("final_ln.g", filled({d}, 1.0));
  params_.add("final_ln.b", filled({d}, 0.0));
}

void Encoder::validate_ids(const std::vector<int32_t>& ids) const {
  if (ids.empty()) throw Error(ErrorCode::EmptySequence, "encoder input is empty");
  if (static_cast<int>(ids.size()) > config_.max_len) {
    throw Error(ErrorCode::ShapeMismatch,
                "sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                    std::to_string(config_.max_len));
  }
  for (int32_t id : ids) {
    if (id < 0 || id >= config_.vocab) {
      throw Error(ErrorCode::OutOfVocab,
                  "token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(config_.vocab));
    }
  }
}

BoundParams Encoder::bind(Tape& tape, bool train) const {
  BoundParams bp;
  bp.vars.reserve(static_cast<size_t>(params_.count()));
  for (int i = 0; i < params_.count(); ++i) {
    bp.vars.push_back(tape.leaf(params_.value(i), train, train ? i : -1));
  }
  return bp;
}

Var Encoder::embed(Tape& tape, const BoundParams& p, const std::vector<int32_t>& ids) const {
  validate_ids(ids);
  std::vector<int64_t> tok_rows(ids.begin(), ids.end());
  std::vector<int64_t> pos_rows(ids.size());
  std::iota(pos_rows.begin(), pos_rows.end(), 0);
  Var te = tape.gather(p[params_.id("tok_emb")], std::move(tok_rows));
  Var pe = tape.gather(p[params_.id("pos_emb")], std::move(pos_rows));
  return tape.add(te, pe);
}

Var Encoder::key_bias_from(Tape& tape, const std::vector<uint8_t>& valid) const {
  Tensor bias({static_cast<int64_t>(valid.size())});
  for (size_t i = 0; i < valid.size(); ++i) bias.at(static_cast<int64_t>(i)) = valid[i] ? 0.0 : kMaskBias;
  return tape.constant(std::move(bias));
}

Var Encoder::apply_block(Tape& tape, const BoundParams& p, int layer, Var x, Var key_bias) const {
  if (layer < 1 || layer > config_.n_layers) {
    throw Error(ErrorCode::LayerOutOfRange, "block " + std::to_string(layer) + " of " +
                                                std::to_string(config_.n_layers));
  }
  const std::string pre = block_prefix(layer);
  const int dh = config_.d_model / config_.heads;
  auto P = [&](const std::string& suffix) { return p[params_.id(pre + suffix)]; };

  Var n1 = tape.layernorm(x, P("ln1.g"), P("ln1.b"));
  Var q = tape.add(tape.matmul(n1, P("attn.wq")), P("attn.bq"));
  Var k = tape.add(tape.matmul(n1, P("attn.wk")), P("attn.bk"));
  Var v = tape.add(tape.matmul(n1, P("attn.wv")), P("attn.bv"));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(config_.heads));
  for (int h = 0; h < config_.heads; ++h) {
    Var qh = tape.slice_cols(q, static_cast<int64_t>(h) * dh, dh);
    Var kh = tape.slice_cols(k, static_cast<int64_t>(h) * dh, dh);
    Var vh = tape.slice_cols(v, static_cast<int64_t>(h) * dh, dh);
    Var scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var weights = tape.softmax(tape.add(scores, key_bias));
    heads.push_back(tape.matmul(weights, vh));
  }
  Var attn = tape.add(tape.matmul(tape.concat_cols(heads), P("attn.wo")), P("attn.bo"));
  x = tape.add(x, attn);

  Var n2 = tape.layernorm(x, P("ln2.g"), P("ln2.b"));
  Var h1 = tape.gelu(tape.add(tape.matmul(n2, P("mlp.w1")), P("mlp.b1")));
  Var mlp = tape.add(tape.matmul(h1, P("mlp.w2")), P("mlp.b2"));
  return tape.add(x, mlp);
}

Var Encoder::apply_final_norm(Tape& tape, const BoundParams& p, Var x) const {
  return tape.layernorm(x, p[params_.id("final_ln.g")], p[params_.id("final_ln.b")]);
}

Encoder::TapedRun Encoder::forward_taped(Tape& tape, const BoundParams& p,
                                         const std::vector<int32_t>& ids,
                                         const std::vector<uint8_t>& valid) const {
  std::vector<uint8_t> mask = valid.empty() ? std::vector<uint8_t>(ids.size(), 1) : valid;
  if (mask.size() != ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "validity mask length does not match input length");
  }
  TapedRun run;
  Var bias = key_bias_from(tape, mask);
  Var x = embed(tape, p, ids);
  run.stack.push_back(x);
  for (int l = 1; l <= config_.n_layers; ++l) {
    x = apply_block(tape, p, l, x, bias);
    run.stack.push_back(x);
  }
  run.final_states = apply_final_norm(tape, p, x);
  return run;
}

HiddenStack Encoder::forward_capture(const std::vector<int32_t>& ids) const {
  Tape tape;
  BoundParams bp = bind(tape, false);
  TapedRun run = forward_taped(tape, bp, ids);
  HiddenStack stack;
  stack.layers.reserve(run.stack.size());
  for (Var v : run.stack) stack.layers.push_back(v.val());
  stack.valid.assign(ids.size(), 1);
  return stack;
}

Tensor Encoder::final_states(const HiddenStack& stack) const {
  if (stack.layers.empty()) throw Error(ErrorCode::EmptySequence, "empty hidden stack");
  Tape tape;
  Var x = tape.constant(stack.layers.back());
  Var g = tape.constant(params_.value("final_ln.g"));
  Var b = tape.constant(params_.value("final_ln.b"));
  return tape.layernorm(x, g, b).val();
}

std::pair<HiddenStack, Tensor> Encoder::forward_patched(const std::vector<int32_t>& corrupt_ids,
                                                        const HiddenStack& clean, int layer,
                                                        const PatchStrategy& strategy,
                                                        int align_budget) const {
  validate_ids(corrupt_ids);
  const int L = config_.n_layers;
  if (layer < 0 || layer > L) {
    throw Error(ErrorCode::LayerOutOfRange,
                "patch layer " + std::to_string(layer) + " outside [0, " + std::to_string(L) + "]");
  }
  if (static_cast<int>(clean.layers.size()) != L + 1) {
    throw Error(ErrorCode::ShapeMismatch, "clean stack depth does not match encoder");
  }
  const int64_t m_n = static_cast<int64_t>(corrupt_ids.size());
  const int64_t m_c = clean.length();
  if (std::abs(m_n - m_c) > align_budget) {
    throw Error(ErrorCode::LengthMismatch,
                "length gap " + std::to_string(std::abs(m_n - m_c)) + " exceeds align budget " +
                    std::to_string(align_budget));
  }
  const int64_t m_min = std::min(m_n, m_c);
  const int64_t d = config_.d_model;

  // Clean layer l, truncated to the corrupt length; missing tail rows zero.
  auto aligned = [&](int l) {
    Tensor out = Tensor::zeros(m_n, d);
    const Tensor& src = clean.layers[static_cast<size_t>(l)];
    std::memcpy(out.data(), src.data(), sizeof(double) * static_cast<size_t>(m_min * d));
    return out;
  };

  std::vector<uint8_t> valid_pre(static_cast<size_t>(m_n), 1);
  std::vector<uint8_t> valid_post = valid_pre;
  if (strategy.kind != PatchKind::Positions) {
    for (int64_t i = m_min; i < m_n; ++i) valid_post[static_cast<size_t>(i)] = 0;
  }
  for (int64_t pos : strategy.positions) {
    if (pos < 0 || pos >= m_n) {
      throw Error(ErrorCode::ShapeMismatch, "patch position " + std::to_string(pos) +
                                                " outside corrupt sequence of length " +
                                                std::to_string(m_n));
    }
  }

  Tape tape;
  BoundParams bp = bind(tape, false);
  Var bias_pre = key_bias_from(tape, valid_pre);
  Var bias_post = key_bias_from(tape, valid_post);

  auto substitute = [&](Var x, int l) -> Var {
    switch (strategy.kind) {
      case PatchKind::FullStream:
        return tape.constant(aligned(l));
      case PatchKind::LayerDelta: {
        if (l == 0) return x;  // no block 0: defined as a no-op
        // clean_l + (corrupt_{l-1} - clean_{l-1}): the clean stream at l plus
        // the corrupt drift; grouped so that identical inputs recover the
        // clean run exactly.
        Var drift = tape.sub(x, tape.constant(aligned(l - 1)));
        return tape.add(tape.constant(aligned(l)), drift);
      }
      case PatchKind::Positions: {
        Tensor merged = x.val();
        const Tensor clean_l = aligned(l);
        for (int64_t pos : strategy.positions) {
          if (pos >= m_min) continue;  // no clean row to copy
          std::memcpy(merged.row(pos), clean_l.row(pos), sizeof(double) * static_cast<size_t>(d));
        }
        return tape.constant(std::move(merged));
      }
    }
    throw Error(ErrorCode::InvalidConfig, "unknown patch strategy");
  };

  std::vector<Var> stack;
  Var x = embed(tape, bp, corrupt_ids);
  if (layer == 0) x = substitute(x, 0);
  stack.push_back(x);
  for (int l = 1; l <= L; ++l) {
    if (l == layer && strategy.kind == PatchKind::FullStream) {
      x = substitute(x, l);  // wholesale replacement: block l's output is discarded
    } else if (l == layer && strategy.kind == PatchKind::LayerDelta) {
      x = substitute(x, l);  // block l's contribution comes from the clean stream
    } else {
      Var bias = (l <= layer) ? bias_pre : bias_post;
      x = apply_block(tape, bp, l, x, bias);
      if (l == layer) x = substitute(x, l);  // Positions: merge after the block
    }
    stack.push_back(x);
  }
  Var fin = apply_final_norm(tape, bp, x);

  HiddenStack out;
  out.layers.reserve(stack.size());
  for (Var v : stack) out.layers.push_back(v.val());
  out.valid = valid_post;
  return {std::move(out), fin.val()};
}

Tensor Encoder::layerwise_pool(const HiddenStack& stack, const Tensor& layer_weights) const {
  Tape tape;
  std::vector<Var> layers;
  layers.reserve(stack.layers.size());
  for (const Tensor& t : stack.layers) layers.push_back(tape.constant(t));
  return layerwise_pool_taped(tape, layers, tape.constant(layer_weights)).val();
}

Var Encoder::layerwise_pool_taped(Tape& tape, const std::vector<Var>& stack,
                                  Var layer_weights) const {
  if (static_cast<int>(stack.size()) != config_.n_layers + 1) {
    throw Error(ErrorCode::ShapeMismatch, "stack depth does not match encoder");
  }
  if (layer_weights.val().size() != static_cast<int64_t>(stack.size())) {
    throw Error(ErrorCode::ShapeMismatch, "need one layer weight per stack entry");
  }
  Var w = tape.softmax(layer_weights);
  return tape.weighted_sum(stack, w);
}

void save_checkpoint(const Encoder& encoder, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const EncoderConfig& c = encoder.config();
  auto write_i32 = [&](int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto write_i64 = [&](int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  write_i32(c.n_layers);
  write_i32(c.d_model);
  write_i32(c.heads);
  write_i32(c.mlp_mult);
  write_i32(c.max_len);
  write_i32(c.vocab);
  uint64_t seed = c.seed;
  f.write(reinterpret_cast<const char*>(&seed), 8);

  const Params& p = encoder.params();
  write_i32(p.count());
  for (int i = 0; i < p.count(); ++i) {
    const std::string& name = p.name(i);
    write_i32(static_cast<int32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = p.value(i);
    write_i32(t.ndim());
    for (int64_t dim : t.shape()) write_i64(dim);
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(double))));
  }
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Encoder load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::IoError, path + " is not a checkpoint file");
  }
  auto read_i32 = [&]() {
    int32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto read_i64 = [&]() {
    int64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  EncoderConfig c;
  c.n_layers = read_i32();
  c.d_model = read_i32();
  c.heads = read_i32();
  c.mlp_mult = read_i32();
  c.max_len = read_i32();
  c.vocab = read_i32();
  f.read(reinterpret_cast<char*>(&c.seed), 8);

  const int32_t n_params = read_i32();
  if (!f || n_params < 0) throw Error(ErrorCode::IoError, "truncated checkpoint " + path);
  Params params;
  for (int32_t i = 0; i < n_params; ++i) {
    const int32_t name_len = read_i32();
    if (!f || name_len < 0 || name_len > 4096) {
      throw Error(ErrorCode::IoError, "corrupt parameter name in " + path);
    }
    std::string name(static_cast<size_t>(name_len), '\0');
    f.read(name.data(), name_len);
    const int32_t ndim = read_i32();
    if (!f || ndim < 1 || ndim > 2) throw Error(ErrorCode::IoError, "corrupt shape in " + path);
    std::vector<int64_t> shape(static_cast<size_t>(ndim));
    for (int32_t k = 0; k < ndim; ++k) shape[static_cast<size_t>(k)] = read_i64();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(double))));
    if (!f) throw Error(ErrorCode::IoError, "truncated tensor data in " + path);
    params.add(std::move(name), std::move(t));
  }
  return Encoder(c, std::move(params));
}

}  // namespace stylolab::encoder
