#include "stylolab/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stylolab/error.hpp"
#include "stylolab/kernels.hpp"
#include "stylolab/rng.hpp"

namespace stylolab::training {

namespace {

constexpr uint64_t kBatchStream = 0x7e000000ULL;

Error with_triplet(const Error& e, size_t i) {
  std::string msg = e.what();
  const std::string prefix = std::string(error_code_name(e.code())) + ": ";
  if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
  return Error(e.code(), msg + " (triplet " + std::to_string(i) + ")");
}

// One passage slot in a batch: its ids, plain representation, and keep mask.
struct Slot {
  const std::vector<int32_t>* ids = nullptr;
  Tensor rep;
  std::vector<uint8_t> keep;
};

Slot make_slot(const Model& model, const std::vector<int32_t>& ids) {
  Slot s;
  s.ids = &ids;
  s.rep = model.states(model.enc.forward_capture(ids));
  s.keep = model.keep(ids, {});
  // fail here, where the owning triplet is known, not in some other row's score
  if (std::none_of(s.keep.begin(), s.keep.end(), [](uint8_t k) { return k != 0; })) {
    throw Error(ErrorCode::EmptyAfterMask, "passage fully masked for scoring");
  }
  return s;
}

// Builds the in-batch InfoNCE graph over representation leaves and returns
// the mean loss node. leaves[kind][i] receives the created Vars.
Var scoring_graph(const Model& model, Tape& tape, const std::vector<Slot>& anchors,
                  const std::vector<Slot>& positives, const std::vector<Slot>& negatives,
                  double tau, bool for_grads, std::vector<Var>* va, std::vector<Var>* vp,
                  std::vector<Var>* vn) {
  const size_t B = anchors.size();
  auto bind_side = [&](const std::vector<Slot>& side, std::vector<Var>* out) {
    std::vector<Var> vars;
    vars.reserve(side.size());
    for (const Slot& s : side) vars.push_back(tape.leaf(s.rep, for_grads));
    if (out) *out = vars;
    return vars;
  };
  std::vector<Var> a = bind_side(anchors, va);
  std::vector<Var> p = bind_side(positives, vp);
  std::vector<Var> n = bind_side(negatives, vn);

  Var total;
  for (size_t i = 0; i < B; ++i) {
    try {
      std::vector<Var> scores;
      scores.reserve(2 * B);
      scores.push_back(scoring::score_taped(model.scorer, tape, a[i], p[i], anchors[i].keep,
                                            positives[i].keep));
      for (size_t j = 0; j < B; ++j) {
        if (j == i) continue;
        scores.push_back(scoring::score_taped(model.scorer, tape, a[i], p[j], anchors[i].keep,
                                              positives[j].keep));
      }
      for (size_t j = 0; j < B; ++j) {
        scores.push_back(scoring::score_taped(model.scorer, tape, a[i], n[j], anchors[i].keep,
                                              negatives[j].keep));
      }
      Var li = tape.infonce(tape.concat_rows(scores), tau);
      total = (i == 0) ? li : tape.add(total, li);
    } catch (const Error& e) {
      throw with_triplet(e, i);
    }
  }
  return tape.scale(total, 1.0 / static_cast<double>(B));
}

void validate_batch(const std::vector<TokenTriplet>& batch) {
  if (batch.size() < 2) {
    throw Error(ErrorCode::InvalidConfig,
                "batch needs at least 2 triplets so in-batch negatives exist");
  }
}

Tensor normalized_copy(const Tensor& x) {
  const double norm = kernels::l2_norm(x.data(), x.size());
  if (norm <= kernels::kEpsNorm) {
    throw Error(ErrorCode::DegenerateNorm, "embedding norm below 1e-12");
  }
  Tensor out(x.shape());
  const double inv = 1.0 / norm;
  for (int64_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) * inv;
  return out;
}

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = a.at(i) - b.at(i);
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<int> default_checkpoint_steps(int steps) {
  std::vector<int> out;
  for (int s : {0, 50, 150, 300, 500, 1000, 2000}) {
    if (s < steps) out.push_back(s);
  }
  out.push_back(steps);
  return out;
}

std::vector<TokenTriplet> materialize(const corpus::Corpus& corpus,
                                      const corpus::TripletSet& triplets) {
  std::vector<TokenTriplet> out;
  out.reserve(triplets.triplets.size());
  for (const corpus::TieredTriplet& t : triplets.triplets) {
    out.push_back({corpus.passages[static_cast<size_t>(t.anchor)].tokens,
                   corpus.passages[static_cast<size_t>(t.positive)].tokens,
                   corpus.passages[static_cast<size_t>(t.negative)].tokens});
  }
  return out;
}

Model::Model(encoder::Encoder e, scoring::Scorer s, std::unordered_set<int32_t> punct)
    : enc(std::move(e)), scorer(s), punct_ids(std::move(punct)) {}

// Every variant reads the final-layernorm states; that is what makes the
// full-stream patching identity exact for all scorers. Layerwise pooling
// stays available on the encoder for ad-hoc representation experiments.
Tensor Model::states(const encoder::HiddenStack& stack) const {
  return enc.final_states(stack);
}

Var Model::states_taped(Tape&, const encoder::BoundParams&,
                        const encoder::Encoder::TapedRun& run) const {
  return run.final_states;
}

std::vector<uint8_t> Model::keep(const std::vector<int32_t>& ids,
                                 const std::vector<uint8_t>& valid) const {
  return scoring::keep_mask(scorer, ids, valid, punct_ids);
}

double model_score(const Model& model, const std::vector<int32_t>& anchor_ids,
                   const std::vector<int32_t>& candidate_ids) {
  Tensor Ha = model.states(model.enc.forward_capture(anchor_ids));
  Tensor Hp = model.states(model.enc.forward_capture(candidate_ids));
  return scoring::score(model.scorer, Ha, Hp, model.keep(anchor_ids, {}),
                        model.keep(candidate_ids, {}));
}

double model_score_states(const Model& model, const Tensor& Ha,
                          const std::vector<int32_t>& anchor_ids,
                          const std::vector<uint8_t>& anchor_valid, const Tensor& Hp,
                          const std::vector<int32_t>& candidate_ids,
                          const std::vector<uint8_t>& candidate_valid) {
  return scoring::score(model.scorer, Ha, Hp, model.keep(anchor_ids, anchor_valid),
                        model.keep(candidate_ids, candidate_valid));
}

double infonce(double s_pos, const std::vector<double>& s_negs, double tau) {
  Tape tape;
  Tensor scores({static_cast<int64_t>(s_negs.size()) + 1});
  scores.at(0) = s_pos;
  for (size_t i = 0; i < s_negs.size(); ++i) scores.at(static_cast<int64_t>(i) + 1) = s_negs[i];
  return tape.infonce(tape.constant(std::move(scores)), tau).val().item();
}

void AdamW::step(encoder::Params& params, const std::vector<Tensor>& grads) {
  if (static_cast<int>(grads.size()) != params.count()) {
    throw Error(ErrorCode::ShapeMismatch,
                "optimizer got " + std::to_string(grads.size()) + " gradients for " +
                    std::to_string(params.count()) + " parameters");
  }
  if (m.empty()) {
    for (int i = 0; i < params.count(); ++i) {
      m.emplace_back(params.value(i).shape());
      v.emplace_back(params.value(i).shape());
    }
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (int k = 0; k < params.count(); ++k) {
    Tensor& p = params.value(k);
    const Tensor& g = grads[static_cast<size_t>(k)];
    Tensor& mk = m[static_cast<size_t>(k)];
    Tensor& vk = v[static_cast<size_t>(k)];
    for (int64_t i = 0; i < p.size(); ++i) {
      p.at(i) -= lr * weight_decay * p.at(i);
      mk.at(i) = beta1 * mk.at(i) + (1.0 - beta1) * g.at(i);
      vk.at(i) = beta2 * vk.at(i) + (1.0 - beta2) * g.at(i) * g.at(i);
      p.at(i) -= lr * (mk.at(i) / bc1) / (std::sqrt(vk.at(i) / bc2) + eps);
    }
  }
}

double batch_loss(const Model& model, const std::vector<TokenTriplet>& batch, double tau) {
  validate_batch(batch);
  std::vector<Slot> a, p, n;
  for (size_t i = 0; i < batch.size(); ++i) {
    try {
      a.push_back(make_slot(model, batch[i].anchor));
      p.push_back(make_slot(model, batch[i].positive));
      n.push_back(make_slot(model, batch[i].negative));
    } catch (const Error& e) {
      throw with_triplet(e, i);
    }
  }
  Tape tape;
  return scoring_graph(model, tape, a, p, n, tau, false, nullptr, nullptr, nullptr)
      .val()
      .item();
}

std::pair<double, std::vector<Tensor>> batch_loss_and_grads(
    const Model& model, const std::vector<TokenTriplet>& batch, double tau) {
  validate_batch(batch);
  std::vector<Slot> a, p, n;
  for (size_t i = 0; i < batch.size(); ++i) {
    try {
      a.push_back(make_slot(model, batch[i].anchor));
      p.push_back(make_slot(model, batch[i].positive));
      n.push_back(make_slot(model, batch[i].negative));
    } catch (const Error& e) {
      throw with_triplet(e, i);
    }
  }

  Tape stape;
  std::vector<Var> va, vp, vn;
  Var loss = scoring_graph(model, stape, a, p, n, tau, true, &va, &vp, &vn);
  stape.backward(loss);

  const encoder::Params& params = model.enc.params();
  std::vector<Tensor> grads;
  grads.reserve(static_cast<size_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) grads.emplace_back(params.value(i).shape());

  // Seeded re-encode per passage, reduced in slot order so the accumulation
  // is deterministic regardless of any future fan-out.
  auto accumulate = [&](const Slot& slot, const Tensor* seed) {
    if (seed == nullptr) return;  // representation unused by every score
    Tape ptape;
    encoder::BoundParams bp = model.enc.bind(ptape, true);
    encoder::Encoder::TapedRun run = model.enc.forward_taped(ptape, bp, *slot.ids);
    ptape.backward_seeded(model.states_taped(ptape, bp, run), *seed);
    for (const auto& [pid, g] : ptape.param_grads()) {
      Tensor& acc = grads[static_cast<size_t>(pid)];
      kernels::axpy(1.0, g.data(), acc.data(), acc.size());
    }
  };
  for (size_t i = 0; i < batch.size(); ++i) accumulate(a[i], stape.grad(va[i]));
  for (size_t i = 0; i < batch.size(); ++i) accumulate(p[i], stape.grad(vp[i]));
  for (size_t i = 0; i < batch.size(); ++i) accumulate(n[i], stape.grad(vn[i]));

  return {loss.val().item(), std::move(grads)};
}

double train_step(Model& model, AdamW& opt, const std::vector<TokenTriplet>& batch, double tau) {
  auto [loss, grads] = batch_loss_and_grads(model, batch, tau);
  opt.step(model.enc.params(), grads);
  return loss;
}

TrainResult train_run(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc_cfg,
                      const scoring::Scorer& scorer, const std::vector<TokenTriplet>& triplets,
                      const TrainConfig& cfg, const std::string& out_dir) {
  // steps == 0 is a valid degenerate run: the init checkpoint plus an empty
  // loss curve, so downstream sweeps can anchor at the untrained model
  if (cfg.steps < 0 || cfg.batch_size < 2 || !(cfg.temperature > 0.0) || cfg.lr < 0.0 ||
      cfg.weight_decay < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "train config: need steps >= 0, batch >= 2, tau > 0");
  }
  if (triplets.empty()) {
    throw Error(ErrorCode::TooFewSamples, "train_run: no triplets to sample from");
  }
  std::vector<int> schedule =
      cfg.checkpoint_steps.empty() ? default_checkpoint_steps(cfg.steps) : cfg.checkpoint_steps;
  if (!std::is_sorted(schedule.begin(), schedule.end()) || schedule.front() < 0 ||
      schedule.back() > cfg.steps) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint_steps must be sorted within [0, steps]");
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw Error(ErrorCode::IoError, "cannot create " + out_dir + ": " + ec.message());
  }

  encoder::EncoderConfig ecfg = enc_cfg;
  ecfg.vocab = static_cast<int32_t>(corpus.vocab.size());
  std::unordered_set<int32_t> punct(corpus.vocab.punct_ids().begin(),
                                    corpus.vocab.punct_ids().end());
  Model model(encoder::Encoder(ecfg), scorer, std::move(punct));
  AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;

  Rng run_rng(cfg.seed);
  TrainResult result;
  size_t next_ckpt = 0;
  for (int s = 0; s <= cfg.steps; ++s) {
    while (next_ckpt < schedule.size() && schedule[next_ckpt] == s) {
      const std::string path =
          out_dir + "/ckpt_" + scorer.name() + "_" + std::to_string(s);
      encoder::save_checkpoint(model.enc, path);
      result.checkpoint_paths.push_back(path);
      ++next_ckpt;  // duplicates in the schedule collapse to one file
    }
    if (s == cfg.steps) break;

    Rng batch_rng = run_rng.substream(kBatchStream + static_cast<uint64_t>(s));
    std::vector<TokenTriplet> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(triplets[batch_rng.index(triplets.size())]);
    }
    result.curve.push_back({s, train_step(model, opt, batch, cfg.temperature)});
  }

  result.loss_csv_path = out_dir + "/loss_" + scorer.name() + ".csv";
  std::ostringstream csv;
  csv << "step,loss,scorer,seed\n";
  csv << std::setprecision(17);
  for (const LossPoint& pt : result.curve) {
    csv << pt.step << "," << pt.loss << "," << scorer.name() << "," << cfg.seed << "\n";
  }
  std::ofstream f(result.loss_csv_path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + result.loss_csv_path);
  f << csv.str();
  return result;
}

Tensor passage_embedding(const Model& model, const std::vector<int32_t>& ids) {
  Tensor H = model.states(model.enc.forward_capture(ids));
  std::vector<uint8_t> keep = model.keep(ids, {});
  Tensor mean({H.cols()});
  int64_t kept = 0;
  for (int64_t i = 0; i < H.rows(); ++i) {
    if (!keep[static_cast<size_t>(i)]) continue;
    kernels::axpy(1.0, H.row(i), mean.data(), H.cols());
    ++kept;
  }
  if (kept == 0) throw Error(ErrorCode::EmptyAfterMask, "no tokens left to embed");
  const double inv = 1.0 / static_cast<double>(kept);
  for (int64_t j = 0; j < mean.size(); ++j) mean.at(j) *= inv;
  return normalized_copy(mean);
}

double alignment(const std::vector<std::pair<Tensor, Tensor>>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::TooFewSamples, "alignment needs at least one pair");
  double total = 0.0;
  for (const auto& [x, y] : pairs) {
    total += sq_dist(normalized_copy(x), normalized_copy(y));
  }
  return total / static_cast<double>(pairs.size());
}

double uniformity(const std::vector<Tensor>& sample) {
  if (sample.size() < 2) {
    throw Error(ErrorCode::TooFewSamples, "uniformity needs at least two embeddings");
  }
  std::vector<Tensor> unit;
  unit.reserve(sample.size());
  for (const Tensor& x : sample) unit.push_back(normalized_copy(x));
  double total = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < unit.size(); ++i) {
    for (size_t j = i + 1; j < unit.size(); ++j) {
      total += std::exp(-2.0 * sq_dist(unit[i], unit[j]));
      ++count;
    }
  }
  return std::log(total / static_cast<double>(count));
}

GeometryReport geometry(const std::vector<std::pair<Tensor, Tensor>>& pairs) {
  std::vector<Tensor> sample;
  sample.reserve(2 * pairs.size());
  for (const auto& [x, y] : pairs) {
    sample.push_back(x);
    sample.push_back(y);
  }
  return {alignment(pairs), uniformity(sample)};
}

RankingEval ranking_from_scores(const std::vector<double>& pos_scores,
                                const std::vector<double>& neg_scores) {
  if (pos_scores.size() != neg_scores.size()) {
    throw Error(ErrorCode::ShapeMismatch, "ranking: score lists differ in length");
  }
  if (pos_scores.empty()) {
    throw Error(ErrorCode::TooFewSamples, "ranking: empty triplet set");
  }
  RankingEval r;
  r.correct.resize(pos_scores.size());
  for (size_t i = 0; i < pos_scores.size(); ++i) {
    const bool ok = pos_scores[i] > neg_scores[i];
    r.correct[i] = ok ? 1 : 0;
    if (ok) ++r.n_plus;
  }
  r.accuracy = static_cast<double>(r.n_plus) / static_cast<double>(pos_scores.size());
  r.failure_rate = 1.0 - r.accuracy;
  return r;
}

RankingEval ranking_eval(const Model& model, const std::vector<TokenTriplet>& triplets) {
  std::vector<double> pos, neg;
  pos.reserve(triplets.size());
  neg.reserve(triplets.size());
  for (const TokenTriplet& t : triplets) {
    Tensor Ha = model.states(model.enc.forward_capture(t.anchor));
    Tensor Hp = model.states(model.enc.forward_capture(t.positive));
    Tensor Hn = model.states(model.enc.forward_capture(t.negative));
    const std::vector<uint8_t> ka = model.keep(t.anchor, {});
    pos.push_back(scoring::score(model.scorer, Ha, Hp, ka, model.keep(t.positive, {})));
    neg.push_back(scoring::score(model.scorer, Ha, Hn, ka, model.keep(t.negative, {})));
  }
  return ranking_from_scores(pos, neg);
}

}  // namespace stylolab::training
