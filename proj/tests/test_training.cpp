#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "stylolab/corpus.hpp"
#include "stylolab/error.hpp"
#include "stylolab/rng.hpp"
#include "stylolab/training.hpp"

using namespace stylolab;
using namespace stylolab::training;

namespace {

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

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

Tensor unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  Tensor t({static_cast<int64_t>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t.at(static_cast<int64_t>(i)) = v[i] / n;
  return t;
}

Tensor random_unit(int64_t d, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(d));
  for (double& x : v) x = rng.normal();
  return unit(std::move(v));
}

// InfoNCE recomputed in extended precision, max-subtracted the same way.
long double infonce_oracle(double s_pos, const std::vector<double>& negs, double tau) {
  std::vector<long double> z;
  z.push_back(static_cast<long double>(s_pos) / tau);
  for (double s : negs) z.push_back(static_cast<long double>(s) / tau);
  long double mx = z[0];
  for (long double v : z) mx = std::max(mx, v);
  long double denom = 0.0L;
  for (long double v : z) denom += std::exp(v - mx);
  return std::log(denom) - (z[0] - mx);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

corpus::Corpus tiny_corpus() {
  corpus::CorpusConfig cfg;
  cfg.n_authors = 6;  // two fully disjoint sets, so tier A is feasible
  cfg.n_sets = 2;
  cfg.n_domains = 1;
  cfg.passages_per_set = 6;
  cfg.target_len = 18;
  cfg.len_slack = 6;
  cfg.require_tiers = false;
  cfg.seed = 77;
  return corpus::generate_corpus(cfg);
}

}  // namespace

TEST_CASE("infonce hand values") {
  // uniform softmax over 4 entries
  CHECK(infonce(1.5, {1.5, 1.5, 1.5}, 0.7) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  // saturated: positive 20 above the only negative
  CHECK(infonce(21.0, {1.0}, 1.0) < 1e-8);
  CHECK(infonce(21.0, {1.0}, 1.0) >= 0.0);
}

TEST_CASE("infonce matches extended-precision oracle") {
  Rng rng(404);
  for (int rep = 0; rep < 50; ++rep) {
    const size_t k = 1 + rng.index(8);
    double s_pos = rng.normal();
    std::vector<double> negs(k);
    for (double& s : negs) s = rng.normal();
    const double got = infonce(s_pos, negs, 0.1);
    const double want = static_cast<double>(infonce_oracle(s_pos, negs, 0.1));
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("infonce shift invariance") {
  Rng rng(405);
  for (int rep = 0; rep < 20; ++rep) {
    double s_pos = rng.normal();
    std::vector<double> negs = {rng.normal(), rng.normal(), rng.normal()};
    const double base = infonce(s_pos, negs, 0.25);
    const double shift = rng.uniform(-5.0, 5.0);
    std::vector<double> shifted = negs;
    for (double& s : shifted) s += shift;
    CHECK(std::abs(infonce(s_pos + shift, shifted, 0.25) - base) <= 1e-12);
  }
}

TEST_CASE("infonce rejects empty negatives and bad temperature") {
  CHECK_THROWS_WITH_AS(infonce(1.0, {}, 0.5), doctest::Contains("negative"), Error);
  CHECK_THROWS_AS(infonce(1.0, {0.5}, 0.0), Error);
  CHECK_THROWS_AS(infonce(1.0, {0.5}, -1.0), Error);
}

TEST_CASE("default checkpoint schedule clips to the budget and appends final") {
  CHECK(default_checkpoint_steps(3000) == std::vector<int>{0, 50, 150, 300, 500, 1000, 2000, 3000});
  CHECK(default_checkpoint_steps(100) == std::vector<int>{0, 50, 100});
  CHECK(default_checkpoint_steps(40) == std::vector<int>{0, 40});
  CHECK(default_checkpoint_steps(1) == std::vector<int>{0, 1});
}

TEST_CASE("adamw first step is sign-sgd up to eps and zero grads only decay") {
  encoder::Encoder enc(tiny_config(1, 3));
  encoder::Params& params = enc.params();
  const Tensor before = params.value("block1.attn.wq");

  std::vector<Tensor> grads;
  for (int i = 0; i < params.count(); ++i) grads.emplace_back(params.value(i).shape());
  Tensor& gq = grads[static_cast<size_t>(params.id("block1.attn.wq"))];
  Rng rng(9);
  for (int64_t i = 0; i < gq.size(); ++i) gq.at(i) = rng.normal();

  AdamW opt;
  opt.lr = 1e-3;
  opt.weight_decay = 0.0;
  opt.step(params, grads);

  const Tensor& after = params.value("block1.attn.wq");
  for (int64_t i = 0; i < after.size(); ++i) {
    // t=1 with zero decay: p' = p - lr * g / (|g| + eps), bias corrections cancel
    const double expect =
        before.at(i) - opt.lr * gq.at(i) / (std::sqrt(gq.at(i) * gq.at(i)) + opt.eps);
    CHECK(std::abs(after.at(i) - expect) <= 1e-15 * std::max(1.0, std::abs(expect)));
  }
  // a tensor with zero gradient and zero decay is untouched bitwise
  CHECK(tensors_equal(params.value("block1.mlp.w1"), encoder::Encoder(tiny_config(1, 3)).params().value("block1.mlp.w1")));
}

TEST_CASE("adamw weight decay shrinks parameters multiplicatively") {
  encoder::Encoder enc(tiny_config(1, 3));
  encoder::Params& params = enc.params();
  const Tensor before = params.value("tok_emb");
  std::vector<Tensor> grads;
  for (int i = 0; i < params.count(); ++i) grads.emplace_back(params.value(i).shape());

  AdamW opt;
  opt.lr = 0.5;
  opt.weight_decay = 0.1;
  opt.step(params, grads);
  const Tensor& after = params.value("tok_emb");
  for (int64_t i = 0; i < after.size(); ++i) {
    CHECK(after.at(i) == before.at(i) - 0.5 * 0.1 * before.at(i));
  }
}

TEST_CASE("adamw rejects a gradient list of the wrong length") {
  encoder::Encoder enc(tiny_config(1, 3));
  AdamW opt;
  std::vector<Tensor> grads;  // empty
  CHECK_THROWS_WITH_AS(opt.step(enc.params(), grads), doctest::Contains("gradients"), Error);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Model model(encoder::Encoder(tiny_config(2, 11)), scoring::Scorer::mean_cosine());
  std::vector<Tensor> before;
  for (int i = 0; i < model.enc.params().count(); ++i) before.push_back(model.enc.params().value(i));

  std::vector<TokenTriplet> batch = {
      {{2, 3, 4, 5}, {2, 3, 4, 5}, {7, 8, 9, 10}},
      {{5, 4, 3, 2}, {5, 4, 3, 2}, {10, 9, 8, 7}},
  };
  AdamW opt;
  opt.lr = 0.0;
  opt.weight_decay = 0.01;
  const double loss = train_step(model, opt, batch, 0.05);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);
  for (int i = 0; i < model.enc.params().count(); ++i) {
    CHECK(tensors_equal(model.enc.params().value(i), before[static_cast<size_t>(i)]));
  }
}

TEST_CASE("loss decreases monotonically on a repeated echo triplet") {
  for (scoring::Scorer scorer : {scoring::Scorer::mean_cosine(), scoring::Scorer::maxsim(),
                                 scoring::Scorer::pli(2)}) {
    CAPTURE(scorer.name());
    Model model(encoder::Encoder(tiny_config(2, 21)), scorer);
    // each positive is its anchor's text, so the positive score is pinned at
    // its maximum; learning means pushing everything else down. Two distinct
    // triplets: duplicating one would make its two identical positives'
    // gradients cancel exactly and freeze the loss at ln 2.
    std::vector<TokenTriplet> batch = {
        {{2, 3, 4, 5, 6}, {2, 3, 4, 5, 6}, {7, 8, 9, 10, 11}},
        {{6, 4, 2, 9, 3}, {6, 4, 2, 9, 3}, {11, 8, 10, 7, 2}},
    };
    AdamW opt;
    opt.lr = 1e-4;  // small: the assertion is strict per-step descent
    opt.weight_decay = 0.0;
    const double tau = 0.5;  // soft enough that nothing saturates at init
    double prev = train_step(model, opt, batch, tau);
    for (int s = 1; s < 10; ++s) {
      const double loss = train_step(model, opt, batch, tau);
      CHECK(loss < prev);
      prev = loss;
    }
  }
}

TEST_CASE("batch gradients match finite differences on sampled parameters") {
  const double tau = 0.07;
  std::vector<TokenTriplet> batch = {
      {{2, 3, 4, 5, 6}, {6, 5, 4, 3}, {7, 8, 9, 10}},
      {{4, 2, 7, 9}, {9, 7, 2, 4, 3}, {11, 10, 3, 2}},
  };
  for (scoring::Scorer scorer : {scoring::Scorer::mean_cosine(), scoring::Scorer::maxsim(),
                                 scoring::Scorer::pli(2)}) {
    CAPTURE(scorer.name());
    Model model(encoder::Encoder(tiny_config(2, 31)), scorer);
    auto [loss, grads] = batch_loss_and_grads(model, batch, tau);
    CHECK(std::isfinite(loss));
    CHECK(batch_loss(model, batch, tau) == loss);

    std::vector<std::string> names = {"tok_emb", "pos_emb", "block1.attn.wq", "block2.mlp.w2",
                                      "block1.ln2.g", "final_ln.b"};
    Rng pick(1000);
    for (const std::string& name : names) {
      const int pid = model.enc.params().id(name);
      Tensor& p = model.enc.params().value(pid);
      for (int rep = 0; rep < 3; ++rep) {
        const int64_t k = static_cast<int64_t>(pick.index(static_cast<size_t>(p.size())));
        const double keep = p.at(k);
        const double h = 1e-5;
        p.at(k) = keep + h;
        const double up = batch_loss(model, batch, tau);
        p.at(k) = keep - h;
        const double dn = batch_loss(model, batch, tau);
        p.at(k) = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double got = grads[static_cast<size_t>(pid)].at(k);
        CAPTURE(name);
        CAPTURE(k);
        CHECK(std::abs(fd - got) <= 1e-4 * std::max({1.0, std::abs(fd), std::abs(got)}));
      }
    }
  }
}

TEST_CASE("batches below two triplets are rejected") {
  Model model(encoder::Encoder(tiny_config(1, 41)), scoring::Scorer::maxsim());
  std::vector<TokenTriplet> one = {{{2, 3}, {3, 2}, {4, 5}}};
  CHECK_THROWS_WITH_AS(batch_loss(model, one, 0.05), doctest::Contains("2"), Error);
  AdamW opt;
  CHECK_THROWS_AS(train_step(model, opt, one, 0.05), Error);
}

TEST_CASE("scorer failures carry the offending triplet index") {
  // token 5 is punctuation for this model; maxsim masks punctuation, so a
  // positive made of only 5s dies with EmptyAfterMask
  Model model(encoder::Encoder(tiny_config(1, 43)), scoring::Scorer::maxsim(), {5});
  std::vector<TokenTriplet> batch = {
      {{2, 3, 4}, {4, 3, 2}, {6, 7, 8}},
      {{2, 3, 4}, {5, 5, 5}, {6, 7, 8}},
  };
  try {
    batch_loss(model, batch, 0.05);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyAfterMask);
    CHECK(std::string(e.what()).find("triplet 1") != std::string::npos);
  }
}

TEST_CASE("model construction leaves encoder parameters untouched") {
  encoder::Encoder fresh(tiny_config(3, 51));
  const int count = fresh.params().count();
  for (scoring::Scorer scorer : {scoring::Scorer::mean_cosine(), scoring::Scorer::maxsim(),
                                 scoring::Scorer::pli(2)}) {
    Model model(encoder::Encoder(tiny_config(3, 51)), scorer);
    CHECK(model.enc.params().count() == count);
    CHECK(tensors_equal(model.enc.params().value("tok_emb"), fresh.params().value("tok_emb")));
  }
  // all three variants read the same representation; only the scorer differs
  encoder::HiddenStack stack = fresh.forward_capture({2, 3, 4, 5});
  Model a(encoder::Encoder(tiny_config(3, 51)), scoring::Scorer::mean_cosine());
  Model b(encoder::Encoder(tiny_config(3, 51)), scoring::Scorer::maxsim());
  CHECK(tensors_equal(a.states(stack), b.states(stack)));
  CHECK(tensors_equal(a.states(stack), fresh.final_states(stack)));
}

TEST_CASE("model_score equals the manual states-then-score route") {
  std::vector<int32_t> a = {2, 3, 4, 5, 6, 7};
  std::vector<int32_t> c = {7, 6, 5, 4};
  for (scoring::Scorer scorer : {scoring::Scorer::mean_cosine(), scoring::Scorer::maxsim(),
                                 scoring::Scorer::pli(2)}) {
    Model model(encoder::Encoder(tiny_config(2, 61)), scorer);
    Tensor Ha = model.states(model.enc.forward_capture(a));
    Tensor Hc = model.states(model.enc.forward_capture(c));
    const double manual = scoring::score(scorer, Ha, Hc, model.keep(a, {}), model.keep(c, {}));
    CHECK(model_score(model, a, c) == manual);
    CHECK(model_score_states(model, Ha, a, {}, Hc, c, {}) == manual);
  }
}

TEST_CASE("alignment and uniformity hand values") {
  Tensor x = unit({1.0, 0.0, 0.0});
  // identical embeddings: alignment 0 and uniformity log(exp(0)) = 0
  CHECK(alignment({{x, x}, {x, x}}) == 0.0);
  CHECK(uniformity({x, x, x}) == 0.0);
  // alignment normalizes before measuring: scaled copies still coincide
  Tensor x2({3});
  for (int64_t i = 0; i < 3; ++i) x2.at(i) = 2.0 * x.at(i);
  CHECK(alignment({{x2, x}}) == 0.0);
  // antipodal unit pair: squared distance 4, u = log exp(-8) = -8
  Tensor px = unit({1.0, 0.0});
  Tensor nx = unit({-1.0, 0.0});
  CHECK(uniformity({px, nx}) == doctest::Approx(-8.0).epsilon(1e-12));
  CHECK(alignment({{px, nx}}) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("uniformity matches a brute-force pair loop") {
  Rng rng(71);
  std::vector<Tensor> sample;
  for (int i = 0; i < 100; ++i) sample.push_back(random_unit(6, rng));
  long double total = 0.0L;
  int64_t count = 0;
  for (size_t i = 0; i < sample.size(); ++i) {
    for (size_t j = i + 1; j < sample.size(); ++j) {
      long double d2 = 0.0L;
      for (int64_t k = 0; k < 6; ++k) {
        const long double d = sample[i].at(k) - sample[j].at(k);
        d2 += d * d;
      }
      total += std::exp(-2.0L * d2);
      ++count;
    }
  }
  const double want = static_cast<double>(std::log(total / count));
  CHECK(uniformity(sample) == doctest::Approx(want).epsilon(1e-12));
  CHECK(uniformity(sample) <= 0.0);
}

TEST_CASE("geometry bundles alignment with uniformity over both sides") {
  Rng rng(72);
  std::vector<std::pair<Tensor, Tensor>> pairs;
  std::vector<Tensor> flat;
  for (int i = 0; i < 8; ++i) {
    pairs.emplace_back(random_unit(5, rng), random_unit(5, rng));
    flat.push_back(pairs.back().first);
    flat.push_back(pairs.back().second);
  }
  GeometryReport g = geometry(pairs);
  CHECK(g.alignment == alignment(pairs));
  CHECK(g.uniformity == uniformity(flat));
}

TEST_CASE("geometry metrics reject degenerate inputs") {
  CHECK_THROWS_AS(alignment({}), Error);
  CHECK_THROWS_AS(uniformity({unit({1.0, 0.0})}), Error);
  Tensor zero({3});
  CHECK_THROWS_WITH_AS(uniformity({zero, unit({1.0, 0.0, 0.0})}), doctest::Contains("norm"),
                       Error);
}

TEST_CASE("passage embedding is a unit vector and masks punctuation for maxsim") {
  Model model(encoder::Encoder(tiny_config(2, 81)), scoring::Scorer::maxsim(), {5});
  std::vector<int32_t> ids = {2, 3, 5, 4, 5};
  Tensor e = model.states(model.enc.forward_capture(ids));  // representation exists
  Tensor emb = passage_embedding(model, ids);
  double n = 0.0;
  for (int64_t i = 0; i < emb.size(); ++i) n += emb.at(i) * emb.at(i);
  CHECK(std::abs(n - 1.0) <= 1e-12);
  // all punctuation -> nothing left to pool
  CHECK_THROWS_WITH_AS(passage_embedding(model, {5, 5}), doctest::Contains("left"), Error);
}

TEST_CASE("ranking hand cases and strictness") {
  RankingEval perfect = ranking_from_scores({1.0, 2.0, 0.5}, {0.0, 1.0, 0.4});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.failure_rate == 0.0);
  CHECK(perfect.n_plus == 3);
  CHECK(perfect.correct == std::vector<uint8_t>{1, 1, 1});

  // constant scorer: ties fail the strict inequality
  RankingEval ties = ranking_from_scores({0.7, 0.7}, {0.7, 0.7});
  CHECK(ties.accuracy == 0.0);
  CHECK(ties.n_plus == 0);
  CHECK(ties.failure_rate == 1.0);

  CHECK_THROWS_AS(ranking_from_scores({}, {}), Error);
  CHECK_THROWS_AS(ranking_from_scores({1.0}, {}), Error);
}

TEST_CASE("ranking on random embeddings is a coin flip") {
  // scores from iid gaussian embeddings: positive beats negative half the time
  Rng rng(90);
  const int n = 1000;
  std::vector<double> pos(n), neg(n);
  for (int i = 0; i < n; ++i) {
    Tensor a = random_unit(16, rng);
    Tensor p = random_unit(16, rng);
    Tensor m = random_unit(16, rng);
    double sp = 0.0, sn = 0.0;
    for (int64_t k = 0; k < 16; ++k) {
      sp += a.at(k) * p.at(k);
      sn += a.at(k) * m.at(k);
    }
    pos[static_cast<size_t>(i)] = sp;
    neg[static_cast<size_t>(i)] = sn;
  }
  RankingEval r = ranking_from_scores(pos, neg);
  CHECK(r.accuracy > 0.45);
  CHECK(r.accuracy < 0.55);
  CHECK(r.n_plus == static_cast<int64_t>(r.accuracy * n + 0.5));
}

TEST_CASE("ranking_eval scores triplets with the model") {
  Model model(encoder::Encoder(tiny_config(1, 95)), scoring::Scorer::mean_cosine());
  std::vector<TokenTriplet> triplets = {
      {{2, 3, 4}, {2, 3, 4}, {8, 9, 10}},  // positive is the anchor itself: cosine 1 wins
      {{5, 6, 7}, {5, 6, 7}, {9, 10, 11}},
  };
  RankingEval r = ranking_eval(model, triplets);
  CHECK(r.correct.size() == 2);
  CHECK(r.accuracy == 1.0);

  // same text on both sides scores identically: strict comparison fails
  std::vector<TokenTriplet> tied = {{{2, 3}, {2, 3}, {2, 3}}, {{4, 5}, {4, 5}, {4, 5}}};
  CHECK(ranking_eval(model, tied).accuracy == 0.0);
}

TEST_CASE("materialize copies token sequences from the corpus") {
  corpus::Corpus c = tiny_corpus();
  corpus::TripletRequest req;
  req.tier_a = 4;
  req.tier_b = 0;
  req.tier_c = 0;
  corpus::TripletSet set = corpus::build_triplets(c, req, 5);
  REQUIRE(!set.triplets.empty());
  std::vector<TokenTriplet> mat = materialize(c, set);
  REQUIRE(mat.size() == set.triplets.size());
  for (size_t i = 0; i < mat.size(); ++i) {
    CHECK(mat[i].anchor == c.passages[static_cast<size_t>(set.triplets[i].anchor)].tokens);
    CHECK(mat[i].positive == c.passages[static_cast<size_t>(set.triplets[i].positive)].tokens);
    CHECK(mat[i].negative == c.passages[static_cast<size_t>(set.triplets[i].negative)].tokens);
  }
}

TEST_CASE("train_run writes the checkpoint schedule and a reproducible loss curve") {
  corpus::Corpus c = tiny_corpus();
  corpus::TripletRequest req;
  req.tier_a = 6;
  req.tier_b = 0;
  req.tier_c = 0;
  std::vector<TokenTriplet> triplets = materialize(c, corpus::build_triplets(c, req, 5));
  REQUIRE(triplets.size() >= 2);

  encoder::EncoderConfig ecfg;
  ecfg.n_layers = 1;
  ecfg.d_model = 8;
  ecfg.heads = 2;
  ecfg.mlp_mult = 2;
  ecfg.max_len = 32;
  ecfg.seed = 7;

  TrainConfig tcfg;
  tcfg.steps = 6;
  tcfg.batch_size = 2;
  tcfg.checkpoint_steps = {0, 3, 6};
  tcfg.seed = 13;

  auto run = [&](const std::string& dir) {
    return train_run(c, ecfg, scoring::Scorer::mean_cosine(), triplets, tcfg, dir);
  };
  TrainResult r1 = run("train_smoke_a");
  CHECK(r1.curve.size() == 6);
  for (size_t s = 0; s < r1.curve.size(); ++s) {
    CHECK(r1.curve[s].step == static_cast<int>(s));
    CHECK(std::isfinite(r1.curve[s].loss));
  }
  REQUIRE(r1.checkpoint_paths.size() == 3);
  CHECK(r1.checkpoint_paths[0] == "train_smoke_a/ckpt_mean_cosine_0");
  CHECK(r1.checkpoint_paths[1] == "train_smoke_a/ckpt_mean_cosine_3");
  CHECK(r1.checkpoint_paths[2] == "train_smoke_a/ckpt_mean_cosine_6");

  // vocab comes from the corpus
  encoder::Encoder start = encoder::load_checkpoint(r1.checkpoint_paths[0]);
  CHECK(start.config().vocab == c.vocab.size());
  encoder::Encoder mid = encoder::load_checkpoint(r1.checkpoint_paths[1]);
  CHECK_FALSE(tensors_equal(start.params().value("tok_emb"), mid.params().value("tok_emb")));

  const std::string csv = slurp(r1.loss_csv_path);
  CHECK(csv.rfind("step,loss,scorer,seed\n", 0) == 0);
  CHECK(csv.find("mean_cosine,13") != std::string::npos);

  TrainResult r2 = run("train_smoke_b");
  CHECK(slurp(r2.loss_csv_path) == csv);
  for (size_t i = 0; i < r1.checkpoint_paths.size(); ++i) {
    CHECK(slurp(r2.checkpoint_paths[i]) == slurp(r1.checkpoint_paths[i]));
  }
  for (const TrainResult& r : {r1, r2}) {
    for (const std::string& p : r.checkpoint_paths) std::remove(p.c_str());
    std::remove(r.loss_csv_path.c_str());
  }
}

TEST_CASE("train_run at zero steps emits only the init checkpoint") {
  corpus::Corpus c = tiny_corpus();
  std::vector<TokenTriplet> triplets = {{{2, 3}, {3, 2}, {4, 5}}, {{4, 5}, {5, 4}, {2, 3}}};
  encoder::EncoderConfig ecfg = tiny_config(1, 7);
  ecfg.max_len = 32;

  TrainConfig cfg;
  cfg.steps = 0;
  cfg.batch_size = 2;
  cfg.seed = 9;
  const TrainResult r = train_run(c, ecfg, scoring::Scorer::mean_cosine(), triplets, cfg,
                                  "train_zero_steps");
  CHECK(r.curve.empty());
  REQUIRE(r.checkpoint_paths.size() == 1);
  CHECK(r.checkpoint_paths[0] == "train_zero_steps/ckpt_mean_cosine_0");
  CHECK(slurp(r.loss_csv_path) == "step,loss,scorer,seed\n");
  const encoder::Encoder loaded = encoder::load_checkpoint(r.checkpoint_paths[0]);
  encoder::EncoderConfig want = ecfg;
  want.vocab = c.vocab.size();
  CHECK(loaded.config().n_layers == want.n_layers);
  CHECK(loaded.config().vocab == want.vocab);
  // untrained: identical to a fresh encoder at the same seed
  const encoder::Encoder fresh(want);
  CHECK(tensors_equal(loaded.params().value("tok_emb"), fresh.params().value("tok_emb")));
  std::remove(r.checkpoint_paths[0].c_str());
  std::remove(r.loss_csv_path.c_str());
}

TEST_CASE("train_run validates its configuration") {
  corpus::Corpus c = tiny_corpus();
  std::vector<TokenTriplet> triplets = {{{2, 3}, {3, 2}, {4, 5}}, {{4, 5}, {5, 4}, {2, 3}}};
  encoder::EncoderConfig ecfg = tiny_config(1, 7);
  ecfg.max_len = 32;

  TrainConfig bad;
  bad.steps = -1;
  CHECK_THROWS_AS(train_run(c, ecfg, scoring::Scorer::maxsim(), triplets, bad, "x"), Error);
  bad = TrainConfig{};
  bad.steps = 2;
  bad.batch_size = 1;
  CHECK_THROWS_AS(train_run(c, ecfg, scoring::Scorer::maxsim(), triplets, bad, "x"), Error);
  bad = TrainConfig{};
  bad.steps = 2;
  bad.checkpoint_steps = {0, 5};  // beyond the budget
  CHECK_THROWS_WITH_AS(train_run(c, ecfg, scoring::Scorer::maxsim(), triplets, bad, "x"),
                       doctest::Contains("checkpoint"), Error);
  bad = TrainConfig{};
  bad.steps = 2;
  CHECK_THROWS_AS(train_run(c, ecfg, scoring::Scorer::maxsim(), {}, bad, "x"), Error);
}
