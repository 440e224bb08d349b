#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "stylolab/corpus.hpp"
#include "stylolab/error.hpp"
#include "stylolab/patching.hpp"
#include "stylolab/rng.hpp"

using namespace stylolab;
using namespace stylolab::patching;
using training::Model;
using training::TokenTriplet;

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

PatchRun run_with(double clean, double corrupt, double patched, double mirror = 0.0) {
  PatchRun r;
  r.s_clean = clean;
  r.s_corrupt = corrupt;
  r.s_patched = patched;
  r.s_patched_mirror = mirror;
  return r;
}

PatchGrid grid_of(int n_layers, std::vector<PatchRun> runs) {
  PatchGrid g;
  g.n_layers = n_layers;
  g.runs = std::move(runs);
  g.scorer = "synthetic";
  g.strategy = "synthetic";
  return g;
}

// three echo triplets with equal-length positive and negative sides, so a
// random-init model ranks all of them correctly and matched-length patching
// is exercised
std::vector<TokenTriplet> echo_triplets() {
  return {
      {{2, 3, 4, 5, 6}, {2, 3, 4, 5, 6}, {7, 8, 9, 10, 11}},
      {{6, 4, 2, 9}, {6, 4, 2, 9}, {11, 8, 10, 7}},
      {{3, 5, 7, 9, 11, 2}, {3, 5, 7, 9, 11, 2}, {4, 6, 8, 10, 2, 11}},
  };
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("percent recovery hand values") {
  CHECK(percent_recovery(run_with(0.8, 0.2, 0.5)).value == doctest::Approx(50.0).epsilon(1e-12));
  CHECK_FALSE(percent_recovery(run_with(0.8, 0.2, 0.5)).flagged);
  CHECK(percent_recovery(run_with(0.8, 0.2, 0.8)).value == 100.0);
  CHECK(percent_recovery(run_with(0.8, 0.2, 0.2)).value == 0.0);
  // unbounded by design: overshoot and undershoot both legal
  CHECK(percent_recovery(run_with(0.8, 0.2, 1.0)).value > 100.0);
  CHECK(percent_recovery(run_with(0.8, 0.2, 0.0)).value < 0.0);
  // inverted pair (clean below corrupt) still interpolates linearly
  CHECK(percent_recovery(run_with(0.2, 0.8, 0.5)).value == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("percent recovery flags collapsing denominators") {
  PercentOutcome tight = percent_recovery(run_with(0.5, 0.5 - 1e-12, 1.0));
  CHECK(tight.flagged);
  PercentOutcome at_eps = percent_recovery(run_with(0.5, 0.5 - 1e-9, 1.0));
  CHECK_FALSE(at_eps.flagged);  // exactly eps_den is allowed through
  PercentOutcome custom = percent_recovery(run_with(0.5, 0.4, 1.0), 0.2);
  CHECK(custom.flagged);
}

TEST_CASE("percent curve averages per layer and excludes flagged runs") {
  std::vector<PatchRun> runs;
  // layer 0: 50 and 150 -> mean 100; layer 1: one good (25) and one flagged
  PatchRun a = run_with(1.0, 0.0, 0.5);
  a.layer = 0;
  PatchRun b = run_with(1.0, 0.0, 1.5);
  b.layer = 0;
  PatchRun c = run_with(2.0, 0.0, 0.5);
  c.layer = 1;
  PatchRun d = run_with(0.3, 0.3, 9.9);
  d.layer = 1;
  runs = {a, b, c, d};
  RecoveryCurve cu = percent_curve(grid_of(1, runs));
  CHECK(cu.metric == Metric::Percent);
  REQUIRE(cu.values.size() == 2);
  CHECK(cu.values[0] == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(cu.values[1] == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(cu.n_effective == std::vector<int64_t>{2, 1});
  CHECK(cu.flagged == std::vector<int64_t>{0, 1});

  // a layer where every run is flagged has no average at all
  PatchRun e = run_with(0.7, 0.7, 0.1);
  e.layer = 0;
  RecoveryCurve dead = percent_curve(grid_of(0, {e}));
  CHECK(std::isnan(dead.values[0]));
  CHECK(dead.n_effective[0] == 0);
  CHECK(dead.flagged[0] == 1);

  CHECK_THROWS_AS(percent_curve(grid_of(1, {})), Error);
}

TEST_CASE("rank recovery hand values and monte carlo") {
  PatchRun win = run_with(1.0, 0.0, 0.9, 0.1);
  PatchRun lose = run_with(1.0, 0.0, 0.1, 0.9);
  CHECK(rank_recovery(grid_of(0, {win, win, win})).values[0] == 1.0);
  CHECK(rank_recovery(grid_of(0, {win, lose})).values[0] == 0.5);
  CHECK(rank_recovery(grid_of(0, {lose, lose})).values[0] == 0.0);
  // ties fail the strict comparison
  PatchRun tie = run_with(1.0, 0.0, 0.5, 0.5);
  CHECK(rank_recovery(grid_of(0, {tie})).values[0] == 0.0);
  CHECK_THROWS_AS(rank_recovery(grid_of(0, {})), Error);

  Rng rng(314);
  std::vector<PatchRun> coin;
  for (int i = 0; i < 1000; ++i) {
    coin.push_back(run_with(1.0, 0.0, rng.normal(), rng.normal()));
  }
  const double acc = rank_recovery(grid_of(0, coin)).values[0];
  CHECK(acc > 0.45);
  CHECK(acc < 0.55);
}

TEST_CASE("score sensitivity per layer") {
  PatchRun still = run_with(1.0, 0.4, 0.4);
  CHECK(score_sensitivity(grid_of(0, {still, still})).values[0] == 0.0);

  PatchRun shifted = run_with(1.0, 0.4, 0.4 + 0.25);
  shifted.layer = 1;
  PatchRun base = run_with(1.0, 0.4, 0.4);
  base.layer = 0;
  RecoveryCurve c = score_sensitivity(grid_of(1, {base, shifted}));
  CHECK(c.values[0] == 0.0);
  CHECK(c.values[1] == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(271);
  std::vector<PatchRun> runs;
  long double want = 0.0L;
  for (int i = 0; i < 200; ++i) {
    PatchRun r = run_with(rng.normal(), rng.normal(), rng.normal());
    want += std::abs(static_cast<long double>(r.s_patched) - r.s_corrupt);
    runs.push_back(r);
  }
  const double got = score_sensitivity(grid_of(0, runs)).values[0];
  CHECK(got == doctest::Approx(static_cast<double>(want / 200.0L)).epsilon(1e-12));
  CHECK(got >= 0.0);
}

TEST_CASE("consolidation point scans for the first strict exceedance") {
  RecoveryCurve c;
  c.metric = Metric::Rank;
  c.values = {0.3, 0.4, 0.6, 0.8, 0.9};
  CHECK(consolidation_point(c) == 3);
  c.values = {0.9, 0.2, 0.2};
  CHECK(consolidation_point(c) == 0);
  c.values = {0.1, 0.5, 0.75};  // 0.75 does not strictly exceed 0.75
  CHECK_FALSE(consolidation_point(c).has_value());
  c.values = {0.76};
  CHECK(consolidation_point(c, 0.75) == 0);
  CHECK_FALSE(consolidation_point(c, 0.9).has_value());

  c.metric = Metric::Percent;
  CHECK_THROWS_WITH_AS(consolidation_point(c), doctest::Contains("rank"), Error);
}

TEST_CASE("full-stream patching at matched lengths recovers the clean score everywhere") {
  for (scoring::Scorer scorer : {scoring::Scorer::mean_cosine(), scoring::Scorer::maxsim(),
                                 scoring::Scorer::pli(2)}) {
    CAPTURE(scorer.name());
    Model model(encoder::Encoder(tiny_config(2, 7)), scorer);
    std::vector<TokenTriplet> kept = filter_correct(model, echo_triplets());
    REQUIRE(kept.size() == 3);  // positive == anchor text ranks correctly at any init

    PatchGrid grid =
        run_patch_grid(model, kept, encoder::PatchStrategy::full_stream(), 42, "A");
    CHECK(grid.n_layers == 2);
    CHECK(grid.scorer == scorer.name());
    CHECK(grid.strategy == "full_stream");
    CHECK(grid.tier == "A");
    CHECK(grid.checkpoint_step == 42);
    REQUIRE(grid.runs.size() == 9);  // 3 triplets x 3 layers

    for (size_t i = 0; i < grid.runs.size(); ++i) {
      const PatchRun& r = grid.runs[i];
      CHECK(r.triplet == static_cast<int>(i / 3));
      CHECK(r.layer == static_cast<int>(i % 3));
      // wholesale replacement of a same-length stream is exact
      CHECK(r.s_patched == r.s_clean);
      CHECK(r.s_patched_mirror == r.s_corrupt);
      CHECK(r.s_clean > r.s_corrupt);
    }

    RecoveryCurve pct = percent_curve(grid);
    RecoveryCurve rank = rank_recovery(grid);
    RecoveryCurve sens = score_sensitivity(grid);
    for (int l = 0; l <= 2; ++l) {
      CHECK(pct.values[static_cast<size_t>(l)] == 100.0);
      CHECK(pct.flagged[static_cast<size_t>(l)] == 0);
      CHECK(rank.values[static_cast<size_t>(l)] == 1.0);
      CHECK(sens.values[static_cast<size_t>(l)] > 0.0);
    }
    // percent at exactly 100 for every triplet forces rank 1.0 (extremes agree)
    CHECK(consolidation_point(rank) == 0);
  }
}

TEST_CASE("layer-delta at layer zero is a no-op patch") {
  Model model(encoder::Encoder(tiny_config(2, 9)), scoring::Scorer::mean_cosine());
  std::vector<TokenTriplet> kept = filter_correct(model, echo_triplets());
  REQUIRE(!kept.empty());
  PatchGrid grid = run_patch_grid(model, kept, encoder::PatchStrategy::layer_delta());
  for (const PatchRun& r : grid.runs) {
    if (r.layer != 0) continue;
    CHECK(r.s_patched == r.s_corrupt);
    CHECK(r.s_patched_mirror == r.s_clean);
  }
  RecoveryCurve pct = percent_curve(grid);
  RecoveryCurve rank = rank_recovery(grid);
  // unpatched corrupt scores: zero recovery and fully inverted ranking
  CHECK(pct.values[0] == 0.0);
  CHECK(rank.values[0] == 0.0);
}

TEST_CASE("grid matches a manual three-pass computation") {
  Model model(encoder::Encoder(tiny_config(2, 13)), scoring::Scorer::maxsim());
  std::vector<TokenTriplet> trips = {{{2, 3, 4, 5}, {6, 7, 8, 9}, {9, 8, 7, 6}}};
  const encoder::PatchStrategy strategy = encoder::PatchStrategy::layer_delta();
  PatchGrid grid = run_patch_grid(model, trips, strategy);
  REQUIRE(grid.runs.size() == 3);

  const TokenTriplet& t = trips[0];
  Tensor Ha = model.states(model.enc.forward_capture(t.anchor));
  encoder::HiddenStack pos = model.enc.forward_capture(t.positive);
  encoder::HiddenStack neg = model.enc.forward_capture(t.negative);
  const double s_clean = training::model_score_states(
      model, Ha, t.anchor, {}, model.states(pos), t.positive, {});
  const double s_corrupt = training::model_score_states(
      model, Ha, t.anchor, {}, model.states(neg), t.negative, {});

  for (int l = 0; l <= 2; ++l) {
    const PatchRun& r = grid.runs[static_cast<size_t>(l)];
    CHECK(r.s_clean == s_clean);
    CHECK(r.s_corrupt == s_corrupt);

    auto patched = model.enc.forward_patched(t.negative, pos, l, strategy);
    const double manual = training::model_score_states(
        model, Ha, t.anchor, {}, model.states(patched.first), t.negative,
        patched.first.valid);
    CHECK(r.s_patched == manual);

    auto mirrored = model.enc.forward_patched(t.positive, neg, l, strategy);
    const double manual_mirror = training::model_score_states(
        model, Ha, t.anchor, {}, model.states(mirrored.first), t.positive,
        mirrored.first.valid);
    CHECK(r.s_patched_mirror == manual_mirror);
  }
  // the two directions genuinely differ away from layer 0
  CHECK(grid.runs[1].s_patched != grid.runs[1].s_patched_mirror);
}

TEST_CASE("zero-layer encoder yields a single-layer grid") {
  Model model(encoder::Encoder(tiny_config(0, 15)), scoring::Scorer::mean_cosine());
  std::vector<TokenTriplet> trips = {{{2, 3, 4}, {2, 3, 4}, {5, 6, 7}}};
  PatchGrid grid = run_patch_grid(model, trips, encoder::PatchStrategy::full_stream());
  CHECK(grid.n_layers == 0);
  REQUIRE(grid.runs.size() == 1);
  CHECK(grid.runs[0].layer == 0);
  CHECK(grid.runs[0].s_patched == grid.runs[0].s_clean);
}

TEST_CASE("filter_correct keeps exactly the correctly ranked triplets") {
  Model model(encoder::Encoder(tiny_config(1, 17)), scoring::Scorer::mean_cosine());
  TokenTriplet good = {{2, 3, 4, 5}, {2, 3, 4, 5}, {7, 8, 9, 10}};  // echo wins
  TokenTriplet bad = {{7, 8, 9, 10}, {2, 3, 4, 5}, {7, 8, 9, 10}};  // negative == anchor
  std::vector<TokenTriplet> kept = filter_correct(model, {good, bad, good});
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].anchor == good.anchor);
  CHECK(kept[1].anchor == good.anchor);
}

TEST_CASE("grid failures carry triplet and layer context") {
  // negative: three punctuation tokens then real ones. The plain corrupt pass
  // keeps the real tail, but patch alignment truncates validity to the
  // positive's three rows, leaving only masked punctuation -> EmptyAfterMask
  // at the patched pass, attributed to (triplet, layer).
  Model model(encoder::Encoder(tiny_config(1, 19)), scoring::Scorer::maxsim(), {5});
  std::vector<TokenTriplet> trips = {
      {{2, 3, 4}, {6, 7, 8}, {5, 5, 5, 6, 7, 8, 9, 10}},
  };
  try {
    run_patch_grid(model, trips, encoder::PatchStrategy::full_stream());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyAfterMask);
    CHECK(std::string(e.what()).find("triplet 0, layer 0") != std::string::npos);
  }
}

TEST_CASE("dynamics sweep runs one percent curve per checkpoint") {
  corpus::CorpusConfig ccfg;
  ccfg.n_authors = 6;
  ccfg.n_sets = 2;
  ccfg.n_domains = 1;
  ccfg.passages_per_set = 6;
  ccfg.target_len = 18;
  ccfg.len_slack = 6;
  ccfg.require_tiers = false;
  ccfg.seed = 77;
  corpus::Corpus c = corpus::generate_corpus(ccfg);
  corpus::TripletRequest req;
  req.tier_a = 4;
  req.tier_b = 0;
  req.tier_c = 0;
  std::vector<TokenTriplet> triplets =
      training::materialize(c, corpus::build_triplets(c, req, 5));
  REQUIRE(triplets.size() >= 2);

  encoder::EncoderConfig ecfg = tiny_config(1, 7);
  ecfg.max_len = 32;
  training::TrainConfig tcfg;
  tcfg.steps = 4;
  tcfg.batch_size = 2;
  tcfg.checkpoint_steps = {0, 4};
  tcfg.seed = 3;
  training::TrainResult tr =
      train_run(c, ecfg, scoring::Scorer::mean_cosine(), triplets, tcfg, "dyn_sweep_out");

  std::unordered_set<int32_t> punct(c.vocab.punct_ids().begin(), c.vocab.punct_ids().end());
  std::vector<CheckpointRef> refs = {{0, tr.checkpoint_paths[0]}, {4, tr.checkpoint_paths[1]}};
  std::vector<RecoveryCurve> curves = dynamics_sweep(
      refs, scoring::Scorer::mean_cosine(), triplets, encoder::PatchStrategy::full_stream(),
      punct);
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].checkpoint_step == 0);
  CHECK(curves[1].checkpoint_step == 4);
  CHECK(curves[0].metric == Metric::Percent);
  CHECK(curves[0].values.size() == 2);
  // corpus triplet lengths differ within the +-5 budget, so full-stream is
  // only near-identity here; check bookkeeping, not the exact value
  for (const RecoveryCurve& cu : curves) {
    for (size_t l = 0; l < cu.values.size(); ++l) {
      CHECK(cu.n_effective[l] + cu.flagged[l] == static_cast<int64_t>(triplets.size()));
      if (cu.n_effective[l] > 0) CHECK(std::isfinite(cu.values[l]));
    }
  }

  // missing checkpoint names the step
  std::vector<CheckpointRef> missing = {{9, "dyn_sweep_out/ckpt_mean_cosine_9"}};
  CHECK_THROWS_WITH_AS(dynamics_sweep(missing, scoring::Scorer::mean_cosine(), triplets,
                                      encoder::PatchStrategy::full_stream(), punct),
                       doctest::Contains("step 9"), Error);

  // architecture drift across checkpoints is rejected
  encoder::EncoderConfig other = ecfg;
  other.d_model = 16;
  other.heads = 4;
  other.vocab = c.vocab.size();
  encoder::save_checkpoint(encoder::Encoder(other), "dyn_sweep_out/ckpt_other");
  std::vector<CheckpointRef> mixed = {{0, tr.checkpoint_paths[0]},
                                      {1, "dyn_sweep_out/ckpt_other"}};
  CHECK_THROWS_WITH_AS(dynamics_sweep(mixed, scoring::Scorer::mean_cosine(), triplets,
                                      encoder::PatchStrategy::full_stream(), punct),
                       doctest::Contains("architecture"), Error);

  for (const std::string& p : tr.checkpoint_paths) std::remove(p.c_str());
  std::remove(tr.loss_csv_path.c_str());
  std::remove("dyn_sweep_out/ckpt_other");
}

TEST_CASE("curves csv is versioned, complete, and reproducible") {
  RecoveryCurve a;
  a.metric = Metric::Percent;
  a.values = {100.0, 37.5};
  a.n_effective = {3, 2};
  a.flagged = {0, 1};
  a.scorer = "maxsim";
  a.strategy = "layer_delta";
  a.tier = "A";
  a.checkpoint_step = 500;
  RecoveryCurve b = a;
  b.metric = Metric::Rank;
  b.values = {1.0, 2.0 / 3.0};
  b.flagged = {0, 0};

  write_curves_csv({a, b}, "curves_test.csv");
  const std::string text = slurp("curves_test.csv");
  CHECK(text.rfind("# stylolab recovery curves v1", 0) == 0);
  CHECK(text.find("scorer,checkpoint,tier,strategy,layer,metric,value,n_effective,flags\n") !=
        std::string::npos);
  CHECK(text.find("maxsim,500,A,layer_delta,0,percent,100,3,0\n") != std::string::npos);
  CHECK(text.find("maxsim,500,A,layer_delta,1,percent,37.5,2,1\n") != std::string::npos);
  CHECK(text.find(",rank,1,") != std::string::npos);
  // four data rows: two curves x two layers
  size_t rows = 0;
  for (char ch : text) rows += ch == '\n' ? 1 : 0;
  CHECK(rows == 6);  // comment + header + 4 data lines

  write_curves_csv({a, b}, "curves_test_again.csv");
  CHECK(slurp("curves_test_again.csv") == text);
  std::remove("curves_test.csv");
  std::remove("curves_test_again.csv");

  CHECK_THROWS_AS(write_curves_csv({a}, "no_such_dir/curves.csv"), Error);
}
