#include "stylolab/patching.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "stylolab/error.hpp"

namespace stylolab::patching {

namespace {

Error with_cell(const Error& e, int triplet, int layer) {
  std::string msg = e.what();
  const std::string prefix = std::string(error_code_name(e.code())) + ": ";
  if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
  msg += " (triplet " + std::to_string(triplet);
  if (layer >= 0) msg += ", layer " + std::to_string(layer);
  return Error(e.code(), msg + ")");
}

// Representation plus everything needed to score against it.
struct Side {
  encoder::HiddenStack stack;
  Tensor rep;
};

Side capture_side(const training::Model& model, const std::vector<int32_t>& ids) {
  Side s;
  s.stack = model.enc.forward_capture(ids);
  s.rep = model.states(s.stack);
  return s;
}

double patched_score(const training::Model& model, const Tensor& Ha,
                     const std::vector<int32_t>& anchor_ids,
                     const std::vector<int32_t>& corrupt_ids,
                     const encoder::HiddenStack& clean, int layer,
                     const encoder::PatchStrategy& strategy, int align_budget) {
  auto [stack, fin] =
      model.enc.forward_patched(corrupt_ids, clean, layer, strategy, align_budget);
  (void)fin;  // Model::states recomputes the same final-norm states from the stack
  Tensor Hp = model.states(stack);
  return training::model_score_states(model, Ha, anchor_ids, {}, Hp, corrupt_ids, stack.valid);
}

RecoveryCurve curve_shell(const PatchGrid& grid, Metric metric) {
  RecoveryCurve c;
  c.metric = metric;
  const size_t n = static_cast<size_t>(grid.n_layers) + 1;
  c.values.assign(n, std::numeric_limits<double>::quiet_NaN());
  c.n_effective.assign(n, 0);
  c.flagged.assign(n, 0);
  c.scorer = grid.scorer;
  c.strategy = grid.strategy;
  c.tier = grid.tier;
  c.checkpoint_step = grid.checkpoint_step;
  return c;
}

void require_runs(const PatchGrid& grid, const char* op) {
  if (grid.runs.empty()) {
    throw Error(ErrorCode::TooFewSamples, std::string(op) + ": grid holds no runs");
  }
}

}  // namespace

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Percent: return "percent";
    case Metric::Rank: return "rank";
    case Metric::Sensitivity: return "sensitivity";
  }
  return "?";
}

std::vector<training::TokenTriplet> filter_correct(
    const training::Model& model, const std::vector<training::TokenTriplet>& triplets) {
  training::RankingEval eval = training::ranking_eval(model, triplets);
  std::vector<training::TokenTriplet> kept;
  kept.reserve(static_cast<size_t>(eval.n_plus));
  for (size_t i = 0; i < triplets.size(); ++i) {
    if (eval.correct[i]) kept.push_back(triplets[i]);
  }
  return kept;
}

PatchGrid run_patch_grid(const training::Model& model,
                         const std::vector<training::TokenTriplet>& triplets,
                         const encoder::PatchStrategy& strategy, int checkpoint_step,
                         const std::string& tier, int align_budget) {
  PatchGrid grid;
  grid.n_layers = model.enc.config().n_layers;
  grid.scorer = model.scorer.name();
  grid.strategy = strategy.name();
  grid.tier = tier;
  grid.checkpoint_step = checkpoint_step;
  grid.runs.reserve(triplets.size() * (static_cast<size_t>(grid.n_layers) + 1));

  for (size_t t = 0; t < triplets.size(); ++t) {
    const training::TokenTriplet& trip = triplets[t];
    Tensor Ha;
    Side pos, neg;
    double s_clean = 0.0;
    double s_corrupt = 0.0;
    try {
      Ha = model.states(model.enc.forward_capture(trip.anchor));
      pos = capture_side(model, trip.positive);
      neg = capture_side(model, trip.negative);
      s_clean = training::model_score_states(model, Ha, trip.anchor, {}, pos.rep,
                                             trip.positive, {});
      s_corrupt = training::model_score_states(model, Ha, trip.anchor, {}, neg.rep,
                                               trip.negative, {});
    } catch (const Error& e) {
      throw with_cell(e, static_cast<int>(t), -1);
    }
    for (int l = 0; l <= grid.n_layers; ++l) {
      PatchRun run;
      run.triplet = static_cast<int>(t);
      run.layer = l;
      run.s_clean = s_clean;
      run.s_corrupt = s_corrupt;
      try {
        run.s_patched = patched_score(model, Ha, trip.anchor, trip.negative, pos.stack, l,
                                      strategy, align_budget);
        run.s_patched_mirror = patched_score(model, Ha, trip.anchor, trip.positive, neg.stack,
                                             l, strategy, align_budget);
      } catch (const Error& e) {
        throw with_cell(e, static_cast<int>(t), l);
      }
      grid.runs.push_back(run);
    }
  }
  return grid;
}

PercentOutcome percent_recovery(const PatchRun& run, double eps_den) {
  const double den = run.s_clean - run.s_corrupt;
  if (std::abs(den) < eps_den) return {0.0, true};
  return {(run.s_patched - run.s_corrupt) / den * 100.0, false};
}

RecoveryCurve percent_curve(const PatchGrid& grid, double eps_den) {
  require_runs(grid, "percent_curve");
  RecoveryCurve c = curve_shell(grid, Metric::Percent);
  std::vector<double> total(c.values.size(), 0.0);
  for (const PatchRun& run : grid.runs) {
    const size_t l = static_cast<size_t>(run.layer);
    PercentOutcome out = percent_recovery(run, eps_den);
    if (out.flagged) {
      ++c.flagged[l];
      continue;
    }
    total[l] += out.value;
    ++c.n_effective[l];
  }
  for (size_t l = 0; l < c.values.size(); ++l) {
    if (c.n_effective[l] > 0) c.values[l] = total[l] / static_cast<double>(c.n_effective[l]);
  }
  return c;
}

RecoveryCurve rank_recovery(const PatchGrid& grid) {
  require_runs(grid, "rank_recovery");
  RecoveryCurve c = curve_shell(grid, Metric::Rank);
  std::vector<int64_t> wins(c.values.size(), 0);
  for (const PatchRun& run : grid.runs) {
    const size_t l = static_cast<size_t>(run.layer);
    if (run.s_patched > run.s_patched_mirror) ++wins[l];
    ++c.n_effective[l];
  }
  for (size_t l = 0; l < c.values.size(); ++l) {
    if (c.n_effective[l] > 0) {
      c.values[l] = static_cast<double>(wins[l]) / static_cast<double>(c.n_effective[l]);
    }
  }
  return c;
}

RecoveryCurve score_sensitivity(const PatchGrid& grid) {
  require_runs(grid, "score_sensitivity");
  RecoveryCurve c = curve_shell(grid, Metric::Sensitivity);
  std::vector<double> total(c.values.size(), 0.0);
  for (const PatchRun& run : grid.runs) {
    const size_t l = static_cast<size_t>(run.layer);
    total[l] += std::abs(run.s_patched - run.s_corrupt);
    ++c.n_effective[l];
  }
  for (size_t l = 0; l < c.values.size(); ++l) {
    if (c.n_effective[l] > 0) c.values[l] = total[l] / static_cast<double>(c.n_effective[l]);
  }
  return c;
}

std::optional<int> consolidation_point(const RecoveryCurve& rank_curve, double threshold) {
  if (rank_curve.metric != Metric::Rank) {
    throw Error(ErrorCode::InvalidConfig,
                "consolidation_point: needs a rank curve, got " +
                    std::string(metric_name(rank_curve.metric)));
  }
  for (size_t l = 0; l < rank_curve.values.size(); ++l) {
    if (rank_curve.values[l] > threshold) return static_cast<int>(l);
  }
  return std::nullopt;
}

std::vector<RecoveryCurve> dynamics_sweep(const std::vector<CheckpointRef>& checkpoints,
                                          const scoring::Scorer& scorer,
                                          const std::vector<training::TokenTriplet>& triplets,
                                          const encoder::PatchStrategy& strategy,
                                          const std::unordered_set<int32_t>& punct_ids,
                                          int align_budget) {
  std::vector<RecoveryCurve> curves;
  curves.reserve(checkpoints.size());
  bool have_first = false;
  encoder::EncoderConfig first{};
  for (const CheckpointRef& ref : checkpoints) {
    encoder::Encoder enc = [&] {
      try {
        return encoder::load_checkpoint(ref.path);
      } catch (const Error& e) {
        throw Error(e.code(), std::string(e.what()) + " (checkpoint step " +
                                  std::to_string(ref.step) + ")");
      }
    }();
    const encoder::EncoderConfig& c = enc.config();
    if (!have_first) {
      first = c;
      have_first = true;
    } else if (c.n_layers != first.n_layers || c.d_model != first.d_model ||
               c.heads != first.heads || c.mlp_mult != first.mlp_mult ||
               c.max_len != first.max_len || c.vocab != first.vocab) {
      throw Error(ErrorCode::InvalidConfig,
                  "dynamics_sweep: checkpoint step " + std::to_string(ref.step) +
                      " has a different encoder architecture");
    }
    training::Model model(std::move(enc), scorer, punct_ids);
    PatchGrid grid = run_patch_grid(model, triplets, strategy, ref.step, "all", align_budget);
    curves.push_back(percent_curve(grid));
  }
  return curves;
}

std::string curves_csv(const std::vector<RecoveryCurve>& curves) {
  std::ostringstream out;
  out << "# stylolab recovery curves v1; percent = per-triplet recovery then averaged, "
         "DenominatorCollapse runs counted in flags and excluded\n";
  out << "scorer,checkpoint,tier,strategy,layer,metric,value,n_effective,flags\n";
  out << std::setprecision(17);
  for (const RecoveryCurve& c : curves) {
    for (size_t l = 0; l < c.values.size(); ++l) {
      out << c.scorer << "," << c.checkpoint_step << "," << c.tier << "," << c.strategy << ","
          << l << "," << metric_name(c.metric) << "," << c.values[l] << ","
          << c.n_effective[l] << "," << c.flagged[l] << "\n";
    }
  }
  return out.str();
}

void write_curves_csv(const std::vector<RecoveryCurve>& curves, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  f << curves_csv(curves);
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace stylolab::patching
