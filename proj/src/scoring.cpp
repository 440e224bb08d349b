#include "stylolab/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stylolab/error.hpp"
#include "stylolab/kernels.hpp"
#include "stylolab/rng.hpp"

namespace stylolab::scoring {

namespace {

std::vector<int64_t> kept_rows(const std::vector<uint8_t>& keep, int64_t m, const char* side) {
  std::vector<int64_t> rows;
  if (keep.empty()) {
    rows.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) rows[static_cast<size_t>(i)] = i;
    return rows;
  }
  if (static_cast<int64_t>(keep.size()) != m) {
    throw Error(ErrorCode::ShapeMismatch, std::string("keep mask length does not match ") + side +
                                              " rows (" + std::to_string(keep.size()) + " vs " +
                                              std::to_string(m) + ")");
  }
  for (int64_t i = 0; i < m; ++i)
    if (keep[static_cast<size_t>(i)]) rows.push_back(i);
  if (rows.empty()) {
    throw Error(ErrorCode::EmptyAfterMask, std::string(side) + " side has no tokens left");
  }
  return rows;
}

// --- analytic building blocks, each mirroring one tape op ---

Tensor take_rows(const Tensor& H, const std::vector<int64_t>& rows) {
  Tensor out({static_cast<int64_t>(rows.size()), H.cols()});
  for (size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(out.row(static_cast<int64_t>(i)), H.row(rows[i]),
                sizeof(double) * static_cast<size_t>(H.cols()));
  }
  return out;
}

Tensor mean_of_rows(const Tensor& A) {
  Tensor out({A.cols()});
  const double inv = 1.0 / static_cast<double>(A.rows());
  for (int64_t i = 0; i < A.rows(); ++i) kernels::axpy(1.0, A.row(i), out.data(), A.cols());
  for (int64_t j = 0; j < A.cols(); ++j) out.at(j) *= inv;
  return out;
}

Tensor patch_means(const Tensor& A, int64_t patch_n) {
  const int64_t m = A.rows();
  const int64_t p = (m + patch_n - 1) / patch_n;
  Tensor out({p, A.cols()});
  for (int64_t i = 0; i < p; ++i) {
    const int64_t lo = i * patch_n;
    const int64_t hi = std::min(m, lo + patch_n);
    for (int64_t r = lo; r < hi; ++r) kernels::axpy(1.0, A.row(r), out.row(i), A.cols());
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (int64_t j = 0; j < A.cols(); ++j) out.at(i, j) *= inv;
  }
  return out;
}

Tensor normalized_rows(const Tensor& A, std::vector<double>& norms) {
  Tensor out(A.shape());
  norms.resize(static_cast<size_t>(A.rows()));
  for (int64_t i = 0; i < A.rows(); ++i) {
    const double norm = kernels::l2_norm(A.row(i), A.cols());
    if (norm <= kernels::kEpsNorm) {
      throw Error(ErrorCode::DegenerateNorm,
                  "normalize_rows: row " + std::to_string(i) + " norm below 1e-12");
    }
    norms[static_cast<size_t>(i)] = norm;
    const double inv = 1.0 / norm;
    for (int64_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) * inv;
  }
  return out;
}

// adjoint of row normalization: dA_i = (g_i - (g_i . y_i) y_i) / norm_i
Tensor normalize_backward(const Tensor& g, const Tensor& y, const std::vector<double>& norms) {
  Tensor out(g.shape());
  for (int64_t i = 0; i < g.rows(); ++i) {
    const double* gi = g.row(i);
    const double* yi = y.row(i);
    const double inner = kernels::dot(gi, yi, g.cols());
    const double inv = 1.0 / norms[static_cast<size_t>(i)];
    double* oi = out.row(i);
    for (int64_t j = 0; j < g.cols(); ++j) oi[j] += (gi[j] - inner * yi[j]) * inv;
  }
  return out;
}

void scatter_rows(const Tensor& g, const std::vector<int64_t>& rows, Tensor& out) {
  for (size_t i = 0; i < rows.size(); ++i) {
    kernels::axpy(1.0, g.row(static_cast<int64_t>(i)), out.row(rows[i]), g.cols());
  }
}

std::vector<int64_t> row_argmax(const Tensor& C) {
  std::vector<int64_t> w(static_cast<size_t>(C.rows()));
  for (int64_t i = 0; i < C.rows(); ++i) {
    int64_t best = 0;
    double bv = C.at(i, 0);
    for (int64_t j = 1; j < C.cols(); ++j) {
      if (C.at(i, j) > bv) {  // strict: ties keep the lowest index
        bv = C.at(i, j);
        best = j;
      }
    }
    w[static_cast<size_t>(i)] = best;
  }
  return w;
}

}  // namespace

std::string Scorer::name() const {
  switch (kind) {
    case ScorerKind::MeanCosine: return "mean_cosine";
    case ScorerKind::MaxSim: return "maxsim";
    case ScorerKind::Pli: return "pli";
  }
  return "?";
}

std::vector<uint8_t> keep_mask(const Scorer& scorer, const std::vector<int32_t>& ids,
                               const std::vector<uint8_t>& valid,
                               const std::unordered_set<int32_t>& punct_ids) {
  if (!valid.empty() && valid.size() != ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "validity mask length does not match token count");
  }
  std::vector<uint8_t> keep(ids.size(), 1);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (scorer.mask_pad && !valid.empty() && !valid[i]) keep[i] = 0;
    if (scorer.mask_punct && punct_ids.count(ids[i]) > 0) keep[i] = 0;
  }
  return keep;
}

Var score_taped(const Scorer& scorer, Tape& tape, Var ha, Var hp,
                const std::vector<uint8_t>& keep_a, const std::vector<uint8_t>& keep_p) {
  if (scorer.kind == ScorerKind::Pli && scorer.patch_n < 1) {
    throw Error(ErrorCode::InvalidConfig, "pli patch_n must be positive");
  }
  std::vector<int64_t> ka = kept_rows(keep_a, ha.val().rows(), "anchor");
  std::vector<int64_t> kp = kept_rows(keep_p, hp.val().rows(), "candidate");
  Var a = tape.gather(ha, std::move(ka));
  Var p = tape.gather(hp, std::move(kp));
  switch (scorer.kind) {
    case ScorerKind::MeanCosine:
      return tape.cosine(tape.mean_rows(a), tape.mean_rows(p));
    case ScorerKind::MaxSim:
      break;
    case ScorerKind::Pli:
      a = tape.patch_mean(a, scorer.patch_n);
      p = tape.patch_mean(p, scorer.patch_n);
      break;
  }
  Var cos = tape.matmul_nt(tape.normalize_rows(a), tape.normalize_rows(p));
  return tape.sum(tape.max_rows_with_argmax(cos));
}

double score(const Scorer& scorer, const Tensor& Ha, const Tensor& Hp,
             const std::vector<uint8_t>& keep_a, const std::vector<uint8_t>& keep_p) {
  Tape tape;
  return score_taped(scorer, tape, tape.constant(Ha), tape.constant(Hp), keep_a, keep_p)
      .val()
      .item();
}

ScoreGrad score_grad(const Scorer& scorer, const Tensor& Ha, const Tensor& Hp,
                     const std::vector<uint8_t>& keep_a, const std::vector<uint8_t>& keep_p) {
  if (scorer.kind == ScorerKind::Pli && scorer.patch_n < 1) {
    throw Error(ErrorCode::InvalidConfig, "pli patch_n must be positive");
  }
  const std::vector<int64_t> ka = kept_rows(keep_a, Ha.rows(), "anchor");
  const std::vector<int64_t> kp = kept_rows(keep_p, Hp.rows(), "candidate");
  const int64_t d = Ha.cols();
  Tensor Ak = take_rows(Ha, ka);
  Tensor Pk = take_rows(Hp, kp);

  ScoreGrad out{Tensor(Ha.shape()), Tensor(Hp.shape())};

  if (scorer.kind == ScorerKind::MeanCosine) {
    // Every kept row shares one adjoint: the uniform 1/m structure.
    Tensor ma = mean_of_rows(Ak);
    Tensor mp = mean_of_rows(Pk);
    const double nu = kernels::l2_norm(ma.data(), d);
    const double nv = kernels::l2_norm(mp.data(), d);
    if (nu <= kernels::kEpsNorm || nv <= kernels::kEpsNorm) {
      throw Error(ErrorCode::DegenerateNorm, "cosine: vector norm below 1e-12 (" +
                                                 std::to_string(nu) + ", " + std::to_string(nv) +
                                                 ")");
    }
    const double c = kernels::dot(ma.data(), mp.data(), d) / (nu * nv);
    const double s1 = 1.0 / (nu * nv);
    Tensor du({d}), dv({d});
    const double s2a = 1.0 * c / (nu * nu);
    const double s2b = 1.0 * c / (nv * nv);
    for (int64_t j = 0; j < d; ++j) du.at(j) += s1 * mp.at(j) - s2a * ma.at(j);
    for (int64_t j = 0; j < d; ++j) dv.at(j) += s1 * ma.at(j) - s2b * mp.at(j);

    Tensor ga(Ak.shape()), gp(Pk.shape());
    std::vector<double> grow(static_cast<size_t>(d));
    const double inva = 1.0 / static_cast<double>(Ak.rows());
    for (int64_t j = 0; j < d; ++j) grow[static_cast<size_t>(j)] = du.at(j) * inva;
    for (int64_t i = 0; i < Ak.rows(); ++i) kernels::axpy(1.0, grow.data(), ga.row(i), d);
    const double invp = 1.0 / static_cast<double>(Pk.rows());
    for (int64_t j = 0; j < d; ++j) grow[static_cast<size_t>(j)] = dv.at(j) * invp;
    for (int64_t i = 0; i < Pk.rows(); ++i) kernels::axpy(1.0, grow.data(), gp.row(i), d);

    scatter_rows(ga, ka, out.dHa);
    scatter_rows(gp, kp, out.dHp);
    return out;
  }

  // maxsim / pli share the cosine-matrix -> row-max -> sum chain; pli pools
  // patches first.
  Tensor Au = scorer.kind == ScorerKind::Pli ? patch_means(Ak, scorer.patch_n) : std::move(Ak);
  Tensor Pu = scorer.kind == ScorerKind::Pli ? patch_means(Pk, scorer.patch_n) : std::move(Pk);
  std::vector<double> na, np;
  Tensor An = normalized_rows(Au, na);
  Tensor Pn = normalized_rows(Pu, np);
  Tensor C({An.rows(), Pn.rows()});
  kernels::mm_nt(An.data(), An.rows(), d, Pn.data(), Pn.rows(), C.data());
  const std::vector<int64_t> winners = row_argmax(C);

  // d(sum of row maxima)/dC: exactly one unit entry per anchor row (Eq. 6's
  // selective routing); everything else is the chain rule through the
  // normalizations.
  Tensor dC(C.shape());
  for (int64_t i = 0; i < C.rows(); ++i) dC.at(i, winners[static_cast<size_t>(i)]) += 1.0;
  Tensor dAn(An.shape()), dPn(Pn.shape());
  kernels::mm(dC.data(), dC.rows(), dC.cols(), Pn.data(), Pn.cols(), dAn.data(), true);
  kernels::mm_tn(dC.data(), dC.rows(), dC.cols(), An.data(), An.cols(), dPn.data(), true);
  Tensor dAu = normalize_backward(dAn, An, na);
  Tensor dPu = normalize_backward(dPn, Pn, np);

  if (scorer.kind == ScorerKind::MaxSim) {
    scatter_rows(dAu, ka, out.dHa);
    scatter_rows(dPu, kp, out.dHp);
    return out;
  }

  // pli: spread each patch adjoint uniformly over the patch's true size.
  auto unpool = [&](const Tensor& g, int64_t m) {
    Tensor ga = Tensor::zeros(m, d);
    std::vector<double> grow(static_cast<size_t>(d));
    for (int64_t p = 0; p < g.rows(); ++p) {
      const int64_t lo = p * scorer.patch_n;
      const int64_t hi = std::min(m, lo + scorer.patch_n);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (int64_t j = 0; j < d; ++j) grow[static_cast<size_t>(j)] = g.at(p, j) * inv;
      for (int64_t r = lo; r < hi; ++r) kernels::axpy(1.0, grow.data(), ga.row(r), d);
    }
    return ga;
  };
  scatter_rows(unpool(dAu, static_cast<int64_t>(ka.size())), ka, out.dHa);
  scatter_rows(unpool(dPu, static_cast<int64_t>(kp.size())), kp, out.dHp);
  return out;
}

SparsityReport sparsity_report(const Scorer& scorer, const Tensor& Ha, const Tensor& Hp,
                               const std::vector<uint8_t>& keep_a,
                               const std::vector<uint8_t>& keep_p) {
  ScoreGrad g = score_grad(scorer, Ha, Hp, keep_a, keep_p);
  auto nonzero_rows = [](const Tensor& t) {
    int64_t n = 0;
    for (int64_t i = 0; i < t.rows(); ++i) {
      for (int64_t j = 0; j < t.cols(); ++j) {
        if (t.at(i, j) != 0.0) {
          ++n;
          break;
        }
      }
    }
    return n;
  };
  SparsityReport r;
  r.anchor_nonzero_rows = nonzero_rows(g.dHa);
  r.candidate_nonzero_rows = nonzero_rows(g.dHp);
  r.anchor_fraction = static_cast<double>(r.anchor_nonzero_rows) / static_cast<double>(Ha.rows());
  r.candidate_fraction =
      static_cast<double>(r.candidate_nonzero_rows) / static_cast<double>(Hp.rows());
  return r;
}

DpiWitness dpi_witness(int64_t d, uint64_t seed) {
  if (d < 2) throw Error(ErrorCode::InvalidConfig, "dpi_witness needs d >= 2");
  // Entries are integers scaled by 2^-20, so any sum of four rows is exact
  // and therefore independent of row order: the two anchors have bitwise
  // identical means by construction, not by luck.
  constexpr double kGrid = 1.0 / (1 << 20);
  for (uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(seed + 0x517a0000 * attempt);
    auto fill = [&](Tensor& t) {
      for (int64_t i = 0; i < t.size(); ++i) {
        t.at(i) = (static_cast<double>(rng.below(1 << 21)) - static_cast<double>(1 << 20)) * kGrid;
      }
    };
    DpiWitness w{Tensor({4, d}), Tensor({4, d}), Tensor({4, d})};
    fill(w.anchor);
    fill(w.candidate);
    w.anchor_swapped = w.anchor;
    for (int64_t j = 0; j < d; ++j) {
      std::swap(w.anchor_swapped.at(1, j), w.anchor_swapped.at(2, j));
    }
    try {
      (void)score(Scorer::pli(2), w.anchor, w.candidate);
      (void)score(Scorer::pli(2), w.anchor_swapped, w.candidate);
      (void)score(Scorer::mean_cosine(), w.anchor, w.candidate);
      return w;
    } catch (const Error&) {
      continue;  // degenerate row/patch; try a reseeded draw
    }
  }
  throw Error(ErrorCode::DegenerateNorm, "dpi_witness: no non-degenerate draw in 100 attempts");
}

}  // namespace stylolab::scoring
