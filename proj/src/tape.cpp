#include "stylolab/tape.hpp"

#include <cmath>
#include <cstring>

#include "stylolab/kernels.hpp"

namespace stylolab {

namespace {
using kernels::kEpsNorm;

std::string op_shapes(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": lhs " + a.shape_string() + " rhs " + b.shape_string();
}
}  // namespace

const Tensor& Var::val() const { return tape->value(id); }

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }

Var Tape::leaf(Tensor value, bool requires_grad, int param_id) {
  Node n;
  n.op = Op::Leaf;
  n.needs_grad = requires_grad || value.requires_grad();
  n.param_id = param_id;
  n.out = std::move(value);
  return wrap(push(std::move(n)));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows()) {
    throw Error(ErrorCode::ShapeMismatch, op_shapes("matmul", A, B));
  }
  Node n;
  n.op = Op::Matmul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a) || needs(b);
  n.out = Tensor({A.rows(), B.cols()});
  kernels::mm(A.data(), A.rows(), A.cols(), B.data(), B.cols(), n.out.data());
  return wrap(push(std::move(n)));
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.cols()) {
    throw Error(ErrorCode::ShapeMismatch, op_shapes("matmul_nt", A, B));
  }
  Node n;
  n.op = Op::MatmulNT;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a) || needs(b);
  n.out = Tensor({A.rows(), B.rows()});
  kernels::mm_nt(A.data(), A.rows(), A.cols(), B.data(), B.rows(), n.out.data());
  return wrap(push(std::move(n)));
}

Var Tape::transpose(Var a) {
  const Tensor& A = a.val();
  if (A.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "transpose: input " + A.shape_string());
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.needs_grad = needs(a);
  n.out = Tensor({A.cols(), A.rows()});
  for (int64_t i = 0; i < A.rows(); ++i)
    for (int64_t j = 0; j < A.cols(); ++j) n.out.at(j, i) = A.at(i, j);
  return wrap(push(std::move(n)));
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  Node n;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a) || needs(b);
  if (A.same_shape(B)) {
    n.op = Op::Add;
    n.out = A;
    for (int64_t i = 0; i < A.size(); ++i) n.out.at(i) += B.at(i);
  } else if (A.ndim() == 2 && B.ndim() == 1 && B.size() == A.cols()) {
    n.op = Op::AddRow;
    n.out = A;
    for (int64_t i = 0; i < A.rows(); ++i)
      for (int64_t j = 0; j < A.cols(); ++j) n.out.at(i, j) += B.at(j);
  } else {
    throw Error(ErrorCode::ShapeMismatch, op_shapes("add", A, B));
  }
  n.out.set_requires_grad(false);
  return wrap(push(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  Node n;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a) || needs(b);
  if (A.same_shape(B)) {
    n.op = Op::Mul;
    n.out = A;
    for (int64_t i = 0; i < A.size(); ++i) n.out.at(i) *= B.at(i);
  } else if (A.ndim() == 2 && B.ndim() == 1 && B.size() == A.cols()) {
    n.op = Op::MulRow;
    n.out = A;
    for (int64_t i = 0; i < A.rows(); ++i)
      for (int64_t j = 0; j < A.cols(); ++j) n.out.at(i, j) *= B.at(j);
  } else {
    throw Error(ErrorCode::ShapeMismatch, op_shapes("mul", A, B));
  }
  n.out.set_requires_grad(false);
  return wrap(push(std::move(n)));
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.scalar = c;
  n.needs_grad = needs(a);
  n.out = a.val();
  n.out.set_requires_grad(false);
  for (int64_t i = 0; i < n.out.size(); ++i) n.out.at(i) *= c;
  return wrap(push(std::move(n)));
}

Var Tape::mean_rows(Var a) {
  const Tensor& A = a.val();
  if (A.ndim() != 2 || A.rows() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "mean_rows: input " + A.shape_string());
  }
  Node n;
  n.op = Op::MeanRows;
  n.a = a.id;
  n.needs_grad = needs(a);
  n.out = Tensor({A.cols()});
  const double inv = 1.0 / static_cast<double>(A.rows());
  for (int64_t i = 0; i < A.rows(); ++i) kernels::axpy(1.0, A.row(i), n.out.data(), A.cols());
  for (int64_t j = 0; j < A.cols(); ++j) n.out.at(j) *= inv;
  return wrap(push(std::move(n)));
}

Var Tape::patch_mean(Var a, int64_t patch_n) {
  const Tensor& A = a.val();
  if (A.ndim() != 2 || patch_n < 1) {
    throw Error(ErrorCode::ShapeMismatch, "patch_mean: input " + A.shape_string() + " patch_n " +
                                              std::to_string(patch_n));
  }
  const int64_t m = A.rows();
  const int64_t p = (m + patch_n - 1) / patch_n;
  Node n;
  n.op = Op::PatchMean;
  n.a = a.id;
  n.needs_grad = needs(a);
  n.idx = {patch_n};
  n.out = Tensor({p, A.cols()});
  for (int64_t i = 0; i < p; ++i) {
    const int64_t lo = i * patch_n;
    const int64_t hi = std::min(m, lo + patch_n);
    for (int64_t r = lo; r < hi; ++r) kernels::axpy(1.0, A.row(r), n.out.row(i), A.cols());
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (int64_t j = 0; j < A.cols(); ++j) n.out.at(i, j) *= inv;
  }
  return wrap(push(std::move(n)));
}

Var Tape::layernorm(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = x.val();
  const Tensor& G = gain.val();
  const Tensor& B = bias.val();
  const int64_t m = X.ndim() == 2 ? X.rows() : 1;
  const int64_t d = X.cols();
  if (d < 1 || G.size() != d || B.size() != d) {
    throw Error(ErrorCode::ShapeMismatch, "layernorm: input " + X.shape_string() + " gain " +
                                              G.shape_string() + " bias " + B.shape_string());
  }
  Node n;
  n.op = Op::LayerNorm;
  n.a = x.id;
  n.b = gain.id;
  n.c = bias.id;
  n.scalar = eps;
  n.needs_grad = needs(x) || needs(gain) || needs(bias);
  n.out = Tensor(X.shape());
  n.aux.resize(static_cast<size_t>(2 * m));
  kernels::layernorm_rows(X.data(), m, d, G.data(), B.data(), eps, n.out.data(), n.aux.data(),
                          n.aux.data() + m);
  return wrap(push(std::move(n)));
}

Var Tape::softmax(Var x) {
  const Tensor& X = x.val();
  const int64_t m = X.ndim() == 2 ? X.rows() : 1;
  const int64_t d = X.cols();
  Node n;
  n.op = Op::Softmax;
  n.a = x.id;
  n.needs_grad = needs(x);
  n.out = Tensor(X.shape());
  kernels::softmax_rows(X.data(), m, d, n.out.data());
  return wrap(push(std::move(n)));
}

Var Tape::gelu(Var x) {
  Node n;
  n.op = Op::Gelu;
  n.a = x.id;
  n.needs_grad = needs(x);
  n.out = Tensor(x.val().shape());
  kernels::gelu(x.val().data(), x.val().size(), n.out.data());
  return wrap(push(std::move(n)));
}

Var Tape::cosine(Var u, Var v) {
  const Tensor& U = u.val();
  const Tensor& V = v.val();
  if (U.size() != V.size()) throw Error(ErrorCode::ShapeMismatch, op_shapes("cosine", U, V));
  const int64_t d = U.size();
  const double nu = kernels::l2_norm(U.data(), d);
  const double nv = kernels::l2_norm(V.data(), d);
  if (nu <= kEpsNorm || nv <= kEpsNorm) {
    throw Error(ErrorCode::DegenerateNorm,
                "cosine: vector norm below 1e-12 (" + std::to_string(nu) + ", " + std::to_string(nv) + ")");
  }
  const double c = kernels::dot(U.data(), V.data(), d) / (nu * nv);
  Node n;
  n.op = Op::Cosine;
  n.a = u.id;
  n.b = v.id;
  n.needs_grad = needs(u) || needs(v);
  n.out = Tensor::scalar(c);
  n.aux = {nu, nv, c};
  return wrap(push(std::move(n)));
}

Var Tape::normalize_rows(Var a) {
  const Tensor& A = a.val();
  if (A.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "normalize_rows: input " + A.shape_string());
  Node n;
  n.op = Op::NormalizeRows;
  n.a = a.id;
  n.needs_grad = needs(a);
  n.out = Tensor(A.shape());
  n.aux.resize(static_cast<size_t>(A.rows()));
  for (int64_t i = 0; i < A.rows(); ++i) {
    const double norm = kernels::l2_norm(A.row(i), A.cols());
    if (norm <= kEpsNorm) {
      throw Error(ErrorCode::DegenerateNorm,
                  "normalize_rows: row " + std::to_string(i) + " norm below 1e-12");
    }
    n.aux[static_cast<size_t>(i)] = norm;
    const double inv = 1.0 / norm;
    for (int64_t j = 0; j < A.cols(); ++j) n.out.at(i, j) = A.at(i, j) * inv;
  }
  return wrap(push(std::move(n)));
}

Var Tape::max_rows_with_argmax(Var x) {
  const Tensor& X = x.val();
  if (X.ndim() != 2 || X.cols() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "max_rows_with_argmax: input " + X.shape_string());
  }
  Node n;
  n.op = Op::MaxRows;
  n.a = x.id;
  n.needs_grad = needs(x);
  n.out = Tensor({X.rows()});
  n.idx.resize(static_cast<size_t>(X.rows()));
  for (int64_t i = 0; i < X.rows(); ++i) {
    int64_t best = 0;
    double bv = X.at(i, 0);
    for (int64_t j = 1; j < X.cols(); ++j) {
      if (X.at(i, j) > bv) {  // strict: ties keep the lowest index
        bv = X.at(i, j);
        best = j;
      }
    }
    n.out.at(i) = bv;
    n.idx[static_cast<size_t>(i)] = best;
  }
  return wrap(push(std::move(n)));
}

Var Tape::gather(Var x, std::vector<int64_t> row_indices) {
  const Tensor& X = x.val();
  if (X.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "gather: input " + X.shape_string());
  for (int64_t r : row_indices) {
    if (r < 0 || r >= X.rows()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "gather: row " + std::to_string(r) + " out of range " + X.shape_string());
    }
  }
  Node n;
  n.op = Op::Gather;
  n.a = x.id;
  n.needs_grad = needs(x);
  n.out = Tensor({static_cast<int64_t>(row_indices.size()), X.cols()});
  for (size_t i = 0; i < row_indices.size(); ++i) {
    std::memcpy(n.out.row(static_cast<int64_t>(i)), X.row(row_indices[i]),
                sizeof(double) * static_cast<size_t>(X.cols()));
  }
  n.idx = std::move(row_indices);
  return wrap(push(std::move(n)));
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows: empty input list");
  int64_t rows = 0;
  int64_t cols = xs[0].val().cols();
  bool any_grad = false;
  for (const Var& v : xs) {
    const Tensor& T = v.val();
    if (T.cols() != cols) throw Error(ErrorCode::ShapeMismatch, "concat_rows: column mismatch");
    rows += T.ndim() == 2 ? T.rows() : 1;
    any_grad = any_grad || needs(v);
  }
  Node n;
  n.op = Op::ConcatRows;
  n.needs_grad = any_grad;
  n.out = Tensor({rows, cols});
  int64_t r = 0;
  for (const Var& v : xs) {
    n.many.push_back(v.id);
    const Tensor& T = v.val();
    const int64_t tr = T.ndim() == 2 ? T.rows() : 1;
    std::memcpy(n.out.row(r), T.data(), sizeof(double) * static_cast<size_t>(tr * cols));
    r += tr;
  }
  return wrap(push(std::move(n)));
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols: empty input list");
  const int64_t rows = xs[0].val().rows();
  int64_t cols = 0;
  bool any_grad = false;
  for (const Var& v : xs) {
    if (v.val().ndim() != 2 || v.val().rows() != rows) {
      throw Error(ErrorCode::ShapeMismatch, "concat_cols: row mismatch");
    }
    cols += v.val().cols();
    any_grad = any_grad || needs(v);
  }
  Node n;
  n.op = Op::ConcatCols;
  n.needs_grad = any_grad;
  n.out = Tensor({rows, cols});
  int64_t c0 = 0;
  for (const Var& v : xs) {
    n.many.push_back(v.id);
    const Tensor& T = v.val();
    for (int64_t i = 0; i < rows; ++i) {
      std::memcpy(n.out.row(i) + c0, T.row(i), sizeof(double) * static_cast<size_t>(T.cols()));
    }
    c0 += T.cols();
  }
  return wrap(push(std::move(n)));
}

Var Tape::slice_cols(Var x, int64_t start, int64_t len) {
  const Tensor& X = x.val();
  if (X.ndim() != 2 || start < 0 || len < 1 || start + len > X.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_cols: input " + X.shape_string() + " range [" +
                                              std::to_string(start) + ", " +
                                              std::to_string(start + len) + ")");
  }
  Node n;
  n.op = Op::SliceCols;
  n.a = x.id;
  n.needs_grad = needs(x);
  n.idx = {start, len};
  n.out = Tensor({X.rows(), len});
  for (int64_t i = 0; i < X.rows(); ++i) {
    std::memcpy(n.out.row(i), X.row(i) + start, sizeof(double) * static_cast<size_t>(len));
  }
  return wrap(push(std::move(n)));
}

Var Tape::sum(Var x) {
  Node n;
  n.op = Op::Sum;
  n.a = x.id;
  n.needs_grad = needs(x);
  double s = 0.0;
  for (int64_t i = 0; i < x.val().size(); ++i) s += x.val().at(i);
  n.out = Tensor::scalar(s);
  return wrap(push(std::move(n)));
}

Var Tape::weighted_sum(const std::vector<Var>& xs, Var weights) {
  if (xs.empty()) throw Error(ErrorCode::ShapeMismatch, "weighted_sum: empty input list");
  const Tensor& W = weights.val();
  if (W.size() != static_cast<int64_t>(xs.size())) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_sum: " + std::to_string(xs.size()) +
                                              " inputs vs weights " + W.shape_string());
  }
  bool any_grad = needs(weights);
  for (const Var& v : xs) {
    if (!v.val().same_shape(xs[0].val())) {
      throw Error(ErrorCode::ShapeMismatch, "weighted_sum: input shape mismatch");
    }
    any_grad = any_grad || needs(v);
  }
  Node n;
  n.op = Op::WeightedSum;
  n.b = weights.id;
  n.needs_grad = any_grad;
  n.out = Tensor(xs[0].val().shape());
  for (size_t k = 0; k < xs.size(); ++k) {
    n.many.push_back(xs[k].id);
    kernels::axpy(W.at(static_cast<int64_t>(k)), xs[k].val().data(), n.out.data(), n.out.size());
  }
  return wrap(push(std::move(n)));
}

Var Tape::infonce(Var scores, double tau) {
  const Tensor& S = scores.val();
  const bool vector_shaped = S.ndim() == 1 || S.rows() == 1 || S.cols() == 1;
  if (!vector_shaped || S.size() < 2) {
    throw Error(ErrorCode::EmptyNegatives,
                "infonce: need the positive plus at least one negative, got " + S.shape_string());
  }
  if (!(tau > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "infonce: temperature must be positive");
  }
  const int64_t k = S.size();
  Node n;
  n.op = Op::InfoNCE;
  n.a = scores.id;
  n.scalar = tau;
  n.needs_grad = needs(scores);
  n.aux.resize(static_cast<size_t>(k));
  double mx = S.at(0) / tau;
  for (int64_t i = 1; i < k; ++i) mx = std::max(mx, S.at(i) / tau);
  double denom = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    n.aux[static_cast<size_t>(i)] = std::exp(S.at(i) / tau - mx);
    denom += n.aux[static_cast<size_t>(i)];
  }
  const double inv = 1.0 / denom;
  for (int64_t i = 0; i < k; ++i) n.aux[static_cast<size_t>(i)] *= inv;
  n.out = Tensor::scalar(std::log(denom) - (S.at(0) / tau - mx));
  return wrap(push(std::move(n)));
}

Tensor& Tape::grad_buf(int id, const std::vector<int64_t>& shape) {
  Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.size() == 0) g = Tensor(shape);
  return g;
}

void Tape::backward(Var root) {
  if (root.val().size() != 1) {
    throw Error(ErrorCode::NonScalarRoot, "backward: root has shape " + root.val().shape_string());
  }
  backward_seeded(root, Tensor::scalar(1.0));
}

void Tape::backward_seeded(Var node, const Tensor& seed) {
  if (backward_done_) {
    throw Error(ErrorCode::DoubleBackward, "backward: tape already used; derivatives of gradients are unsupported");
  }
  if (nodes_.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "backward: empty tape");
  }
  if (!seed.same_shape(node.val())) {
    throw Error(ErrorCode::ShapeMismatch, "backward: seed " + seed.shape_string() + " vs node " +
                                              node.val().shape_string());
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<size_t>(node.id)] = seed;
  grads_[static_cast<size_t>(node.id)].set_requires_grad(false);
  run_backward();
}

void Tape::run_backward() {
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) continue;
    const Tensor& g = grads_[static_cast<size_t>(id)];
    if (g.size() == 0) continue;

    auto in_val = [&](int i) -> const Tensor& { return nodes_[static_cast<size_t>(i)].out; };
    auto in_needs = [&](int i) { return nodes_[static_cast<size_t>(i)].needs_grad; };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Matmul: {
        const Tensor& A = in_val(n.a);
        const Tensor& B = in_val(n.b);
        if (in_needs(n.a)) {
          Tensor& ga = grad_buf(n.a, A.shape());
          kernels::mm_nt(g.data(), g.rows(), g.cols(), B.data(), B.rows(), ga.data(), true);
        }
        if (in_needs(n.b)) {
          Tensor& gb = grad_buf(n.b, B.shape());
          kernels::mm_tn(A.data(), A.rows(), A.cols(), g.data(), g.cols(), gb.data(), true);
        }
        break;
      }
      case Op::MatmulNT: {
        const Tensor& A = in_val(n.a);
        const Tensor& B = in_val(n.b);
        if (in_needs(n.a)) {
          Tensor& ga = grad_buf(n.a, A.shape());
          kernels::mm(g.data(), g.rows(), g.cols(), B.data(), B.cols(), ga.data(), true);
        }
        if (in_needs(n.b)) {
          Tensor& gb = grad_buf(n.b, B.shape());
          kernels::mm_tn(g.data(), g.rows(), g.cols(), A.data(), A.cols(), gb.data(), true);
        }
        break;
      }
      case Op::Transpose: {
        if (in_needs(n.a)) {
          const Tensor& A = in_val(n.a);
          Tensor& ga = grad_buf(n.a, A.shape());
          for (int64_t i = 0; i < g.rows(); ++i)
            for (int64_t j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
        }
        break;
      }
      case Op::Add: {
        if (in_needs(n.a)) {
          Tensor& ga = grad_buf(n.a, in_val(n.a).shape());
          kernels::axpy(1.0, g.data(), ga.data(), g.size());
        }
        if (in_needs(n.b)) {
          Tensor& gb = grad_buf(n.b, in_val(n.b).shape());
          kernels::axpy(1.0, g.data(), gb.data(), g.size());
        }
        break;
      }
      case Op::AddRow: {
        if (in_needs(n.a)) {
          Tensor& ga = grad_buf(n.a, in_val(n.a).shape());
          kernels::axpy(1.0, g.data(), ga.data(), g.size());
        }
        if (in_needs(n.b)) {
          Tensor& gb = grad_buf(n.b, in_val(n.b).shape());
          for (int64_t i = 0; i < g.rows(); ++i) kernels::axpy(1.0, g.row(i), gb.data(), g.cols());
        }
        break;
      }
      case Op::Mul: {
        if (in_needs(n.a)) {
          const Tensor& B = in_val(n.b);
          Tensor& ga = grad_buf(n.a, in_val(n.a).shape());
          for (int64_t i = 0; i < g.size(); ++i) ga.at(i) += g.at(i) * B.at(i);
        }
        if (in_needs(n.b)) {
          const Tensor& A = in_val(n.a);
          Tensor& gb = grad_buf(n.b, in_val(n.b).shape());
          for (int64_t i = 0; i < g.size(); ++i) gb.at(i) += g.at(i) * A.at(i);
        }
        break;
      }
      case Op::MulRow: {
        const Tensor& A = in_val(n.a);
        const Tensor& B = in_val(n.b);
        if (in_needs(n.a)) {
          Tensor& ga = grad_buf(n.a, A.shape());
          for (int64_t i = 0; i < g.rows(); ++i)
            for (int64_t j = 0; j < g.cols(); ++j) ga.at(i, j) += g.at(i, j) * B.at(j);
        }
        if (in_needs(n.b)) {
          Tensor& gb = grad_buf(n.b, B.shape());
          for (int64_t i = 0; i < g.rows(); ++i)
            for (int64_t j = 0; j < g.cols(); ++j) gb.at(j) += g.at(i, j) * A.at(i, j);
        }
        break;
      }
      case Op::Scale: {
        if (in_needs(n.a)) {
          Tensor& ga = grad_buf(n.a, in_val(n.a).shape());
          kernels::axpy(n.scalar, g.data(), ga.data(), g.size());
        }
        break;
      }
      case Op::MeanRows: {
        if (in_needs(n.a)) {
          const Tensor& A = in_val(n.a);
          Tensor& ga = grad_buf(n.a, A.shape());
          // One shared row adjoint so every row receives bitwise the same value.
          std::vector<double> grow(static_cast<size_t>(A.cols()));
          const double inv = 1.0 / static_cast<double>(A.rows());
          for (int64_t j = 0; j < A.cols(); ++j) grow[static_cast<size_t>(j)] = g.at(j) * inv;
          for (int64_t i = 0; i < A.rows(); ++i)
            kernels::axpy(1.0, grow.data(), ga.row(i), A.cols());
        }
        break;
      }
      case Op::PatchMean: {
        if (in_needs(n.a)) {
          const Tensor& A = in_val(n.a);
          Tensor& ga = grad_buf(n.a, A.shape());
          const int64_t patch_n = n.idx[0];
          std::vector<double> grow(static_cast<size_t>(A.cols()));
          for (int64_t p = 0; p < g.rows(); ++p) {
            const int64_t lo = p * patch_n;
            const int64_t hi = std::min(A.rows(), lo + patch_n);
            const double inv = 1.0 / static_cast<double>(hi - lo);
            for (int64_t j = 0; j < A.cols(); ++j) grow[static_cast<size_t>(j)] = g.at(p, j) * inv;
            for (int64_t r = lo; r < hi; ++r) kernels::axpy(1.0, grow.data(), ga.row(r), A.cols());
          }
        }
        break;
      }
      case Op::LayerNorm: {
        const Tensor& X = in_val(n.a);
        const Tensor& G = in_val(n.b);
        const int64_t m = X.ndim() == 2 ? X.rows() : 1;
        const int64_t d = X.cols();
        Tensor& gx = grad_buf(n.a, X.shape());
        Tensor& gg = grad_buf(n.b, G.shape());
        Tensor& gb = grad_buf(n.c, in_val(n.c).shape());
        kernels::layernorm_rows_backward(X.data(), g.data(), m, d, G.data(), n.aux.data(),
                                         n.aux.data() + m, gx.data(), gg.data(), gb.data());
        break;
      }
      case Op::Softmax: {
        if (in_needs(n.a)) {
          const Tensor& X = in_val(n.a);
          const int64_t m = X.ndim() == 2 ? X.rows() : 1;
          Tensor& gx = grad_buf(n.a, X.shape());
          kernels::softmax_rows_backward(n.out.data(), g.data(), m, X.cols(), gx.data());
        }
        break;
      }
      case Op::Gelu: {
        if (in_needs(n.a)) {
          const Tensor& X = in_val(n.a);
          Tensor& gx = grad_buf(n.a, X.shape());
          kernels::gelu_backward(X.data(), g.data(), X.size(), gx.data());
        }
        break;
      }
      case Op::Cosine: {
        const Tensor& U = in_val(n.a);
        const Tensor& V = in_val(n.b);
        const double nu = n.aux[0];
        const double nv = n.aux[1];
        const double c = n.aux[2];
        const double gs = g.at(0);
        if (in_needs(n.a)) {
          Tensor& gu = grad_buf(n.a, U.shape());
          const double s1 = gs / (nu * nv);
          const double s2 = gs * c / (nu * nu);
          for (int64_t i = 0; i < U.size(); ++i) gu.at(i) += s1 * V.at(i) - s2 * U.at(i);
        }
        if (in_needs(n.b)) {
          Tensor& gv = grad_buf(n.b, V.shape());
          const double s1 = gs / (nu * nv);
          const double s2 = gs * c / (nv * nv);
          for (int64_t i = 0; i < V.size(); ++i) gv.at(i) += s1 * U.at(i) - s2 * V.at(i);
        }
        break;
      }
      case Op::NormalizeRows: {
        if (in_needs(n.a)) {
          const Tensor& A = in_val(n.a);
          Tensor& ga = grad_buf(n.a, A.shape());
          for (int64_t i = 0; i < A.rows(); ++i) {
            const double* yi = n.out.row(i);
            const double* gi = g.row(i);
            const double inner = kernels::dot(gi, yi, A.cols());
            const double inv = 1.0 / n.aux[static_cast<size_t>(i)];
            double* go = ga.row(i);
            for (int64_t j = 0; j < A.cols(); ++j) go[j] += (gi[j] - inner * yi[j]) * inv;
          }
        }
        break;
      }
      case Op::MaxRows: {
        if (in_needs(n.a)) {
          const Tensor& X = in_val(n.a);
          Tensor& gx = grad_buf(n.a, X.shape());
          for (int64_t i = 0; i < X.rows(); ++i) {
            gx.at(i, n.idx[static_cast<size_t>(i)]) += g.at(i);
          }
        }
        break;
      }
      case Op::Gather: {
        if (in_needs(n.a)) {
          const Tensor& X = in_val(n.a);
          Tensor& gx = grad_buf(n.a, X.shape());
          for (size_t i = 0; i < n.idx.size(); ++i) {
            kernels::axpy(1.0, g.row(static_cast<int64_t>(i)), gx.row(n.idx[i]), X.cols());
          }
        }
        break;
      }
      case Op::ConcatRows: {
        int64_t r = 0;
        for (int in_id : n.many) {
          const Tensor& T = in_val(in_id);
          const int64_t tr = T.ndim() == 2 ? T.rows() : 1;
          if (in_needs(in_id)) {
            Tensor& gi = grad_buf(in_id, T.shape());
            kernels::axpy(1.0, g.row(r), gi.data(), tr * T.cols());
          }
          r += tr;
        }
        break;
      }
      case Op::ConcatCols: {
        int64_t c0 = 0;
        for (int in_id : n.many) {
          const Tensor& T = in_val(in_id);
          if (in_needs(in_id)) {
            Tensor& gi = grad_buf(in_id, T.shape());
            for (int64_t i = 0; i < T.rows(); ++i)
              kernels::axpy(1.0, g.row(i) + c0, gi.row(i), T.cols());
          }
          c0 += T.cols();
        }
        break;
      }
      case Op::SliceCols: {
        if (in_needs(n.a)) {
          const Tensor& X = in_val(n.a);
          Tensor& gx = grad_buf(n.a, X.shape());
          const int64_t start = n.idx[0];
          const int64_t len = n.idx[1];
          for (int64_t i = 0; i < X.rows(); ++i)
            kernels::axpy(1.0, g.row(i), gx.row(i) + start, len);
        }
        break;
      }
      case Op::Sum: {
        if (in_needs(n.a)) {
          const Tensor& X = in_val(n.a);
          Tensor& gx = grad_buf(n.a, X.shape());
          const double gs = g.at(0);
          for (int64_t i = 0; i < X.size(); ++i) gx.at(i) += gs;
        }
        break;
      }
      case Op::WeightedSum: {
        const Tensor& W = in_val(n.b);
        for (size_t k = 0; k < n.many.size(); ++k) {
          const int in_id = n.many[k];
          if (in_needs(in_id)) {
            Tensor& gi = grad_buf(in_id, in_val(in_id).shape());
            kernels::axpy(W.at(static_cast<int64_t>(k)), g.data(), gi.data(), g.size());
          }
        }
        if (in_needs(n.b)) {
          Tensor& gw = grad_buf(n.b, W.shape());
          for (size_t k = 0; k < n.many.size(); ++k) {
            gw.at(static_cast<int64_t>(k)) +=
                kernels::dot(g.data(), in_val(n.many[k]).data(), g.size());
          }
        }
        break;
      }
      case Op::InfoNCE: {
        if (in_needs(n.a)) {
          const Tensor& S = in_val(n.a);
          Tensor& gs = grad_buf(n.a, S.shape());
          const double gv = g.at(0);
          const double inv_tau = 1.0 / n.scalar;
          for (int64_t i = 0; i < S.size(); ++i) {
            const double p = n.aux[static_cast<size_t>(i)];
            gs.at(i) += gv * inv_tau * (p - (i == 0 ? 1.0 : 0.0));
          }
        }
        break;
      }
    }
  }
}

const Tensor* Tape::grad(Var v) const {
  if (!backward_done_) return nullptr;
  const Tensor& g = grads_[static_cast<size_t>(v.id)];
  return g.size() == 0 ? nullptr : &g;
}

std::map<int, Tensor> Tape::param_grads() const {
  std::map<int, Tensor> out;
  if (!backward_done_) return out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op != Op::Leaf || n.param_id < 0) continue;
    const Tensor& g = grads_[i];
    if (g.size() == 0) continue;
    auto [it, inserted] = out.emplace(n.param_id, g);
    if (!inserted) {
      for (int64_t j = 0; j < g.size(); ++j) it->second.at(j) += g.at(j);
    }
  }
  return out;
}

const std::vector<int64_t>& Tape::argmax_indices(Var max_rows_node) const {
  const Node& n = node(max_rows_node);
  if (n.op != Op::MaxRows) {
    throw Error(ErrorCode::ShapeMismatch, "argmax_indices: node is not max_rows_with_argmax");
  }
  return n.idx;
}

}  // namespace stylolab
