#pragma once

#include <map>
#include <vector>

#include "stylolab/tensor.hpp"

namespace stylolab {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& val() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape over the fixed op set used by the encoder and scorers.
/// Single-threaded per tape; node values are immutable once recorded, so a
/// finished tape may be read from several threads. Backward runs once; the
/// produced gradients are plain tensors (no higher-order derivatives).
class Tape {
 public:
  enum class Op : uint8_t {
    Leaf,
    Matmul,
    MatmulNT,
    Transpose,
    Add,
    AddRow,
    Mul,
    MulRow,
    Scale,
    MeanRows,
    PatchMean,
    LayerNorm,
    Softmax,
    Gelu,
    Cosine,
    NormalizeRows,
    MaxRows,
    Gather,
    ConcatRows,
    ConcatCols,
    SliceCols,
    Sum,
    WeightedSum,
    InfoNCE,
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false, int param_id = -1);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var matmul(Var a, Var b);
  /// a . b^T — the similarity-matrix flavor of matmul.
  Var matmul_nt(Var a, Var b);
  Var transpose(Var a);
  /// Elementwise add; also accepts a 1-D row vector as b, broadcast over a's rows.
  Var add(Var a, Var b);
  /// Elementwise multiply with the same broadcast rule as add.
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
  /// Mean over rows -> 1-D [cols]. Each row's adjoint is the same tensor.
  Var mean_rows(Var a);
  /// Mean over contiguous row patches of size patch_n; the ragged tail patch
  /// is averaged over its actual row count.
  Var patch_mean(Var a, int64_t patch_n);
  Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var softmax(Var x);
  Var gelu(Var x);
  /// Cosine similarity of two equally-sized tensors viewed flat -> scalar.
  /// Rejects inputs with norm <= eps_norm (DegenerateNorm).
  Var cosine(Var u, Var v);
  /// Rows scaled to unit L2 norm; rejects rows with norm <= eps_norm.
  Var normalize_rows(Var a);
  /// All-pairs row cosine: [ma x d], [mb x d] -> [ma x mb].
  Var cosine_matrix(Var a, Var b) { return matmul_nt(normalize_rows(a), normalize_rows(b)); }
  /// Per-row max over columns -> 1-D [rows]; winner column indices are
  /// recorded for subgradient routing. Ties break to the lowest index.
  Var max_rows_with_argmax(Var x);
  Var gather(Var x, std::vector<int64_t> row_indices);
  Var concat_rows(const std::vector<Var>& xs);
  Var concat_cols(const std::vector<Var>& xs);
  Var slice_cols(Var x, int64_t start, int64_t len);
  Var sum(Var x);
  /// sum_j w_j * x_j for same-shaped x_j and 1-D weights (differentiable in both).
  Var weighted_sum(const std::vector<Var>& xs, Var weights);
  /// InfoNCE loss over vector-shaped scores (1-D, single row, or single
  /// column) whose first entry is the positive, computed with
  /// max-subtraction: -log softmax(scores/tau)[0].
  Var infonce(Var scores, double tau);

  /// Reverse pass from a scalar root. May be called once per tape; gradients
  /// of gradients are not supported and a second call is rejected.
  void backward(Var root);
  /// Reverse pass seeded with an explicit adjoint at an arbitrary node.
  void backward_seeded(Var node, const Tensor& seed);

  /// Gradient of the last backward root w.r.t. v; nullptr when v does not
  /// require grad or was not visited.
  const Tensor* grad(Var v) const;
  /// Accumulated leaf gradients keyed by param_id (ascending).
  std::map<int, Tensor> param_grads() const;

  const std::vector<int64_t>& argmax_indices(Var max_rows_node) const;

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].out; }
  size_t node_count() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    int c = -1;
    std::vector<int> many;
    Tensor out;
    std::vector<int64_t> idx;
    std::vector<double> aux;
    double scalar = 0.0;
    bool needs_grad = false;
    int param_id = -1;
  };

  int push(Node n);
  Var wrap(int id) { return Var{this, id}; }
  const Node& node(Var v) const;
  bool needs(Var v) const { return node(v).needs_grad; }
  Tensor& grad_buf(int id, const std::vector<int64_t>& shape);
  void run_backward();

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

}  // namespace stylolab
