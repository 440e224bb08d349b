#pragma once

#include <cstdint>

namespace stylolab::kernels {

// Row-major dense kernels shared by the tape ops and the plain encoder
// forward. Keeping a single implementation of each primitive is what makes
// "captured forward == taped forward" hold bitwise.

/// Norms at or below this are treated as degenerate by cosine/normalize.
inline constexpr double kEpsNorm = 1e-12;

/// C (m x n) = A (m x k) . B (k x n); accumulates when acc is true.
void mm(const double* a, int64_t m, int64_t k, const double* b, int64_t n, double* c, bool acc = false);

/// C (m x n) = A (m x k) . B^T, where B is (n x k).
void mm_nt(const double* a, int64_t m, int64_t k, const double* b, int64_t n, double* c, bool acc = false);

/// C (k x n) = A^T . B, where A is (m x k), B is (m x n).
void mm_tn(const double* a, int64_t m, int64_t k, const double* b, int64_t n, double* c, bool acc = false);

double dot(const double* a, const double* b, int64_t n);

/// y += s * x
void axpy(double s, const double* x, double* y, int64_t n);

/// Row-wise layer norm with affine parameters: out = (x - mu) / sqrt(var + eps) * g + b.
/// Stores per-row mean and inverse stddev for the backward pass.
void layernorm_rows(const double* x, int64_t m, int64_t n, const double* gain, const double* bias,
                    double eps, double* out, double* save_mean, double* save_invstd);

void layernorm_rows_backward(const double* x, const double* g_out, int64_t m, int64_t n,
                             const double* gain, const double* save_mean, const double* save_invstd,
                             double* g_x, double* g_gain, double* g_bias);

/// Row-wise softmax with max subtraction.
void softmax_rows(const double* x, int64_t m, int64_t n, double* out);

/// g_x += y * (g_out - sum(g_out * y)) per row, given y = softmax(x).
void softmax_rows_backward(const double* y, const double* g_out, int64_t m, int64_t n, double* g_x);

/// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
void gelu(const double* x, int64_t n, double* out);
void gelu_backward(const double* x, const double* g_out, int64_t n, double* g_x);

double l2_norm(const double* x, int64_t n);

}  // namespace stylolab::kernels
