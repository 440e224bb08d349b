#include "stylolab/kernels.hpp"

#include <cmath>
#include <cstring>

namespace stylolab::kernels {

void mm(const double* a, int64_t m, int64_t k, const double* b, int64_t n, double* c, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
  // i-k-j order streams B rows and lets the inner loop vectorize.
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void mm_nt(const double* a, int64_t m, int64_t k, const double* b, int64_t n, double* c, bool acc) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double d = dot(ai, b + j * k, k);
      ci[j] = acc ? ci[j] + d : d;
    }
  }
}

void mm_tn(const double* a, int64_t m, int64_t k, const double* b, int64_t n, double* c, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(k * n));
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

double dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double s, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += s * x[i];
}

void layernorm_rows(const double* x, int64_t m, int64_t n, const double* gain, const double* bias,
                    double eps, double* out, double* save_mean, double* save_invstd) {
  for (int64_t i = 0; i < m; ++i) {
    const double* xi = x + i * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double invstd = 1.0 / std::sqrt(var + eps);
    save_mean[i] = mu;
    save_invstd[i] = invstd;
    double* oi = out + i * n;
    for (int64_t j = 0; j < n; ++j) oi[j] = (xi[j] - mu) * invstd * gain[j] + bias[j];
  }
}

void layernorm_rows_backward(const double* x, const double* g_out, int64_t m, int64_t n,
                             const double* gain, const double* save_mean, const double* save_invstd,
                             double* g_x, double* g_gain, double* g_bias) {
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < m; ++i) {
    const double* xi = x + i * n;
    const double* gi = g_out + i * n;
    const double mu = save_mean[i];
    const double invstd = save_invstd[i];
    // dxhat = g * gain; reduce the two row statistics first.
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double xhat = (xi[j] - mu) * invstd;
      const double dxhat = gi[j] * gain[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      g_gain[j] += gi[j] * xhat;
      g_bias[j] += gi[j];
    }
    double* go = g_x + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double xhat = (xi[j] - mu) * invstd;
      const double dxhat = gi[j] * gain[j];
      go[j] += invstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
    }
  }
}

void softmax_rows(const double* x, int64_t m, int64_t n, double* out) {
  for (int64_t i = 0; i < m; ++i) {
    const double* xi = x + i * n;
    double mx = xi[0];
    for (int64_t j = 1; j < n; ++j) mx = xi[j] > mx ? xi[j] : mx;
    double denom = 0.0;
    double* oi = out + i * n;
    for (int64_t j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      denom += oi[j];
    }
    const double inv = 1.0 / denom;
    for (int64_t j = 0; j < n; ++j) oi[j] *= inv;
  }
}

void softmax_rows_backward(const double* y, const double* g_out, int64_t m, int64_t n, double* g_x) {
  for (int64_t i = 0; i < m; ++i) {
    const double* yi = y + i * n;
    const double* gi = g_out + i * n;
    double inner = 0.0;
    for (int64_t j = 0; j < n; ++j) inner += yi[j] * gi[j];
    double* go = g_x + i * n;
    for (int64_t j = 0; j < n; ++j) go[j] += yi[j] * (gi[j] - inner);
  }
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

void gelu(const double* x, int64_t n, double* out) {
  for (int64_t i = 0; i < n; ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  }
}

void gelu_backward(const double* x, const double* g_out, int64_t n, double* g_x) {
  for (int64_t i = 0; i < n; ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
    g_x[i] += g_out[i] * (cdf + x[i] * pdf);
  }
}

double l2_norm(const double* x, int64_t n) { return std::sqrt(dot(x, x, n)); }

}  // namespace stylolab::kernels
