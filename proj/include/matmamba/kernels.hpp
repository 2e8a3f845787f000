#pragma once

#include <cmath>
#include <cstdint>

// Plain float kernels shared by the autograd ops and the graph-free
// inference path. No allocation, no error checking: callers own the shapes.
namespace matmamba::kernels {

// c[m,n] (+)= a[m,k] . b[k,n]
void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate);
// c[m,n] (+)= a[m,k] . b[n,k]^T
void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate);
// c[m,n] (+)= a[k,m]^T . b[k,n]
void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate);

// Depthwise causal conv, kernel size K, zero left padding of K-1.
// seq layout [l, c] (channel fastest), weights [c, K].
void causal_conv1d(const float* seq, const float* w, const float* bias,
                   float* out, int64_t l, int64_t c, int64_t K);

inline float sigmoid_s(float x) { return 1.0f / (1.0f + std::exp(-x)); }
inline float silu_s(float x) { return x * sigmoid_s(x); }
inline float softplus_s(float x) {
  // log(1 + e^x), stable on both tails
  if (x > 20.0f) return x;
  if (x < -20.0f) return std::exp(x);
  return std::log1p(std::exp(x));
}

// y[d] = x[d] / sqrt(mean(x^2) + eps) * w[d]
void rmsnorm_row(const float* x, const float* w, float* y, int64_t d,
                 float eps);

}  // namespace matmamba::kernels
