#include "matmamba/kernels.hpp"

#include <cstring>
#include <vector>

namespace matmamba::kernels {

void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    int64_t r = 0;
    if (!accumulate) {
      const float av = arow[0];
      for (int64_t j = 0; j < n; ++j) crow[j] = av * b[j];
      r = 1;
    }
    for (; r < k; ++r) {
      const float av = arow[r];
      const float* brow = b + r * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace {

// Scratch for operand transposes; the axpy-style nn loop vectorizes far
// better than dot-product reductions, so nt/tn re-lay one operand and reuse it.
std::vector<float>& scratch() {
  thread_local std::vector<float> buf;
  return buf;
}

void transpose(const float* src, float* dst, int64_t rows, int64_t cols) {
  for (int64_t i = 0; i < rows; ++i) {
    const float* s = src + i * cols;
    for (int64_t j = 0; j < cols; ++j) dst[j * rows + i] = s[j];
  }
}

}  // namespace

void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  std::vector<float>& bt = scratch();
  if (static_cast<int64_t>(bt.size()) < k * n) bt.resize(static_cast<size_t>(k * n));
  transpose(b, bt.data(), n, k);  // [n,k] -> [k,n]
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  std::vector<float>& at = scratch();
  if (static_cast<int64_t>(at.size()) < k * m) at.resize(static_cast<size_t>(k * m));
  transpose(a, at.data(), k, m);  // [k,m] -> [m,k]
  gemm_nn(at.data(), b, c, m, k, n, accumulate);
}

void causal_conv1d(const float* seq, const float* w, const float* bias,
                   float* out, int64_t l, int64_t c, int64_t K) {
  // Transpose weights to [K, c] so the channel loop is contiguous.
  std::vector<float> wt(static_cast<size_t>(K * c));
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t j = 0; j < K; ++j) wt[static_cast<size_t>(j * c + ch)] = w[ch * K + j];
  }
  for (int64_t t = 0; t < l; ++t) {
    float* orow = out + t * c;
    if (bias != nullptr) {
      std::memcpy(orow, bias, static_cast<size_t>(c) * sizeof(float));
    } else {
      std::memset(orow, 0, static_cast<size_t>(c) * sizeof(float));
    }
    for (int64_t j = 0; j < K; ++j) {
      const int64_t s = t - (K - 1) + j;
      if (s < 0) continue;
      const float* xrow = seq + s * c;
      const float* wrow = wt.data() + j * c;
      for (int64_t ch = 0; ch < c; ++ch) orow[ch] += wrow[ch] * xrow[ch];
    }
  }
}

void rmsnorm_row(const float* x, const float* w, float* y, int64_t d,
                 float eps) {
  float ss = 0.0f;
  for (int64_t i = 0; i < d; ++i) ss += x[i] * x[i];
  const float r = 1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
  for (int64_t i = 0; i < d; ++i) y[i] = x[i] * r * w[i];
}

}  // namespace matmamba::kernels
