#pragma once

#include <cstdint>
#include <vector>

#include "matmamba/tensor.hpp"

// Differentiable tensor operations. Every op is define-by-run: it computes
// its value eagerly and, when grad mode is on and an input requires grad,
// records a node whose backward routes gradients to the inputs.
namespace matmamba {

// [m,k] . [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] . [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// [k,m]^T . [k,n] -> [m,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Batched variants; leading dims must match exactly.
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor bmm_nt(const Tensor& a, const Tensor& b);
Tensor bmm_tn(const Tensor& a, const Tensor& b);

// Elementwise with right-aligned numpy broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor negate(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);

// x[..., d] normalized over the last dim, scaled by w[d].
Tensor rmsnorm(const Tensor& x, const Tensor& w, float eps = 1e-5f);

// Mean smoothed NLL over rows of logits[n, V].
Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     float label_smoothing = 0.0f);

// First n entries along `axis`; aliases parent storage when axis == 0.
// Backward adds into [0:n) of the parent gradient and nowhere else.
Tensor prefix_slice(const Tensor& t, int64_t axis, int64_t n);
// General contiguous range along one axis (axis-0 slices stay views).
Tensor slice(const Tensor& t, int64_t axis, int64_t start, int64_t len);

Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor reshape(const Tensor& t, std::vector<int64_t> shape);  // zero-copy
Tensor permute(const Tensor& t, const std::vector<int64_t>& perm);
Tensor cumsum(const Tensor& t, int64_t axis);
// Materialized broadcast to `shape` (numpy broadcast_to rules).
Tensor expand(const Tensor& t, const std::vector<int64_t>& shape);
// Row gather: table[V, d] indexed by ids -> [len(ids), d].
Tensor embedding(const Tensor& table, const std::vector<int32_t>& ids);
Tensor sum_all(const Tensor& t);  // scalar

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b);

}  // namespace matmamba
