#pragma once

#include <string>
#include <utility>
#include <vector>

#include "matmamba/ssd.hpp"

namespace matmamba {

struct BlockConfig {
  int64_t d_model = 0;
  int64_t expand = 2;
  int64_t d_head = 64;
  int64_t d_state = 128;
  int64_t d_conv = 4;

  int64_t d_inner() const { return expand * d_model; }
  int64_t n_heads() const { return d_inner() / d_head; }
  void validate() const;
};

struct SliceDims {
  int64_t m;    // Matryoshka dimension
  int64_t d_i;  // inner slice width, expand * m
  int64_t h_i;  // head count, d_i / d_head
};

// Checks 0 < m <= d_model and (expand*m) % d_head == 0.
SliceDims resolve_slice(const BlockConfig& cfg, int64_t m);

// All learnable tensors of one block. The block may be materialized below the
// config's full width (extracted submodels): `m_mat` is the width its buffers
// were built for, and any runtime granularity must satisfy m <= m_mat.
struct BlockParams {
  int64_t m_mat = 0;
  Tensor w_z;           // [d_i_mat, d_model]
  Tensor w_x;           // [d_i_mat, d_model]
  Tensor w_b;           // [d_state, d_model]
  Tensor w_c;           // [d_state, d_model]
  Tensor w_dt;          // [h_mat, d_model]
  Tensor dt_bias;       // [h_mat]
  Tensor a_log;         // [h_mat]
  Tensor d;             // [h_mat]
  Tensor w_conv_x;      // [d_i_mat, 4]
  Tensor w_conv_bc;     // [2*d_state, 4]
  Tensor conv_bias;     // [d_i_mat + 2*d_state]
  Tensor inner_norm_w;  // [d_i_mat]
  Tensor pre_norm_w;    // [d_model]
  Tensor w_out;         // [d_model, d_i_mat]
};

struct TensorSpec {
  std::string name;
  std::vector<int64_t> shape;
};

// Declared shapes of every block tensor at width m, in field order.
std::vector<TensorSpec> block_tensor_specs(const BlockConfig& cfg, int64_t m);

BlockParams init_block(const BlockConfig& cfg, int64_t m_mat, Rng& rng);

std::vector<std::pair<std::string, Tensor*>> block_named_params(
    BlockParams& bp);

// Eqs of the nested block: fused sliced input projection, causal conv + silu,
// SSM over h_i heads, gated RMSNorm, sliced output projection. Pre-norm and
// the residual connection live in the model stack, not here.
Tensor block_forward(const BlockConfig& cfg, const BlockParams& bp,
                     const Tensor& u, int64_t m, int64_t chunk);

enum class CountMode { kWeightsOnly, kFull };

// Learnable-parameter count at width m. kWeightsOnly reproduces the published
// per-block table arithmetic (conv BC row counted as 2*d_state); kFull adds
// pre/inner norms, conv bias and dt bias on top of that number.
int64_t block_param_count(const BlockConfig& cfg, int64_t m, CountMode mode);

// Exact element count of the declared tensor shapes at width m (norms and
// biases included). This is what model-level accounting sums.
int64_t block_param_count_physical(const BlockConfig& cfg, int64_t m);

// ---- graph-free inference path ----

// Weight assembly for one granularity, built once per generation session so
// per-token steps do no slicing work.
struct BlockRt {
  SliceDims sd;
  int64_t conv_channels = 0;     // d_i + 2*d_state
  std::vector<float> w_in;       // [2*d_i + 2*n + h_i, d_model]
  std::vector<float> w_conv;     // [conv_channels, 4]
  std::vector<float> c_bias;     // [conv_channels]
  std::vector<float> w_out_s;    // [d_model, d_i], column-sliced copy
};

BlockRt make_block_rt(const BlockConfig& cfg, const BlockParams& bp,
                      int64_t m);

StepState make_block_state(const BlockConfig& cfg, int64_t b, int64_t m);

// Full-sequence forward on raw buffers (sequential scan) that also leaves
// `state` ready for token-by-token continuation. u and out are [b, l, d_model].
void block_prefill(const BlockConfig& cfg, const BlockParams& bp,
                   const BlockRt& rt, const float* u, float* out, int64_t b,
                   int64_t l, StepState& state);

// One-token advance; u and out are [b, d_model].
void block_step(const BlockConfig& cfg, const BlockParams& bp,
                const BlockRt& rt, const float* u, float* out, int64_t b,
                StepState& state);

}  // namespace matmamba
