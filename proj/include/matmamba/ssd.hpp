#pragma once

#include "matmamba/ops.hpp"

namespace matmamba {

// Inputs to the state space transform. A is parameterized as -exp(A_log) so
// the per-step decay exp(dt * A) stays in (0, 1]; dt itself is
// softplus(dt_raw + dt_bias) >= 0.
struct SsmInputs {
  Tensor x;        // [b, l, h, p]
  Tensor dt_raw;   // [b, l, h]
  Tensor A_log;    // [h]
  Tensor B;        // [b, l, n]
  Tensor C;        // [b, l, n]
  Tensor D;        // [h]
  Tensor dt_bias;  // [h]
};

// Depthwise causal convolution over [b, l, c] with weights [c, K] and
// bias [c]; zero left padding of K-1, so output t never sees t+1.
Tensor causal_conv1d(const Tensor& seq, const Tensor& weights,
                     const Tensor& bias);

// Reference recurrence, one timestep at a time. Graph-free: this is the
// correctness oracle the chunked path is checked against.
Tensor ssm_sequential(const SsmInputs& in);

// Chunked scan: matrixized intra-chunk form plus inter-chunk state carry.
// Mathematically identical to ssm_sequential, differentiable.
Tensor ssm_chunked(const SsmInputs& in, int64_t chunk);

// Recurrent inference state for one block.
struct StepState {
  Tensor ssm_state;   // [b, h, p, n]
  Tensor conv_state;  // [b, c, K-1], last K-1 inputs per channel
};

StepState make_step_state(int64_t b, int64_t h, int64_t p, int64_t n,
                          int64_t conv_channels, int64_t K);

// One recurrence step. Updates state.ssm_state in place and writes
// y_t [b, h, p]. Feeding a sequence token by token reproduces
// ssm_sequential.
void ssm_step(StepState& state, const Tensor& x_t, const Tensor& dt_t,
              const Tensor& B_t, const Tensor& C_t, const Tensor& A_log,
              const Tensor& D, const Tensor& dt_bias, Tensor& y_t);

// Advances the conv window with x_t [b, c] and writes the conv output.
void causal_conv1d_step(StepState& state, const Tensor& x_t,
                        const Tensor& weights, const Tensor& bias,
                        Tensor& out);

}  // namespace matmamba
