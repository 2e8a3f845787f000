#include "matmamba/block.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "matmamba/kernels.hpp"

namespace matmamba {

void BlockConfig::validate() const {
  if (d_model <= 0 || expand <= 0 || d_head <= 0 || d_state <= 0) {
    throw DimensionError("block config fields must be positive");
  }
  if (d_conv != 4) {
    throw DimensionError("block config: conv kernel size is fixed at 4");
  }
  if (d_inner() % d_head != 0) {
    throw GranularityError("block config: expand*d_model must divide by d_head");
  }
}

SliceDims resolve_slice(const BlockConfig& cfg, int64_t m) {
  if (m <= 0 || m > cfg.d_model) {
    std::ostringstream os;
    os << "granularity m=" << m << " outside (0, " << cfg.d_model << "]";
    throw RangeError(os.str());
  }
  const int64_t d_i = cfg.expand * m;
  if (d_i % cfg.d_head != 0) {
    std::ostringstream os;
    os << "granularity m=" << m << " invalid: " << d_i << " mod " << cfg.d_head
       << " != 0 (needs an integer head count)";
    throw GranularityError(os.str());
  }
  return {m, d_i, d_i / cfg.d_head};
}

std::vector<TensorSpec> block_tensor_specs(const BlockConfig& cfg, int64_t m) {
  const SliceDims sd = resolve_slice(cfg, m);
  const int64_t d = cfg.d_model;
  const int64_t n = cfg.d_state;
  const int64_t K = cfg.d_conv;
  return {
      {"w_z", {sd.d_i, d}},
      {"w_x", {sd.d_i, d}},
      {"w_b", {n, d}},
      {"w_c", {n, d}},
      {"w_dt", {sd.h_i, d}},
      {"dt_bias", {sd.h_i}},
      {"a_log", {sd.h_i}},
      {"d", {sd.h_i}},
      {"w_conv_x", {sd.d_i, K}},
      {"w_conv_bc", {2 * n, K}},
      {"conv_bias", {sd.d_i + 2 * n}},
      {"inner_norm_w", {sd.d_i}},
      {"pre_norm_w", {d}},
      {"w_out", {d, sd.d_i}},
  };
}

namespace {

void fill_normal(Tensor& t, Rng& rng, float stddev) {
  float* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = rng.normal_trunc(stddev);
}

void fill_const(Tensor& t, float v) {
  std::fill(t.data(), t.data() + t.numel(), v);
}

}  // namespace

BlockParams init_block(const BlockConfig& cfg, int64_t m_mat, Rng& rng) {
  cfg.validate();
  const SliceDims sd = resolve_slice(cfg, m_mat);
  BlockParams bp;
  bp.m_mat = m_mat;
  for (const TensorSpec& spec : block_tensor_specs(cfg, m_mat)) {
    Tensor t = Tensor::zeros(spec.shape, /*requires_grad=*/true);
    if (spec.name == "a_log") {
      // decay rate -A drawn log-ish in [1, 16)
      float* p = t.data();
      for (int64_t i = 0; i < t.numel(); ++i) {
        p[i] = static_cast<float>(std::log(rng.uniform(1.0, 16.0)));
      }
    } else if (spec.name == "dt_bias") {
      // softplus(dt_bias) lands log-uniformly in [1e-3, 1e-1]
      float* p = t.data();
      for (int64_t i = 0; i < t.numel(); ++i) {
        const double dt =
            std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        p[i] = static_cast<float>(dt + std::log(-std::expm1(-dt)));
      }
    } else if (spec.name == "d" || spec.name == "inner_norm_w" ||
               spec.name == "pre_norm_w") {
      fill_const(t, 1.0f);
    } else if (spec.name == "conv_bias") {
      fill_const(t, 0.0f);
    } else {
      fill_normal(t, rng, 0.02f);
    }
    if (spec.name == "w_z") bp.w_z = t;
    else if (spec.name == "w_x") bp.w_x = t;
    else if (spec.name == "w_b") bp.w_b = t;
    else if (spec.name == "w_c") bp.w_c = t;
    else if (spec.name == "w_dt") bp.w_dt = t;
    else if (spec.name == "dt_bias") bp.dt_bias = t;
    else if (spec.name == "a_log") bp.a_log = t;
    else if (spec.name == "d") bp.d = t;
    else if (spec.name == "w_conv_x") bp.w_conv_x = t;
    else if (spec.name == "w_conv_bc") bp.w_conv_bc = t;
    else if (spec.name == "conv_bias") bp.conv_bias = t;
    else if (spec.name == "inner_norm_w") bp.inner_norm_w = t;
    else if (spec.name == "pre_norm_w") bp.pre_norm_w = t;
    else if (spec.name == "w_out") bp.w_out = t;
  }
  (void)sd;
  return bp;
}

std::vector<std::pair<std::string, Tensor*>> block_named_params(
    BlockParams& bp) {
  return {
      {"w_z", &bp.w_z},
      {"w_x", &bp.w_x},
      {"w_b", &bp.w_b},
      {"w_c", &bp.w_c},
      {"w_dt", &bp.w_dt},
      {"dt_bias", &bp.dt_bias},
      {"a_log", &bp.a_log},
      {"d", &bp.d},
      {"w_conv_x", &bp.w_conv_x},
      {"w_conv_bc", &bp.w_conv_bc},
      {"conv_bias", &bp.conv_bias},
      {"inner_norm_w", &bp.inner_norm_w},
      {"pre_norm_w", &bp.pre_norm_w},
      {"w_out", &bp.w_out},
  };
}

namespace {

SliceDims resolve_runtime_slice(const BlockConfig& cfg, const BlockParams& bp,
                                int64_t m) {
  SliceDims sd = resolve_slice(cfg, m);
  if (m > bp.m_mat) {
    std::ostringstream os;
    os << "granularity m=" << m << " exceeds materialized width " << bp.m_mat;
    throw GranularityError(os.str());
  }
  return sd;
}

}  // namespace

Tensor block_forward(const BlockConfig& cfg, const BlockParams& bp,
                     const Tensor& u, int64_t m, int64_t chunk) {
  if (u.ndim() != 3 || u.dim(2) != cfg.d_model) {
    throw DimensionError("block_forward: input must be [b, l, d_model]");
  }
  const SliceDims sd = resolve_runtime_slice(cfg, bp, m);
  const int64_t b = u.dim(0), l = u.dim(1), d = cfg.d_model;
  const int64_t n = cfg.d_state;
  const int64_t d_i = sd.d_i, h_i = sd.h_i, p = cfg.d_head;
  const int64_t d_i_mat = cfg.expand * bp.m_mat;

  // Fused input projection over the sliced weight rows.
  Tensor w_in = concat({prefix_slice(bp.w_z, 0, d_i),
                        prefix_slice(bp.w_x, 0, d_i), bp.w_b, bp.w_c,
                        prefix_slice(bp.w_dt, 0, h_i)},
                       0);
  Tensor u2 = reshape(u, {b * l, d});
  Tensor zxbcdt = matmul_nt(u2, w_in);  // [b*l, 2*d_i + 2*n + h_i]
  Tensor z = slice(zxbcdt, 1, 0, d_i);
  Tensor xbc = slice(zxbcdt, 1, d_i, d_i + 2 * n);
  Tensor dt = slice(zxbcdt, 1, 2 * d_i + 2 * n, h_i);

  Tensor w_conv = concat({prefix_slice(bp.w_conv_x, 0, d_i), bp.w_conv_bc}, 0);
  Tensor c_bias = concat({prefix_slice(bp.conv_bias, 0, d_i),
                          slice(bp.conv_bias, 0, d_i_mat, 2 * n)},
                         0);
  Tensor conv_out =
      causal_conv1d(reshape(xbc, {b, l, d_i + 2 * n}), w_conv, c_bias);
  Tensor xbc_act = silu(conv_out);

  SsmInputs in;
  in.x = reshape(slice(xbc_act, 2, 0, d_i), {b, l, h_i, p});
  in.B = slice(xbc_act, 2, d_i, n);
  in.C = slice(xbc_act, 2, d_i + n, n);
  in.dt_raw = reshape(dt, {b, l, h_i});
  in.A_log = prefix_slice(bp.a_log, 0, h_i);
  in.D = prefix_slice(bp.d, 0, h_i);
  in.dt_bias = prefix_slice(bp.dt_bias, 0, h_i);
  Tensor y = ssm_chunked(in, chunk);  // [b, l, h_i, p]

  Tensor gated = mul(reshape(y, {b * l, d_i}), silu(z));
  Tensor normed = rmsnorm(gated, prefix_slice(bp.inner_norm_w, 0, d_i));
  Tensor w_out_s = (d_i == d_i_mat) ? bp.w_out : slice(bp.w_out, 1, 0, d_i);
  Tensor out = matmul_nt(normed, w_out_s);  // [b*l, d_model]
  return reshape(out, {b, l, d});
}

int64_t block_param_count(const BlockConfig& cfg, int64_t m, CountMode mode) {
  const SliceDims sd = resolve_slice(cfg, m);
  const int64_t d = cfg.d_model;
  const int64_t n = cfg.d_state;
  // The published per-block table: W_z, W_x, W_B, W_C, W_dt, A, D, conv_x,
  // conv_BC (counted as 2*d_state in the source table), W_out.
  int64_t count = 2 * sd.d_i * d       // W_z + W_x
                  + 2 * n * d          // W_B + W_C
                  + sd.h_i * d         // W_dt
                  + 2 * sd.h_i         // A + D
                  + sd.d_i * cfg.d_conv  // conv_x
                  + 2 * n              // conv_BC per the table's arithmetic
                  + d * sd.d_i;        // W_out
  if (mode == CountMode::kFull) {
    count += d                      // pre_norm_w
             + sd.d_i               // inner_norm_w
             + (sd.d_i + 2 * n)     // conv_bias
             + sd.h_i;              // dt_bias
  }
  return count;
}

int64_t block_param_count_physical(const BlockConfig& cfg, int64_t m) {
  int64_t total = 0;
  for (const TensorSpec& spec : block_tensor_specs(cfg, m)) {
    int64_t e = 1;
    for (int64_t dim : spec.shape) e *= dim;
    total += e;
  }
  return total;
}

// ---- graph-free inference path ----

BlockRt make_block_rt(const BlockConfig& cfg, const BlockParams& bp,
                      int64_t m) {
  BlockRt rt;
  rt.sd = resolve_runtime_slice(cfg, bp, m);
  const int64_t d = cfg.d_model;
  const int64_t n = cfg.d_state;
  const int64_t K = cfg.d_conv;
  const int64_t d_i = rt.sd.d_i, h_i = rt.sd.h_i;
  const int64_t d_i_mat = cfg.expand * bp.m_mat;
  rt.conv_channels = d_i + 2 * n;

  rt.w_in.resize(static_cast<size_t>((2 * d_i + 2 * n + h_i) * d));
  float* w = rt.w_in.data();
  std::memcpy(w, bp.w_z.data(), static_cast<size_t>(d_i * d) * sizeof(float));
  w += d_i * d;
  std::memcpy(w, bp.w_x.data(), static_cast<size_t>(d_i * d) * sizeof(float));
  w += d_i * d;
  std::memcpy(w, bp.w_b.data(), static_cast<size_t>(n * d) * sizeof(float));
  w += n * d;
  std::memcpy(w, bp.w_c.data(), static_cast<size_t>(n * d) * sizeof(float));
  w += n * d;
  std::memcpy(w, bp.w_dt.data(), static_cast<size_t>(h_i * d) * sizeof(float));

  rt.w_conv.resize(static_cast<size_t>(rt.conv_channels * K));
  std::memcpy(rt.w_conv.data(), bp.w_conv_x.data(),
              static_cast<size_t>(d_i * K) * sizeof(float));
  std::memcpy(rt.w_conv.data() + d_i * K, bp.w_conv_bc.data(),
              static_cast<size_t>(2 * n * K) * sizeof(float));

  rt.c_bias.resize(static_cast<size_t>(rt.conv_channels));
  std::memcpy(rt.c_bias.data(), bp.conv_bias.data(),
              static_cast<size_t>(d_i) * sizeof(float));
  std::memcpy(rt.c_bias.data() + d_i, bp.conv_bias.data() + d_i_mat,
              static_cast<size_t>(2 * n) * sizeof(float));

  rt.w_out_s.resize(static_cast<size_t>(d * d_i));
  for (int64_t r = 0; r < d; ++r) {
    std::memcpy(rt.w_out_s.data() + r * d_i, bp.w_out.data() + r * d_i_mat,
                static_cast<size_t>(d_i) * sizeof(float));
  }
  return rt;
}

StepState make_block_state(const BlockConfig& cfg, int64_t b, int64_t m) {
  const SliceDims sd = resolve_slice(cfg, m);
  return make_step_state(b, sd.h_i, cfg.d_head, cfg.d_state,
                         sd.d_i + 2 * cfg.d_state, cfg.d_conv);
}

namespace {

// Shared tail of prefill/step: gate, norm, output projection for `rows`
// positions. y/z are [rows, d_i].
void finish_rows(const BlockConfig& cfg, const BlockParams& bp,
                 const BlockRt& rt, const float* y, const float* z,
                 float* out, int64_t rows) {
  const int64_t d_i = rt.sd.d_i;
  const int64_t d = cfg.d_model;
  std::vector<float> tmp(static_cast<size_t>(rows * d_i));
  for (int64_t r = 0; r < rows; ++r) {
    const float* yr = y + r * d_i;
    const float* zr = z + r * d_i;
    float* tr = tmp.data() + r * d_i;
    for (int64_t i = 0; i < d_i; ++i) {
      tr[i] = yr[i] * kernels::silu_s(zr[i]);
    }
    kernels::rmsnorm_row(tr, bp.inner_norm_w.data(), tr, d_i, 1e-5f);
  }
  kernels::gemm_nt(tmp.data(), rt.w_out_s.data(), out, rows, d_i, d, false);
}

}  // namespace

void block_prefill(const BlockConfig& cfg, const BlockParams& bp,
                   const BlockRt& rt, const float* u, float* out, int64_t b,
                   int64_t l, StepState& state) {
  const int64_t d = cfg.d_model, n = cfg.d_state, p = cfg.d_head;
  const int64_t d_i = rt.sd.d_i, h_i = rt.sd.h_i;
  const int64_t cch = rt.conv_channels;
  const int64_t rows = 2 * d_i + 2 * n + h_i;
  const int64_t K = cfg.d_conv;

  std::vector<float> zxbcdt(static_cast<size_t>(b * l * rows));
  kernels::gemm_nt(u, rt.w_in.data(), zxbcdt.data(), b * l, d, rows, false);

  // split columns: z | xBC | dt
  std::vector<float> zbuf(static_cast<size_t>(b * l * d_i));
  std::vector<float> xbc(static_cast<size_t>(b * l * cch));
  std::vector<float> dtbuf(static_cast<size_t>(b * l * h_i));
  for (int64_t r = 0; r < b * l; ++r) {
    const float* src = zxbcdt.data() + r * rows;
    std::memcpy(zbuf.data() + r * d_i, src, static_cast<size_t>(d_i) * sizeof(float));
    std::memcpy(xbc.data() + r * cch, src + d_i,
                static_cast<size_t>(cch) * sizeof(float));
    std::memcpy(dtbuf.data() + r * h_i, src + d_i + cch,
                static_cast<size_t>(h_i) * sizeof(float));
  }

  // capture the conv window (last K-1 raw inputs) before convolving
  float* cw = state.conv_state.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t j = 0; j < K - 1; ++j) {
      const int64_t t = l - (K - 1) + j;
      for (int64_t ch = 0; ch < cch; ++ch) {
        cw[(bi * cch + ch) * (K - 1) + j] =
            t >= 0 ? xbc[static_cast<size_t>((bi * l + t) * cch + ch)] : 0.0f;
      }
    }
  }

  std::vector<float> conv(static_cast<size_t>(b * l * cch));
  for (int64_t bi = 0; bi < b; ++bi) {
    kernels::causal_conv1d(xbc.data() + bi * l * cch, rt.w_conv.data(),
                           rt.c_bias.data(), conv.data() + bi * l * cch, l,
                           cch, K);
  }
  for (float& v : conv) v = kernels::silu_s(v);

  // sequential scan, leaving the final state behind
  const float* pa = bp.a_log.data();
  const float* pd = bp.d.data();
  const float* pbias = bp.dt_bias.data();
  float* S = state.ssm_state.data();
  std::vector<float> ybuf(static_cast<size_t>(b * l * d_i));
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t t = 0; t < l; ++t) {
      const float* row = conv.data() + (bi * l + t) * cch;
      const float* xt = row;              // [d_i]
      const float* bt = row + d_i;        // [n]
      const float* ct = row + d_i + n;    // [n]
      const float* dtr = dtbuf.data() + (bi * l + t) * h_i;
      float* yt = ybuf.data() + (bi * l + t) * d_i;
      for (int64_t hi = 0; hi < h_i; ++hi) {
        const float dt = kernels::softplus_s(dtr[hi] + pbias[hi]);
        const float decay = std::exp(dt * -std::exp(pa[hi]));
        float* Sh = S + (bi * h_i + hi) * p * n;
        for (int64_t pi = 0; pi < p; ++pi) {
          const float xv = xt[hi * p + pi];
          const float dx = dt * xv;
          float* Sp = Sh + pi * n;
          float acc = 0.0f;
          for (int64_t ni = 0; ni < n; ++ni) {
            Sp[ni] = decay * Sp[ni] + dx * bt[ni];
            acc += Sp[ni] * ct[ni];
          }
          yt[hi * p + pi] = acc + pd[hi] * xv;
        }
      }
    }
  }
  finish_rows(cfg, bp, rt, ybuf.data(), zbuf.data(), out, b * l);
}

void block_step(const BlockConfig& cfg, const BlockParams& bp,
                const BlockRt& rt, const float* u, float* out, int64_t b,
                StepState& state) {
  const int64_t d = cfg.d_model, n = cfg.d_state, p = cfg.d_head;
  const int64_t d_i = rt.sd.d_i, h_i = rt.sd.h_i;
  const int64_t cch = rt.conv_channels;
  const int64_t rows = 2 * d_i + 2 * n + h_i;
  const int64_t K = cfg.d_conv;
  const int64_t Km1 = K - 1;

  std::vector<float> zxbcdt(static_cast<size_t>(b * rows));
  kernels::gemm_nt(u, rt.w_in.data(), zxbcdt.data(), b, d, rows, false);

  std::vector<float> conv(static_cast<size_t>(b * cch));
  float* cw = state.conv_state.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    const float* xrow = zxbcdt.data() + bi * rows + d_i;  // raw xBC input
    for (int64_t ch = 0; ch < cch; ++ch) {
      float* win = cw + (bi * cch + ch) * Km1;
      const float* w = rt.w_conv.data() + ch * K;
      float acc = rt.c_bias[static_cast<size_t>(ch)] + w[K - 1] * xrow[ch];
      for (int64_t j = 0; j < Km1; ++j) acc += w[j] * win[j];
      for (int64_t j = 0; j + 1 < Km1; ++j) win[j] = win[j + 1];
      win[Km1 - 1] = xrow[ch];
      conv[static_cast<size_t>(bi * cch + ch)] = kernels::silu_s(acc);
    }
  }

  const float* pa = bp.a_log.data();
  const float* pd = bp.d.data();
  const float* pbias = bp.dt_bias.data();
  float* S = state.ssm_state.data();
  std::vector<float> ybuf(static_cast<size_t>(b * d_i));
  std::vector<float> zbuf(static_cast<size_t>(b * d_i));
  for (int64_t bi = 0; bi < b; ++bi) {
    const float* row = conv.data() + bi * cch;
    const float* bt = row + d_i;
    const float* ct = row + d_i + n;
    const float* dtr = zxbcdt.data() + bi * rows + d_i + cch;
    std::memcpy(zbuf.data() + bi * d_i, zxbcdt.data() + bi * rows,
                static_cast<size_t>(d_i) * sizeof(float));
    float* yt = ybuf.data() + bi * d_i;
    for (int64_t hi = 0; hi < h_i; ++hi) {
      const float dt = kernels::softplus_s(dtr[hi] + pbias[hi]);
      const float decay = std::exp(dt * -std::exp(pa[hi]));
      float* Sh = S + (bi * h_i + hi) * p * n;
      for (int64_t pi = 0; pi < p; ++pi) {
        const float xv = row[hi * p + pi];
        const float dx = dt * xv;
        float* Sp = Sh + pi * n;
        float acc = 0.0f;
        for (int64_t ni = 0; ni < n; ++ni) {
          Sp[ni] = decay * Sp[ni] + dx * bt[ni];
          acc += Sp[ni] * ct[ni];
        }
        yt[hi * p + pi] = acc + pd[hi] * xv;
      }
    }
  }
  finish_rows(cfg, bp, rt, ybuf.data(), zbuf.data(), out, b);
}

}  // namespace matmamba
