#include "matmamba/ssd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "matmamba/kernels.hpp"

namespace matmamba {

namespace {

void check_ssm_shapes(const SsmInputs& in) {
  if (in.x.ndim() != 4) throw DimensionError("ssm: x must be [b, l, h, p]");
  const int64_t b = in.x.dim(0), l = in.x.dim(1), h = in.x.dim(2);
  if (in.dt_raw.ndim() != 3 || in.dt_raw.dim(0) != b ||
      in.dt_raw.dim(1) != l || in.dt_raw.dim(2) != h) {
    throw DimensionError("ssm: dt_raw must be [b, l, h]");
  }
  if (in.A_log.ndim() != 1 || in.A_log.dim(0) != h ||
      in.D.ndim() != 1 || in.D.dim(0) != h ||
      in.dt_bias.ndim() != 1 || in.dt_bias.dim(0) != h) {
    throw DimensionError("ssm: A_log/D/dt_bias must be [h]");
  }
  if (in.B.ndim() != 3 || in.B.dim(0) != b || in.B.dim(1) != l ||
      in.C.ndim() != 3 || in.C.dim(0) != b || in.C.dim(1) != l ||
      in.B.dim(2) != in.C.dim(2)) {
    throw DimensionError("ssm: B and C must be [b, l, n]");
  }
}

Tensor pad_seq(const Tensor& t, int64_t pad) {
  if (pad == 0) return t;
  std::vector<int64_t> zshape = t.shape();
  zshape[1] = pad;
  return concat({t, Tensor::zeros(zshape)}, 1);
}

}  // namespace

Tensor causal_conv1d(const Tensor& seq, const Tensor& weights,
                     const Tensor& bias) {
  if (seq.ndim() != 3) throw DimensionError("causal_conv1d: seq must be [b, l, c]");
  const int64_t b = seq.dim(0), l = seq.dim(1), c = seq.dim(2);
  if (weights.ndim() != 2 || weights.dim(0) != c) {
    throw DimensionError("causal_conv1d: weights must be [c, K] with matching channels");
  }
  const int64_t K = weights.dim(1);
  if (bias.ndim() != 1 || bias.dim(0) != c) {
    throw DimensionError("causal_conv1d: bias must be [c]");
  }
  Tensor out = Tensor::uninit(seq.shape());
  for (int64_t bi = 0; bi < b; ++bi) {
    kernels::causal_conv1d(seq.data() + bi * l * c, weights.data(), bias.data(),
                           out.data() + bi * l * c, l, c, K);
  }
  record_op(out, "causal_conv1d", {seq, weights, bias},
            [b, l, c, K](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& ts = o.grad_fn->inputs()[0];
              const Tensor& tw = o.grad_fn->inputs()[1];
              const Tensor& tb = o.grad_fn->inputs()[2];
              const float* px = ts.data();
              const float* pw = tw.data();
              float* dx = sink.wants(ts) ? sink.buffer(ts) : nullptr;
              float* dw = sink.wants(tw) ? sink.buffer(tw) : nullptr;
              float* db = sink.wants(tb) ? sink.buffer(tb) : nullptr;
              // Work in [K, c] layout so channel loops stay contiguous.
              std::vector<float> wt(static_cast<size_t>(K * c));
              for (int64_t ch = 0; ch < c; ++ch) {
                for (int64_t j = 0; j < K; ++j) {
                  wt[static_cast<size_t>(j * c + ch)] = pw[ch * K + j];
                }
              }
              std::vector<float> dwt(static_cast<size_t>(K * c), 0.0f);
              for (int64_t bi = 0; bi < b; ++bi) {
                const float* xb = px + bi * l * c;
                const float* gb = g + bi * l * c;
                float* dxb = dx != nullptr ? dx + bi * l * c : nullptr;
                for (int64_t t = 0; t < l; ++t) {
                  const float* gr = gb + t * c;
                  if (db != nullptr) {
                    for (int64_t ch = 0; ch < c; ++ch) db[ch] += gr[ch];
                  }
                  for (int64_t j = 0; j < K; ++j) {
                    const int64_t s = t - (K - 1) + j;
                    if (s < 0) continue;
                    const float* xr = xb + s * c;
                    if (dxb != nullptr) {
                      const float* wr = wt.data() + j * c;
                      float* dxr = dxb + s * c;
                      for (int64_t ch = 0; ch < c; ++ch) {
                        dxr[ch] += wr[ch] * gr[ch];
                      }
                    }
                    if (dw != nullptr) {
                      float* dwr = dwt.data() + j * c;
                      for (int64_t ch = 0; ch < c; ++ch) {
                        dwr[ch] += xr[ch] * gr[ch];
                      }
                    }
                  }
                }
              }
              if (dw != nullptr) {
                for (int64_t ch = 0; ch < c; ++ch) {
                  for (int64_t j = 0; j < K; ++j) {
                    dw[ch * K + j] += dwt[static_cast<size_t>(j * c + ch)];
                  }
                }
              }
            });
  return out;
}

Tensor ssm_sequential(const SsmInputs& in) {
  check_ssm_shapes(in);
  const int64_t b = in.x.dim(0), l = in.x.dim(1), h = in.x.dim(2),
                p = in.x.dim(3);
  const int64_t n = in.B.dim(2);

  Tensor y = Tensor::uninit(in.x.shape());
  const float* px = in.x.data();
  const float* pdt = in.dt_raw.data();
  const float* pa = in.A_log.data();
  const float* pb = in.B.data();
  const float* pc = in.C.data();
  const float* pd = in.D.data();
  const float* pbias = in.dt_bias.data();
  float* py = y.data();

  std::vector<float> state(static_cast<size_t>(h * p * n));
  for (int64_t bi = 0; bi < b; ++bi) {
    std::fill(state.begin(), state.end(), 0.0f);
    for (int64_t t = 0; t < l; ++t) {
      const float* bt = pb + (bi * l + t) * n;
      const float* ct = pc + (bi * l + t) * n;
      for (int64_t hi = 0; hi < h; ++hi) {
        const float dt =
            kernels::softplus_s(pdt[(bi * l + t) * h + hi] + pbias[hi]);
        const float decay = std::exp(dt * -std::exp(pa[hi]));
        const float* xt = px + ((bi * l + t) * h + hi) * p;
        float* yt = py + ((bi * l + t) * h + hi) * p;
        float* S = state.data() + hi * p * n;
        for (int64_t pi = 0; pi < p; ++pi) {
          const float dx = dt * xt[pi];
          float* Sp = S + pi * n;
          float acc = 0.0f;
          for (int64_t ni = 0; ni < n; ++ni) {
            Sp[ni] = decay * Sp[ni] + dx * bt[ni];
            acc += Sp[ni] * ct[ni];
          }
          yt[pi] = acc + pd[hi] * xt[pi];
        }
      }
    }
  }
  validate_finite(y, "ssm_sequential output");
  return y;
}

Tensor ssm_chunked(const SsmInputs& in, int64_t chunk) {
  check_ssm_shapes(in);
  if (chunk < 1) throw RangeError("ssm_chunked: chunk must be >= 1");
  const int64_t b = in.x.dim(0), l = in.x.dim(1), h = in.x.dim(2),
                p = in.x.dim(3);
  const int64_t n = in.B.dim(2);
  const int64_t c = std::min(chunk, l);
  const int64_t nc = (l + c - 1) / c;
  const int64_t lp = nc * c;

  // dt first, then zero padding, so padded steps carry decay 1 and ingest 0.
  Tensor dt = softplus(add(in.dt_raw, in.dt_bias));  // [b, l, h]
  dt = pad_seq(dt, lp - l);
  Tensor xp = pad_seq(in.x, lp - l);
  Tensor Bp = pad_seq(in.B, lp - l);
  Tensor Cp = pad_seq(in.C, lp - l);

  Tensor A = negate(exp(in.A_log));                          // [h]
  Tensor dA = mul(dt, A);                                    // [b, lp, h]
  Tensor dac = permute(reshape(dA, {b, nc, c, h}), {0, 3, 1, 2});  // [b,h,nc,c]
  Tensor dtc = permute(reshape(dt, {b, nc, c, h}), {0, 3, 1, 2});  // [b,h,nc,c]
  Tensor cum = cumsum(dac, 3);  // inclusive log-decay within each chunk

  // Pairwise decay L[t,s] = exp(cum[t]-cum[s]) for t >= s. Masking happens
  // before exp: entries with t < s would blow up otherwise.
  std::vector<float> trilv(static_cast<size_t>(c * c), 0.0f);
  for (int64_t t = 0; t < c; ++t) {
    for (int64_t s = 0; s <= t; ++s) trilv[static_cast<size_t>(t * c + s)] = 1.0f;
  }
  Tensor tril = Tensor::from({c, c}, std::move(trilv));
  Tensor seg = sub(reshape(cum, {b, h, nc, c, 1}), reshape(cum, {b, h, nc, 1, c}));
  Tensor M = mul(exp(mul(seg, tril)), tril);  // [b,h,nc,c,c]

  Tensor Bc = reshape(Bp, {b, nc, c, n});
  Tensor Cc = reshape(Cp, {b, nc, c, n});
  Tensor G = bmm_nt(Cc, Bc);  // [b,nc,c,c], shared across heads
  Tensor att = mul(mul(M, reshape(G, {b, 1, nc, c, c})),
                   reshape(dtc, {b, h, nc, 1, c}));
  Tensor xc = permute(reshape(xp, {b, nc, c, h, p}), {0, 3, 1, 2, 4});
  Tensor y_intra = bmm(att, xc);  // [b,h,nc,c,p]

  // Per-chunk state ingest T_k = sum_s exp(cum_end - cum[s]) * dt_s * x_s B_s^T.
  Tensor cum_last = slice(cum, 3, c - 1, 1);            // [b,h,nc,1]
  Tensor w = mul(exp(sub(cum_last, cum)), dtc);         // [b,h,nc,c]
  Tensor xw = mul(xc, reshape(w, {b, h, nc, c, 1}));    // [b,h,nc,c,p]
  Tensor Bx = expand(reshape(Bc, {b, 1, nc, c, n}), {b, h, nc, c, n});
  Tensor T = bmm_tn(xw, Bx);                            // [b,h,nc,p,n]
  Tensor cde = exp(reshape(cum_last, {b, h, nc}));      // whole-chunk decay

  // Carry the state across chunks; S_list[k] is the state entering chunk k.
  std::vector<Tensor> s_list;
  s_list.reserve(static_cast<size_t>(nc));
  Tensor s_prev = Tensor::zeros({b, h, p, n});
  for (int64_t k = 0; k < nc; ++k) {
    s_list.push_back(reshape(s_prev, {b, h, 1, p, n}));
    Tensor dk = reshape(slice(cde, 2, k, 1), {b, h, 1, 1});
    Tensor tk = reshape(slice(T, 2, k, 1), {b, h, p, n});
    s_prev = add(mul(s_prev, dk), tk);
  }
  Tensor s_all = concat(s_list, 2);  // [b,h,nc,p,n]

  Tensor Cx = expand(reshape(Cc, {b, 1, nc, c, n}), {b, h, nc, c, n});
  Tensor y_inter =
      mul(bmm_nt(Cx, s_all), reshape(exp(cum), {b, h, nc, c, 1}));
  Tensor y_d = mul(xc, reshape(in.D, {h, 1, 1, 1}));
  Tensor y = add(add(y_intra, y_inter), y_d);  // [b,h,nc,c,p]

  Tensor yt = reshape(permute(y, {0, 2, 3, 1, 4}), {b, lp, h, p});
  if (lp != l) yt = slice(yt, 1, 0, l);
  validate_finite(yt, "ssm_chunked output");
  return yt;
}

StepState make_step_state(int64_t b, int64_t h, int64_t p, int64_t n,
                          int64_t conv_channels, int64_t K) {
  StepState st;
  st.ssm_state = Tensor::zeros({b, h, p, n});
  st.conv_state = Tensor::zeros({b, conv_channels, K - 1});
  return st;
}

void ssm_step(StepState& state, const Tensor& x_t, const Tensor& dt_t,
              const Tensor& B_t, const Tensor& C_t, const Tensor& A_log,
              const Tensor& D, const Tensor& dt_bias, Tensor& y_t) {
  const int64_t b = state.ssm_state.dim(0), h = state.ssm_state.dim(1),
                p = state.ssm_state.dim(2), n = state.ssm_state.dim(3);
  if (x_t.ndim() != 3 || x_t.dim(0) != b || x_t.dim(1) != h ||
      x_t.dim(2) != p) {
    throw DimensionError("ssm_step: x_t must be [b, h, p]");
  }
  if (dt_t.ndim() != 2 || dt_t.dim(0) != b || dt_t.dim(1) != h) {
    throw DimensionError("ssm_step: dt_t must be [b, h]");
  }
  if (B_t.ndim() != 2 || B_t.dim(0) != b || B_t.dim(1) != n ||
      C_t.ndim() != 2 || C_t.dim(0) != b || C_t.dim(1) != n) {
    throw DimensionError("ssm_step: B_t/C_t must be [b, n]");
  }
  if (y_t.ndim() != 3 || y_t.dim(0) != b || y_t.dim(1) != h ||
      y_t.dim(2) != p) {
    throw DimensionError("ssm_step: y_t must be [b, h, p]");
  }
  const float* px = x_t.data();
  const float* pdt = dt_t.data();
  const float* pb = B_t.data();
  const float* pc = C_t.data();
  const float* pa = A_log.data();
  const float* pd = D.data();
  const float* pbias = dt_bias.data();
  float* S = state.ssm_state.data();
  float* py = y_t.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    const float* bt = pb + bi * n;
    const float* ct = pc + bi * n;
    for (int64_t hi = 0; hi < h; ++hi) {
      const float dt = kernels::softplus_s(pdt[bi * h + hi] + pbias[hi]);
      const float decay = std::exp(dt * -std::exp(pa[hi]));
      const float* xt = px + (bi * h + hi) * p;
      float* yt = py + (bi * h + hi) * p;
      float* Sh = S + (bi * h + hi) * p * n;
      for (int64_t pi = 0; pi < p; ++pi) {
        const float dx = dt * xt[pi];
        float* Sp = Sh + pi * n;
        float acc = 0.0f;
        for (int64_t ni = 0; ni < n; ++ni) {
          Sp[ni] = decay * Sp[ni] + dx * bt[ni];
          acc += Sp[ni] * ct[ni];
        }
        yt[pi] = acc + pd[hi] * xt[pi];
      }
    }
  }
}

void causal_conv1d_step(StepState& state, const Tensor& x_t,
                        const Tensor& weights, const Tensor& bias,
                        Tensor& out) {
  const int64_t b = state.conv_state.dim(0), c = state.conv_state.dim(1),
                Km1 = state.conv_state.dim(2);
  const int64_t K = Km1 + 1;
  if (x_t.ndim() != 2 || x_t.dim(0) != b || x_t.dim(1) != c) {
    throw DimensionError("causal_conv1d_step: x_t must be [b, c]");
  }
  if (weights.dim(0) != c || weights.dim(1) != K) {
    throw DimensionError("causal_conv1d_step: weights must be [c, K]");
  }
  const float* px = x_t.data();
  const float* pw = weights.data();
  const float* pbias = bias.data();
  float* st = state.conv_state.data();
  float* po = out.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ch = 0; ch < c; ++ch) {
      float* win = st + (bi * c + ch) * Km1;
      const float xv = px[bi * c + ch];
      const float* w = pw + ch * K;
      float acc = pbias[ch] + w[K - 1] * xv;
      for (int64_t j = 0; j < Km1; ++j) acc += w[j] * win[j];
      // shift the window left and append the new input
      for (int64_t j = 0; j + 1 < Km1; ++j) win[j] = win[j + 1];
      win[Km1 - 1] = xv;
      po[bi * c + ch] = acc;
    }
  }
}

}  // namespace matmamba
