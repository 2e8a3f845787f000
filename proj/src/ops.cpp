#include "matmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "matmamba/kernels.hpp"

namespace matmamba {

namespace {

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

int64_t prod(const std::vector<int64_t>& s, size_t from, size_t to) {
  int64_t p = 1;
  for (size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

std::vector<int64_t> row_major_strides(const std::vector<int64_t>& shape) {
  std::vector<int64_t> st(shape.size());
  int64_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    st[i] = acc;
    acc *= shape[i];
  }
  return st;
}

// Right-aligned broadcast iteration plan for two operands.
struct BcastPlan {
  std::vector<int64_t> out_shape;
  std::vector<int64_t> sa, sb;  // effective strides per out dim (0 = broadcast)
  int64_t n_out = 0;
  bool same_shape = false;
};

BcastPlan make_plan(const std::vector<int64_t>& a,
                    const std::vector<int64_t>& b) {
  BcastPlan p;
  p.out_shape = broadcast_shape(a, b);
  const size_t nd = p.out_shape.size();
  p.sa.assign(nd, 0);
  p.sb.assign(nd, 0);
  const auto sta = row_major_strides(a);
  const auto stb = row_major_strides(b);
  for (size_t i = 0; i < nd; ++i) {
    const size_t off_a = nd - a.size();
    const size_t off_b = nd - b.size();
    if (i >= off_a && a[i - off_a] != 1) p.sa[i] = sta[i - off_a];
    if (i >= off_b && b[i - off_b] != 1) p.sb[i] = stb[i - off_b];
  }
  p.n_out = prod(p.out_shape, 0, nd);
  p.same_shape = (a == b);
  return p;
}

// Visits every output element in row-major order with both input offsets.
template <typename F>
void for_each_pair(const BcastPlan& p, F&& f) {
  const size_t nd = p.out_shape.size();
  std::vector<int64_t> ctr(nd, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < p.n_out; ++i) {
    f(i, ia, ib);
    for (size_t d = nd; d-- > 0;) {
      if (++ctr[d] < p.out_shape[d]) {
        ia += p.sa[d];
        ib += p.sb[d];
        break;
      }
      ctr[d] = 0;
      ia -= p.sa[d] * (p.out_shape[d] - 1);
      ib -= p.sb[d] * (p.out_shape[d] - 1);
    }
  }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary(BinKind kind, const char* name, const Tensor& a,
              const Tensor& b) {
  BcastPlan plan = make_plan(a.shape(), b.shape());
  Tensor out = Tensor::uninit(plan.out_shape);
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  if (plan.same_shape) {
    const int64_t n = plan.n_out;
    switch (kind) {
      case BinKind::Add:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
      case BinKind::Sub:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
      case BinKind::Mul:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
    }
  } else {
    switch (kind) {
      case BinKind::Add:
        for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t ib) {
          po[i] = pa[ia] + pb[ib];
        });
        break;
      case BinKind::Sub:
        for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t ib) {
          po[i] = pa[ia] - pb[ib];
        });
        break;
      case BinKind::Mul:
        for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t ib) {
          po[i] = pa[ia] * pb[ib];
        });
        break;
    }
  }

  record_op(out, name, {a, b},
            [kind, plan](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& ta = o.grad_fn->inputs()[0];
              const Tensor& tb = o.grad_fn->inputs()[1];
              const bool wa = sink.wants(ta);
              const bool wb = sink.wants(tb);
              float* da = wa ? sink.buffer(ta) : nullptr;
              float* db = wb ? sink.buffer(tb) : nullptr;
              const float* pa = ta.data();
              const float* pb = tb.data();
              if (plan.same_shape) {
                const int64_t n = plan.n_out;
                switch (kind) {
                  case BinKind::Add:
                    for (int64_t i = 0; i < n; ++i) {
                      if (wa) da[i] += g[i];
                      if (wb) db[i] += g[i];
                    }
                    break;
                  case BinKind::Sub:
                    for (int64_t i = 0; i < n; ++i) {
                      if (wa) da[i] += g[i];
                      if (wb) db[i] -= g[i];
                    }
                    break;
                  case BinKind::Mul:
                    for (int64_t i = 0; i < n; ++i) {
                      if (wa) da[i] += g[i] * pb[i];
                      if (wb) db[i] += g[i] * pa[i];
                    }
                    break;
                }
                return;
              }
              switch (kind) {
                case BinKind::Add:
                  for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t ib) {
                    if (wa) da[ia] += g[i];
                    if (wb) db[ib] += g[i];
                  });
                  break;
                case BinKind::Sub:
                  for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t ib) {
                    if (wa) da[ia] += g[i];
                    if (wb) db[ib] -= g[i];
                  });
                  break;
                case BinKind::Mul:
                  for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t ib) {
                    if (wa) da[ia] += g[i] * pb[ib];
                    if (wb) db[ib] += g[i] * pa[ia];
                  });
                  break;
              }
            });
  return out;
}

enum class Gemm { NN, NT, TN };

void run_gemm(Gemm kind, const float* a, const float* b, float* c, int64_t m,
              int64_t k, int64_t n, bool acc) {
  switch (kind) {
    case Gemm::NN:
      gemm_nn(a, b, c, m, k, n, acc);
      break;
    case Gemm::NT:
      gemm_nt(a, b, c, m, k, n, acc);
      break;
    case Gemm::TN:
      gemm_tn(a, b, c, m, k, n, acc);
      break;
  }
}

// Shared 2-D/batched matmul. Leading dims (if any) must match exactly.
Tensor matmul_impl(Gemm kind, const char* name, const Tensor& a,
                   const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size()) {
    throw DimensionError(std::string(name) + ": rank mismatch " +
                         shape_str(sa) + " vs " + shape_str(sb));
  }
  const size_t nd = sa.size();
  for (size_t i = 0; i + 2 < nd; ++i) {
    if (sa[i] != sb[i]) {
      throw DimensionError(std::string(name) + ": batch dims differ " +
                           shape_str(sa) + " vs " + shape_str(sb));
    }
  }
  int64_t m = 0, k = 0, n = 0;
  switch (kind) {
    case Gemm::NN:  // [.., m, k] x [.., k, n]
      m = sa[nd - 2];
      k = sa[nd - 1];
      n = sb[nd - 1];
      if (sb[nd - 2] != k) {
        throw DimensionError(std::string(name) + ": inner dims disagree " +
                             shape_str(sa) + " vs " + shape_str(sb));
      }
      break;
    case Gemm::NT:  // [.., m, k] x [.., n, k]
      m = sa[nd - 2];
      k = sa[nd - 1];
      n = sb[nd - 2];
      if (sb[nd - 1] != k) {
        throw DimensionError(std::string(name) + ": inner dims disagree " +
                             shape_str(sa) + " vs " + shape_str(sb));
      }
      break;
    case Gemm::TN:  // [.., k, m] x [.., k, n]
      m = sa[nd - 1];
      k = sa[nd - 2];
      n = sb[nd - 1];
      if (sb[nd - 2] != k) {
        throw DimensionError(std::string(name) + ": inner dims disagree " +
                             shape_str(sa) + " vs " + shape_str(sb));
      }
      break;
  }
  const int64_t batch = prod(sa, 0, nd - 2);
  std::vector<int64_t> out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  Tensor out = Tensor::uninit(out_shape);
  const int64_t stride_a = sa[nd - 2] * sa[nd - 1];
  const int64_t stride_b = sb[nd - 2] * sb[nd - 1];
  const int64_t stride_o = m * n;
  for (int64_t t = 0; t < batch; ++t) {
    run_gemm(kind, a.data() + t * stride_a, b.data() + t * stride_b,
             out.data() + t * stride_o, m, k, n, false);
  }

  record_op(out, name, {a, b},
            [kind, m, k, n, batch, stride_a, stride_b, stride_o](
                const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& ta = o.grad_fn->inputs()[0];
              const Tensor& tb = o.grad_fn->inputs()[1];
              const float* pa = ta.data();
              const float* pb = tb.data();
              float* da = sink.wants(ta) ? sink.buffer(ta) : nullptr;
              float* db = sink.wants(tb) ? sink.buffer(tb) : nullptr;
              for (int64_t t = 0; t < batch; ++t) {
                const float* at = pa + t * stride_a;
                const float* bt = pb + t * stride_b;
                const float* gt = g + t * stride_o;
                switch (kind) {
                  case Gemm::NN:
                    // da = g.b^T ; db = a^T.g
                    if (da) gemm_nt(gt, bt, da + t * stride_a, m, n, k, true);
                    if (db) gemm_tn(at, gt, db + t * stride_b, k, m, n, true);
                    break;
                  case Gemm::NT:
                    // da = g.b ; db = g^T.a
                    if (da) gemm_nn(gt, bt, da + t * stride_a, m, n, k, true);
                    if (db) gemm_tn(gt, at, db + t * stride_b, n, m, k, true);
                    break;
                  case Gemm::TN:
                    // da = b.g^T ; db = a.g
                    if (da) gemm_nt(bt, gt, da + t * stride_a, k, n, m, true);
                    if (db) gemm_nn(at, gt, db + t * stride_b, k, m, n, true);
                    break;
                }
              }
            });
  return out;
}

enum class UnaryKind { Exp, Silu, Softplus, Negate };

Tensor unary(UnaryKind kind, const char* name, const Tensor& a) {
  Tensor out = Tensor::uninit(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const int64_t n = a.numel();
  switch (kind) {
    case UnaryKind::Exp:
      for (int64_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
      break;
    case UnaryKind::Silu:
      for (int64_t i = 0; i < n; ++i) po[i] = kernels::silu_s(pa[i]);
      break;
    case UnaryKind::Softplus:
      for (int64_t i = 0; i < n; ++i) po[i] = kernels::softplus_s(pa[i]);
      break;
    case UnaryKind::Negate:
      for (int64_t i = 0; i < n; ++i) po[i] = -pa[i];
      break;
  }
  record_op(out, name, {a},
            [kind, n](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& ta = o.grad_fn->inputs()[0];
              if (!sink.wants(ta)) return;
              float* da = sink.buffer(ta);
              const float* pa = ta.data();
              const float* py = o.storage->data() + o.offset;
              switch (kind) {
                case UnaryKind::Exp:
                  for (int64_t i = 0; i < n; ++i) da[i] += g[i] * py[i];
                  break;
                case UnaryKind::Silu:
                  for (int64_t i = 0; i < n; ++i) {
                    const float s = kernels::sigmoid_s(pa[i]);
                    da[i] += g[i] * s * (1.0f + pa[i] * (1.0f - s));
                  }
                  break;
                case UnaryKind::Softplus:
                  for (int64_t i = 0; i < n; ++i) {
                    da[i] += g[i] * kernels::sigmoid_s(pa[i]);
                  }
                  break;
                case UnaryKind::Negate:
                  for (int64_t i = 0; i < n; ++i) da[i] -= g[i];
                  break;
              }
            });
  return out;
}

}  // namespace

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b) {
  const size_t nd = std::max(a.size(), b.size());
  std::vector<int64_t> out(nd);
  for (size_t i = 0; i < nd; ++i) {
    const int64_t ad = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int64_t bd = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (ad != bd && ad != 1 && bd != 1) {
      throw DimensionError("shapes not broadcastable: " + shape_str(a) +
                           " vs " + shape_str(b));
    }
    out[i] = std::max(ad, bd);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw DimensionError("matmul expects rank-2 operands");
  }
  return matmul_impl(Gemm::NN, "matmul", a, b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw DimensionError("matmul_nt expects rank-2 operands");
  }
  return matmul_impl(Gemm::NT, "matmul_nt", a, b);
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw DimensionError("matmul_tn expects rank-2 operands");
  }
  return matmul_impl(Gemm::TN, "matmul_tn", a, b);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  return matmul_impl(Gemm::NN, "bmm", a, b);
}
Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  return matmul_impl(Gemm::NT, "bmm_nt", a, b);
}
Tensor bmm_tn(const Tensor& a, const Tensor& b) {
  return matmul_impl(Gemm::TN, "bmm_tn", a, b);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(BinKind::Add, "add", a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(BinKind::Sub, "sub", a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(BinKind::Mul, "mul", a, b);
}

Tensor scale(const Tensor& a, float s) {
  Tensor out = Tensor::uninit(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  record_op(out, "scale", {a},
            [s, n](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& ta = o.grad_fn->inputs()[0];
              if (!sink.wants(ta)) return;
              float* da = sink.buffer(ta);
              for (int64_t i = 0; i < n; ++i) da[i] += g[i] * s;
            });
  return out;
}

Tensor negate(const Tensor& a) { return unary(UnaryKind::Negate, "negate", a); }
Tensor exp(const Tensor& a) { return unary(UnaryKind::Exp, "exp", a); }
Tensor silu(const Tensor& a) { return unary(UnaryKind::Silu, "silu", a); }
Tensor softplus(const Tensor& a) {
  return unary(UnaryKind::Softplus, "softplus", a);
}

Tensor rmsnorm(const Tensor& x, const Tensor& w, float eps) {
  if (w.ndim() != 1 || x.dim(x.ndim() - 1) != w.dim(0)) {
    throw DimensionError("rmsnorm: weight length must equal the last dim of x");
  }
  const int64_t d = w.dim(0);
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::uninit(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    kernels::rmsnorm_row(x.data() + r * d, w.data(), out.data() + r * d, d,
                         eps);
  }
  record_op(out, "rmsnorm", {x, w},
            [d, rows, eps](const TensorImpl& o, const float* g,
                           GradSink& sink) {
              const Tensor& tx = o.grad_fn->inputs()[0];
              const Tensor& tw = o.grad_fn->inputs()[1];
              const float* px = tx.data();
              const float* pw = tw.data();
              float* dx = sink.wants(tx) ? sink.buffer(tx) : nullptr;
              float* dw = sink.wants(tw) ? sink.buffer(tw) : nullptr;
              for (int64_t r = 0; r < rows; ++r) {
                const float* xr = px + r * d;
                const float* gr = g + r * d;
                float ss = 0.0f;
                for (int64_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
                const float inv =
                    1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
                if (dx != nullptr) {
                  float dot = 0.0f;
                  for (int64_t i = 0; i < d; ++i) dot += gr[i] * pw[i] * xr[i];
                  const float coef =
                      inv * inv * inv * dot / static_cast<float>(d);
                  float* dxr = dx + r * d;
                  for (int64_t i = 0; i < d; ++i) {
                    dxr[i] += inv * pw[i] * gr[i] - coef * xr[i];
                  }
                }
                if (dw != nullptr) {
                  for (int64_t i = 0; i < d; ++i) dw[i] += gr[i] * xr[i] * inv;
                }
              }
            });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     float label_smoothing) {
  if (logits.ndim() != 2) {
    throw DimensionError("cross_entropy expects logits of shape [n, V]");
  }
  if (label_smoothing < 0.0f || label_smoothing >= 1.0f) {
    throw RangeError("label_smoothing must lie in [0, 1)");
  }
  const int64_t nr = logits.dim(0);
  const int64_t V = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != nr) {
    throw DimensionError("cross_entropy: one target per logits row required");
  }
  for (int32_t t : targets) {
    if (t < 0 || t >= V) throw IndexError("cross_entropy: target out of range");
  }
  const float* pz = logits.data();
  double total = 0.0;
  for (int64_t r = 0; r < nr; ++r) {
    const float* z = pz + r * V;
    float mx = z[0];
    for (int64_t j = 1; j < V; ++j) mx = std::max(mx, z[j]);
    double se = 0.0, sz = 0.0;
    for (int64_t j = 0; j < V; ++j) {
      se += std::exp(static_cast<double>(z[j] - mx));
      sz += z[j];
    }
    const double lse = static_cast<double>(mx) + std::log(se);
    total += lse - (1.0 - label_smoothing) * z[targets[static_cast<size_t>(r)]] -
             (label_smoothing / static_cast<double>(V)) * sz;
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(nr)));
  record_op(out, "cross_entropy", {logits},
            [targets, label_smoothing, nr, V](const TensorImpl& o,
                                              const float* g, GradSink& sink) {
              const Tensor& tz = o.grad_fn->inputs()[0];
              if (!sink.wants(tz)) return;
              float* dz = sink.buffer(tz);
              const float* pz = tz.data();
              const float gscale = g[0] / static_cast<float>(nr);
              const float uni = label_smoothing / static_cast<float>(V);
              for (int64_t r = 0; r < nr; ++r) {
                const float* z = pz + r * V;
                float* dzr = dz + r * V;
                float mx = z[0];
                for (int64_t j = 1; j < V; ++j) mx = std::max(mx, z[j]);
                float se = 0.0f;
                for (int64_t j = 0; j < V; ++j) se += std::exp(z[j] - mx);
                const float inv = 1.0f / se;
                const int32_t t = targets[static_cast<size_t>(r)];
                for (int64_t j = 0; j < V; ++j) {
                  float q = uni + ((j == t) ? (1.0f - label_smoothing) : 0.0f);
                  dzr[j] += gscale * (std::exp(z[j] - mx) * inv - q);
                }
              }
            });
  return out;
}

Tensor slice(const Tensor& t, int64_t axis, int64_t start, int64_t len) {
  const auto& shape = t.shape();
  if (axis < 0 || axis >= t.ndim()) throw DimensionError("slice: bad axis");
  if (len <= 0 || start < 0 || start + len > shape[static_cast<size_t>(axis)]) {
    throw DimensionError("slice: range out of bounds");
  }
  std::vector<int64_t> out_shape = shape;
  out_shape[static_cast<size_t>(axis)] = len;

  const int64_t inner = prod(shape, static_cast<size_t>(axis) + 1, shape.size());
  const int64_t outer = prod(shape, 0, static_cast<size_t>(axis));
  const int64_t src_axis = shape[static_cast<size_t>(axis)];

  Tensor out;
  if (axis == 0) {
    // Contiguous range of the parent storage: pure view.
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = out_shape;
    impl->storage = t.storage();
    impl->offset = t.offset() + start * inner;
    out = Tensor(std::move(impl));
  } else {
    out = Tensor::uninit(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
      const float* src = t.data() + (o * src_axis + start) * inner;
      float* dst = out.data() + o * len * inner;
      std::memcpy(dst, src, static_cast<size_t>(len * inner) * sizeof(float));
    }
  }
  record_op(out, "slice", {t},
            [start, len, inner, outer, src_axis](const TensorImpl& o,
                                                 const float* g,
                                                 GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              for (int64_t ob = 0; ob < outer; ++ob) {
                float* dst = dt + (ob * src_axis + start) * inner;
                const float* src = g + ob * len * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
              }
            });
  return out;
}

Tensor prefix_slice(const Tensor& t, int64_t axis, int64_t n) {
  if (axis < 0 || axis >= t.ndim()) throw DimensionError("prefix_slice: bad axis");
  if (n <= 0 || n > t.dim(axis)) {
    throw DimensionError("prefix_slice: count out of range");
  }
  return slice(t, axis, 0, n);
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto& first = parts[0].shape();
  if (axis < 0 || axis >= parts[0].ndim()) {
    throw DimensionError("concat: bad axis");
  }
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != parts[0].ndim()) throw DimensionError("concat: rank mismatch");
    for (int64_t i = 0; i < p.ndim(); ++i) {
      if (i != axis && p.dim(i) != first[static_cast<size_t>(i)]) {
        throw DimensionError("concat: shapes differ off-axis");
      }
    }
    axis_total += p.dim(axis);
  }
  std::vector<int64_t> out_shape = first;
  out_shape[static_cast<size_t>(axis)] = axis_total;
  Tensor out = Tensor::uninit(out_shape);

  const int64_t inner = prod(first, static_cast<size_t>(axis) + 1, first.size());
  const int64_t outer = prod(first, 0, static_cast<size_t>(axis));
  std::vector<int64_t> part_axis(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) part_axis[i] = parts[i].dim(axis);

  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const int64_t pa = part_axis[pi];
    const float* src = parts[pi].data();
    for (int64_t o = 0; o < outer; ++o) {
      float* dst = out.data() + (o * axis_total + off) * inner;
      std::memcpy(dst, src + o * pa * inner,
                  static_cast<size_t>(pa * inner) * sizeof(float));
    }
    off += pa;
  }

  record_op(out, "concat", parts,
            [axis_total, inner, outer, part_axis](const TensorImpl& o,
                                                  const float* g,
                                                  GradSink& sink) {
              const auto& ins = o.grad_fn->inputs();
              int64_t off = 0;
              for (size_t pi = 0; pi < ins.size(); ++pi) {
                const int64_t pa = part_axis[pi];
                if (sink.wants(ins[pi])) {
                  float* dp = sink.buffer(ins[pi]);
                  for (int64_t ob = 0; ob < outer; ++ob) {
                    const float* src = g + (ob * axis_total + off) * inner;
                    float* dst = dp + ob * pa * inner;
                    for (int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                  }
                }
                off += pa;
              }
            });
  return out;
}

Tensor reshape(const Tensor& t, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  if (n != t.numel()) {
    throw DimensionError("reshape: element count mismatch " +
                         shape_str(t.shape()) + " -> " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = t.storage();
  impl->offset = t.offset();
  Tensor out(std::move(impl));
  record_op(out, "reshape", {t},
            [n](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              for (int64_t i = 0; i < n; ++i) dt[i] += g[i];
            });
  return out;
}

Tensor permute(const Tensor& t, const std::vector<int64_t>& perm) {
  const auto& shape = t.shape();
  if (static_cast<int64_t>(perm.size()) != t.ndim()) {
    throw DimensionError("permute: rank mismatch");
  }
  std::vector<bool> used(perm.size(), false);
  std::vector<int64_t> out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    const int64_t p = perm[i];
    if (p < 0 || p >= t.ndim() || used[static_cast<size_t>(p)]) {
      throw DimensionError("permute: invalid permutation");
    }
    used[static_cast<size_t>(p)] = true;
    out_shape[i] = shape[static_cast<size_t>(p)];
  }
  Tensor out = Tensor::uninit(out_shape);

  const auto in_strides = row_major_strides(shape);
  std::vector<int64_t> gather(perm.size());  // input stride per out dim
  for (size_t i = 0; i < perm.size(); ++i) {
    gather[i] = in_strides[static_cast<size_t>(perm[i])];
  }
  const int64_t n = t.numel();
  const size_t nd = out_shape.size();
  {
    std::vector<int64_t> ctr(nd, 0);
    int64_t ii = 0;
    const float* src = t.data();
    float* dst = out.data();
    for (int64_t i = 0; i < n; ++i) {
      dst[i] = src[ii];
      for (size_t d = nd; d-- > 0;) {
        if (++ctr[d] < out_shape[d]) {
          ii += gather[d];
          break;
        }
        ctr[d] = 0;
        ii -= gather[d] * (out_shape[d] - 1);
      }
    }
  }
  record_op(out, "permute", {t},
            [out_shape, gather, n](const TensorImpl& o, const float* g,
                                   GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              const size_t nd = out_shape.size();
              std::vector<int64_t> ctr(nd, 0);
              int64_t ii = 0;
              for (int64_t i = 0; i < n; ++i) {
                dt[ii] += g[i];
                for (size_t d = nd; d-- > 0;) {
                  if (++ctr[d] < out_shape[d]) {
                    ii += gather[d];
                    break;
                  }
                  ctr[d] = 0;
                  ii -= gather[d] * (out_shape[d] - 1);
                }
              }
            });
  return out;
}

Tensor cumsum(const Tensor& t, int64_t axis) {
  const auto& shape = t.shape();
  if (axis < 0 || axis >= t.ndim()) throw DimensionError("cumsum: bad axis");
  const int64_t inner = prod(shape, static_cast<size_t>(axis) + 1, shape.size());
  const int64_t outer = prod(shape, 0, static_cast<size_t>(axis));
  const int64_t steps = shape[static_cast<size_t>(axis)];
  Tensor out = Tensor::uninit(shape);
  const float* src = t.data();
  float* dst = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    const int64_t base = o * steps * inner;
    std::memcpy(dst + base, src + base, static_cast<size_t>(inner) * sizeof(float));
    for (int64_t s = 1; s < steps; ++s) {
      const float* prev = dst + base + (s - 1) * inner;
      const float* cur = src + base + s * inner;
      float* row = dst + base + s * inner;
      for (int64_t i = 0; i < inner; ++i) row[i] = prev[i] + cur[i];
    }
  }
  record_op(out, "cumsum", {t},
            [inner, outer, steps](const TensorImpl& o, const float* g,
                                  GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              std::vector<float> run(static_cast<size_t>(inner));
              for (int64_t ob = 0; ob < outer; ++ob) {
                std::fill(run.begin(), run.end(), 0.0f);
                const int64_t base = ob * steps * inner;
                for (int64_t s = steps; s-- > 0;) {
                  const float* gr = g + base + s * inner;
                  float* dr = dt + base + s * inner;
                  for (int64_t i = 0; i < inner; ++i) {
                    run[static_cast<size_t>(i)] += gr[i];
                    dr[i] += run[static_cast<size_t>(i)];
                  }
                }
              }
            });
  return out;
}

Tensor expand(const Tensor& t, const std::vector<int64_t>& shape) {
  // Validate via broadcast rules; the result shape must equal `shape`.
  if (broadcast_shape(t.shape(), shape) != shape) {
    throw DimensionError("expand: cannot broadcast " + shape_str(t.shape()) +
                         " to " + shape_str(shape));
  }
  BcastPlan plan = make_plan(t.shape(), shape);
  Tensor out = Tensor::uninit(shape);
  const float* src = t.data();
  float* dst = out.data();
  for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t) { dst[i] = src[ia]; });
  record_op(out, "expand", {t},
            [plan](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              for_each_pair(plan, [&](int64_t i, int64_t ia, int64_t) {
                dt[ia] += g[i];
              });
            });
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int32_t>& ids) {
  if (table.ndim() != 2) throw DimensionError("embedding: table must be [V, d]");
  const int64_t V = table.dim(0);
  const int64_t d = table.dim(1);
  for (int32_t id : ids) {
    if (id < 0 || id >= V) throw IndexError("embedding: id out of range");
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  Tensor out = Tensor::uninit({n, d});
  for (int64_t r = 0; r < n; ++r) {
    std::memcpy(out.data() + r * d,
                table.data() + static_cast<int64_t>(ids[static_cast<size_t>(r)]) * d,
                static_cast<size_t>(d) * sizeof(float));
  }
  record_op(out, "embedding", {table},
            [ids, d, n](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              for (int64_t r = 0; r < n; ++r) {
                float* row =
                    dt + static_cast<int64_t>(ids[static_cast<size_t>(r)]) * d;
                const float* gr = g + r * d;
                for (int64_t j = 0; j < d; ++j) row[j] += gr[j];
              }
            });
  return out;
}

Tensor sum_all(const Tensor& t) {
  double acc = 0.0;
  const float* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) acc += p[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  record_op(out, "sum_all", {t},
            [n](const TensorImpl& o, const float* g, GradSink& sink) {
              const Tensor& tt = o.grad_fn->inputs()[0];
              if (!sink.wants(tt)) return;
              float* dt = sink.buffer(tt);
              for (int64_t i = 0; i < n; ++i) dt[i] += g[0];
            });
  return out;
}

}  // namespace matmamba
