#include "matmamba/elastic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "matmamba/kernels.hpp"
#include "matmamba/train.hpp"

namespace matmamba {

namespace {

// Config of the standalone model materialized at gc: layer_dims become gc and
// only the trained granularities that still fit every layer are kept.
ModelConfig submodel_config(const ModelConfig& cfg, const GranularityConfig& gc) {
  ModelConfig sub = cfg;
  sub.layer_dims = gc;
  const int64_t min_width = *std::min_element(gc.begin(), gc.end());
  sub.granularities.clear();
  for (int64_t m : cfg.granularities) {
    if (m <= min_width) sub.granularities.push_back(m);
  }
  if (sub.granularities.empty()) sub.granularities.push_back(min_width);
  sub.validate();
  return sub;
}

}  // namespace

SubmodelSpec make_submodel_spec(const ModelConfig& cfg,
                                const GranularityConfig& gc) {
  check_granularity_config(cfg, gc);
  SubmodelSpec spec;
  spec.gc = gc;
  ModelConfig sub = submodel_config(cfg, gc);
  ParamCount pc = model_param_count(sub);
  spec.est_params = pc.embed + pc.non_embed;
  double acc = 0.0;
  for (int64_t m : gc) {
    acc += static_cast<double>(cfg.expand * m) /
           static_cast<double>(cfg.block().d_inner());
  }
  spec.est_flops_ratio = acc / static_cast<double>(gc.size());
  return spec;
}

std::vector<std::string> validate_gc(const ModelConfig& cfg,
                                     const GranularityConfig& gc) {
  std::vector<std::string> violations;
  if (static_cast<int64_t>(gc.size()) != cfg.n_layers) {
    std::ostringstream os;
    os << "length " << gc.size() << " != layer count " << cfg.n_layers;
    violations.push_back(os.str());
    return violations;
  }
  for (size_t i = 0; i < gc.size(); ++i) {
    const int64_t m = gc[i];
    std::ostringstream os;
    if (m <= 0 || m > cfg.d_model) {
      os << "layer " << i << ": m=" << m << " outside (0, " << cfg.d_model
         << "]";
      violations.push_back(os.str());
    } else if ((cfg.expand * m) % cfg.d_head != 0) {
      os << "layer " << i << ": (" << cfg.expand << "*" << m << ") mod "
         << cfg.d_head << " != 0";
      violations.push_back(os.str());
    } else if (m > cfg.layer_dims[i]) {
      os << "layer " << i << ": m=" << m << " exceeds materialized width "
         << cfg.layer_dims[i];
      violations.push_back(os.str());
    }
  }
  return violations;
}

std::vector<int64_t> granularity_lattice(const ModelConfig& cfg,
                                         int64_t min_m) {
  std::vector<int64_t> out;
  for (int64_t m = 1; m <= cfg.d_model; ++m) {
    if ((cfg.expand * m) % cfg.d_head == 0 && m >= min_m) out.push_back(m);
  }
  return out;
}

GranularityConfig sample_gc(const ModelConfig& cfg, double target_ratio,
                            uint64_t seed, int64_t min_m) {
  if (min_m <= 0) min_m = cfg.granularities.back();
  if (target_ratio <= 0.0 || target_ratio > 1.0) {
    throw RangeError("sample_gc: target_ratio must lie in (0, 1]");
  }
  const std::vector<int64_t> lattice = granularity_lattice(cfg, min_m);
  if (lattice.empty()) throw RangeError("sample_gc: empty granularity lattice");
  const double floor_ratio = static_cast<double>(lattice.front()) /
                             static_cast<double>(cfg.d_model);
  if (target_ratio < floor_ratio - 1e-9) {
    std::ostringstream os;
    os << "sample_gc: target ratio " << target_ratio
       << " below the representable floor " << floor_ratio;
    throw RangeError(os.str());
  }
  const size_t L = static_cast<size_t>(cfg.n_layers);
  if (target_ratio == 1.0) return GranularityConfig(L, cfg.d_model);
  if (std::abs(target_ratio - floor_ratio) < 1e-12) {
    return GranularityConfig(L, lattice.front());
  }

  Rng rng(seed);
  std::vector<size_t> pick(L);  // index into the lattice per layer
  for (size_t i = 0; i < L; ++i) {
    pick[i] = static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(lattice.size())));
  }
  auto mean_ratio = [&] {
    double acc = 0.0;
    for (size_t i = 0; i < L; ++i) acc += static_cast<double>(lattice[pick[i]]);
    return acc / (static_cast<double>(L) * static_cast<double>(cfg.d_model));
  };
  // Nudge random layers toward the target until the mean lands in the band.
  for (int64_t guard = 0; guard < 100000; ++guard) {
    const double r = mean_ratio();
    if (std::abs(r - target_ratio) <= 0.05) break;
    const size_t layer = static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(L)));
    if (r > target_ratio && pick[layer] > 0) {
      pick[layer] -= 1;
    } else if (r < target_ratio && pick[layer] + 1 < lattice.size()) {
      pick[layer] += 1;
    }
  }
  if (std::abs(mean_ratio() - target_ratio) > 0.05) {
    throw RangeError("sample_gc: failed to reach the target ratio band");
  }
  GranularityConfig gc(L);
  for (size_t i = 0; i < L; ++i) gc[i] = lattice[pick[i]];
  return gc;
}

namespace {

Tensor copy_rows(const Tensor& src, int64_t rows) {
  std::vector<int64_t> shape = src.shape();
  shape[0] = rows;
  Tensor out = Tensor::zeros(shape, /*requires_grad=*/true);
  const int64_t inner = src.numel() / src.dim(0);
  std::memcpy(out.data(), src.data(),
              static_cast<size_t>(rows * inner) * sizeof(float));
  return out;
}

Tensor copy_full(const Tensor& src) {
  Tensor out = Tensor::zeros(src.shape(), /*requires_grad=*/true);
  std::memcpy(out.data(), src.data(),
              static_cast<size_t>(src.numel()) * sizeof(float));
  return out;
}

}  // namespace

std::pair<ModelConfig, ModelParams> extract_submodel(
    const ModelConfig& cfg, const ModelParams& params,
    const GranularityConfig& gc) {
  check_granularity_config(cfg, gc);
  ModelConfig sub = submodel_config(cfg, gc);

  ModelParams out;
  if (cfg.kind == ModelKind::kLm) {
    out.tok_embed = copy_full(params.tok_embed);
  } else {
    out.patch_proj_w = copy_full(params.patch_proj_w);
    out.patch_proj_b = copy_full(params.patch_proj_b);
    out.cls_token = copy_full(params.cls_token);
    out.head_w = copy_full(params.head_w);
    out.head_b = copy_full(params.head_b);
  }
  out.final_norm_w = copy_full(params.final_norm_w);

  const int64_t n = cfg.d_state;
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    const BlockParams& src = params.blocks[static_cast<size_t>(i)];
    const SliceDims sd = resolve_slice(cfg.block(), gc[static_cast<size_t>(i)]);
    const int64_t d_i_mat = cfg.expand * src.m_mat;
    BlockParams bp;
    bp.m_mat = sd.m;
    bp.w_z = copy_rows(src.w_z, sd.d_i);
    bp.w_x = copy_rows(src.w_x, sd.d_i);
    bp.w_b = copy_full(src.w_b);
    bp.w_c = copy_full(src.w_c);
    bp.w_dt = copy_rows(src.w_dt, sd.h_i);
    bp.dt_bias = copy_rows(src.dt_bias, sd.h_i);
    bp.a_log = copy_rows(src.a_log, sd.h_i);
    bp.d = copy_rows(src.d, sd.h_i);
    bp.w_conv_x = copy_rows(src.w_conv_x, sd.d_i);
    bp.w_conv_bc = copy_full(src.w_conv_bc);
    bp.conv_bias = Tensor::zeros({sd.d_i + 2 * n}, true);
    std::memcpy(bp.conv_bias.data(), src.conv_bias.data(),
                static_cast<size_t>(sd.d_i) * sizeof(float));
    std::memcpy(bp.conv_bias.data() + sd.d_i, src.conv_bias.data() + d_i_mat,
                static_cast<size_t>(2 * n) * sizeof(float));
    bp.inner_norm_w = copy_rows(src.inner_norm_w, sd.d_i);
    bp.pre_norm_w = copy_full(src.pre_norm_w);
    bp.w_out = Tensor::zeros({cfg.d_model, sd.d_i}, true);
    for (int64_t r = 0; r < cfg.d_model; ++r) {
      std::memcpy(bp.w_out.data() + r * sd.d_i, src.w_out.data() + r * d_i_mat,
                  static_cast<size_t>(sd.d_i) * sizeof(float));
    }
    out.blocks.push_back(std::move(bp));
  }
  return {std::move(sub), std::move(out)};
}

// ---- generation ----

LmSession::LmSession(const ModelConfig& cfg, const ModelParams& params,
                     const GranularityConfig& gc)
    : cfg_(cfg), params_(params) {
  if (cfg.kind != ModelKind::kLm) throw StateError("LmSession needs an lm model");
  check_granularity_config(cfg, gc);
  const BlockConfig bc = cfg.block();
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    const BlockParams& bp = params.blocks[static_cast<size_t>(i)];
    rts_.push_back(make_block_rt(bc, bp, gc[static_cast<size_t>(i)]));
    states_.push_back(make_block_state(bc, 1, gc[static_cast<size_t>(i)]));
  }
}

std::vector<float> LmSession::read_head(const float* h) const {
  const int64_t d = cfg_.d_model;
  std::vector<float> normed(static_cast<size_t>(d));
  kernels::rmsnorm_row(h, params_.final_norm_w.data(), normed.data(), d, 1e-5f);
  std::vector<float> logits(static_cast<size_t>(cfg_.vocab_size));
  kernels::gemm_nt(normed.data(), params_.tok_embed.data(), logits.data(), 1,
                   d, cfg_.vocab_size, false);
  return logits;
}

std::vector<float> LmSession::prefill(const std::vector<int32_t>& tokens) {
  if (tokens.empty()) throw StateError("prefill requires at least one token");
  const int64_t l = static_cast<int64_t>(tokens.size());
  const int64_t d = cfg_.d_model;
  std::vector<float> h(static_cast<size_t>(l * d));
  for (int64_t t = 0; t < l; ++t) {
    const int32_t id = tokens[static_cast<size_t>(t)];
    if (id < 0 || id >= cfg_.vocab_size) {
      throw IndexError("prefill: token out of range");
    }
    std::memcpy(h.data() + t * d,
                params_.tok_embed.data() + static_cast<int64_t>(id) * d,
                static_cast<size_t>(d) * sizeof(float));
  }
  std::vector<float> normed(static_cast<size_t>(l * d));
  std::vector<float> block_out(static_cast<size_t>(l * d));
  const BlockConfig bc = cfg_.block();
  for (int64_t i = 0; i < cfg_.n_layers; ++i) {
    const BlockParams& bp = params_.blocks[static_cast<size_t>(i)];
    for (int64_t t = 0; t < l; ++t) {
      kernels::rmsnorm_row(h.data() + t * d, bp.pre_norm_w.data(),
                           normed.data() + t * d, d, 1e-5f);
    }
    block_prefill(bc, bp, rts_[static_cast<size_t>(i)], normed.data(),
                  block_out.data(), 1, l, states_[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < l * d; ++j) h[static_cast<size_t>(j)] += block_out[static_cast<size_t>(j)];
  }
  return read_head(h.data() + (l - 1) * d);
}

std::vector<float> LmSession::step(int32_t token) {
  const int64_t d = cfg_.d_model;
  if (token < 0 || token >= cfg_.vocab_size) {
    throw IndexError("step: token out of range");
  }
  std::vector<float> h(static_cast<size_t>(d));
  std::memcpy(h.data(), params_.tok_embed.data() + static_cast<int64_t>(token) * d,
              static_cast<size_t>(d) * sizeof(float));
  std::vector<float> normed(static_cast<size_t>(d));
  std::vector<float> block_out(static_cast<size_t>(d));
  const BlockConfig bc = cfg_.block();
  for (int64_t i = 0; i < cfg_.n_layers; ++i) {
    const BlockParams& bp = params_.blocks[static_cast<size_t>(i)];
    kernels::rmsnorm_row(h.data(), bp.pre_norm_w.data(), normed.data(), d,
                         1e-5f);
    block_step(bc, bp, rts_[static_cast<size_t>(i)], normed.data(),
               block_out.data(), 1, states_[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < d; ++j) h[static_cast<size_t>(j)] += block_out[static_cast<size_t>(j)];
  }
  return read_head(h.data());
}

namespace {

int32_t select_token(const std::vector<float>& logits,
                     const GenerateOptions& opts, Rng& rng) {
  if (opts.greedy) {
    int32_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[static_cast<size_t>(best)]) {
        best = static_cast<int32_t>(i);
      }
    }
    return best;
  }
  if (opts.temperature <= 0.0) {
    throw RangeError("generate: temperature must be positive");
  }
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> probs(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp((static_cast<double>(logits[i]) - mx) / opts.temperature);
    z += probs[i];
  }
  double u = rng.uniform() * z;
  for (size_t i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u <= 0.0) return static_cast<int32_t>(i);
  }
  return static_cast<int32_t>(probs.size() - 1);
}

}  // namespace

std::vector<int32_t> generate(const ModelConfig& cfg, const ModelParams& params,
                              const std::vector<int32_t>& prompt,
                              const GranularityConfig& gc,
                              const GenerateOptions& opts) {
  std::vector<int32_t> out = prompt;
  if (opts.max_new <= 0) return out;
  if (prompt.empty()) throw StateError("generate: prompt must be non-empty");
  Rng rng(opts.seed);
  LmSession session(cfg, params, gc);
  std::vector<float> logits = session.prefill(prompt);
  for (int64_t i = 0; i < opts.max_new; ++i) {
    const int32_t next = select_token(logits, opts, rng);
    out.push_back(next);
    if (i + 1 < opts.max_new) logits = session.step(next);
  }
  return out;
}

// ---- sweep ----

std::vector<SweepRow> pareto_sweep(const ModelConfig& cfg,
                                   const ModelParams& params,
                                   const TextData& data,
                                   const std::vector<SubmodelSpec>& specs,
                                   int64_t batch_size, int64_t seq_len,
                                   int64_t max_batches) {
  std::vector<SweepRow> rows;
  rows.reserve(specs.size());
  for (const SubmodelSpec& spec : specs) {
    SweepRow row;
    row.gc = spec.gc;
    row.ratio = spec.est_flops_ratio;
    row.params = spec.est_params;
    try {
      row.loss = eval_lm_loss(cfg, params, data, spec.gc, batch_size, seq_len,
                              max_batches);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) {
                     return a.ratio < b.ratio;
                   });
  return rows;
}

// ---- retrieval ----

namespace {

Tensor encode_all(const ModelConfig& cfg, const ModelParams& params,
                  const ImageDataset& images, const GranularityConfig& gc,
                  int64_t encode_batch) {
  if (images.count() == 0) throw StateError("retrieval: empty image set");
  NoGradGuard ng;
  const int64_t N = images.count();
  Tensor out = Tensor::zeros({N, cfg.d_model});
  for (int64_t start = 0; start < N; start += encode_batch) {
    const int64_t b = std::min(encode_batch, N - start);
    std::vector<int64_t> idx(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
    Tensor batch = images.decode(idx, 0.5f, 0.5f);
    VisionOutput vo = vision_forward(cfg, params, batch, gc);
    std::memcpy(out.data() + start * cfg.d_model, vo.cls_embed.data(),
                static_cast<size_t>(b * cfg.d_model) * sizeof(float));
  }
  // L2 normalize rows
  float* p = out.data();
  for (int64_t r = 0; r < N; ++r) {
    float* row = p + r * cfg.d_model;
    double sq = 0.0;
    for (int64_t j = 0; j < cfg.d_model; ++j) sq += static_cast<double>(row[j]) * row[j];
    const float inv = sq > 0.0 ? static_cast<float>(1.0 / std::sqrt(sq)) : 0.0f;
    for (int64_t j = 0; j < cfg.d_model; ++j) row[j] *= inv;
  }
  return out;
}

}  // namespace

int64_t nearest_row(const Tensor& embeddings, const float* query, int64_t d) {
  const int64_t N = embeddings.dim(0);
  const float* p = embeddings.data();
  int64_t best = 0;
  float best_dot = -2.0f;
  for (int64_t r = 0; r < N; ++r) {
    const float* row = p + r * d;
    float dot = 0.0f;
    for (int64_t j = 0; j < d; ++j) dot += row[j] * query[j];
    if (dot > best_dot) {  // strict: ties keep the lowest index
      best_dot = dot;
      best = r;
    }
  }
  return best;
}

RetrievalIndex build_index(const ModelConfig& cfg, const ModelParams& params,
                           const ImageDataset& images,
                           const GranularityConfig& gc_db,
                           int64_t encode_batch) {
  RetrievalIndex index;
  index.embeddings = encode_all(cfg, params, images, gc_db, encode_batch);
  index.labels.assign(images.labels.begin(), images.labels.end());
  index.gc_db = gc_db;
  return index;
}

RetrievalResult query_1nn(const RetrievalIndex& index, const ModelConfig& cfg,
                          const ModelParams& params,
                          const ImageDataset& queries,
                          const GranularityConfig& gc_query,
                          int64_t encode_batch) {
  if (index.embeddings.numel() == 0 || index.labels.empty()) {
    throw StateError("retrieval: empty index");
  }
  const int64_t d = cfg.d_model;
  Tensor q = encode_all(cfg, params, queries, gc_query, encode_batch);
  Tensor q_full = encode_all(cfg, params, queries, cfg.layer_dims, encode_batch);
  RetrievalResult res;
  const int64_t N = q.dim(0);
  res.indices.resize(static_cast<size_t>(N));
  res.predicted.resize(static_cast<size_t>(N));
  int64_t agree = 0;
  for (int64_t i = 0; i < N; ++i) {
    const int64_t hit = nearest_row(index.embeddings, q.data() + i * d, d);
    const int64_t full_hit =
        nearest_row(index.embeddings, q_full.data() + i * d, d);
    res.indices[static_cast<size_t>(i)] = hit;
    res.predicted[static_cast<size_t>(i)] =
        index.labels[static_cast<size_t>(hit)];
    if (hit == full_hit) ++agree;
  }
  res.agreement_with_full =
      static_cast<double>(agree) / static_cast<double>(N);
  return res;
}

}  // namespace matmamba
