#include "matmamba/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace matmamba {

void ModelConfig::finalize() {
  if (granularities.empty()) {
    for (int64_t div = 1; div <= 8; div *= 2) {
      granularities.push_back(d_model / div);
    }
  }
  if (layer_dims.empty()) {
    layer_dims.assign(static_cast<size_t>(n_layers), d_model);
  }
  validate();
}

void ModelConfig::validate() const {
  block().validate();
  if (n_layers <= 0) throw DimensionError("model: n_layers must be positive");
  if (kind == ModelKind::kLm && vocab_size <= 0) {
    throw DimensionError("model: vocab_size must be positive");
  }
  if (kind == ModelKind::kVision) {
    if (patch_size <= 0 || image_size % patch_size != 0) {
      throw DimensionError("model: image_size must divide by patch_size");
    }
    if (channels <= 0 || num_classes <= 0) {
      throw DimensionError("model: channels/num_classes must be positive");
    }
  }
  if (static_cast<int64_t>(layer_dims.size()) != n_layers) {
    throw GranularityError("model: layer_dims must have one entry per layer");
  }
  int64_t min_width = d_model;
  bool universal = true;
  for (int64_t m : layer_dims) {
    resolve_slice(block(), m);
    min_width = std::min(min_width, m);
    if (m != d_model) universal = false;
  }
  if (granularities.empty()) {
    throw GranularityError("model: granularity list must be non-empty");
  }
  // The universal model leads with d_model; materialized submodels carry the
  // trained granularities that still fit every layer.
  if (universal && granularities.front() != d_model) {
    throw GranularityError("model: first granularity must equal d_model");
  }
  for (size_t i = 0; i < granularities.size(); ++i) {
    resolve_slice(block(), granularities[i]);
    if (granularities[i] > min_width) {
      throw GranularityError(
          "model: granularity exceeds the materialized layer width");
    }
    if (i > 0 && granularities[i] >= granularities[i - 1]) {
      throw GranularityError("model: granularities must strictly decrease");
    }
  }
}

std::vector<NamedParam> named_parameters(const ModelConfig& cfg,
                                         ModelParams& params) {
  std::vector<NamedParam> out;
  auto push = [&out](const std::string& name, Tensor* t) {
    out.push_back({name, t, t->ndim() >= 2});
  };
  if (cfg.kind == ModelKind::kLm) {
    push("tok_embed", &params.tok_embed);
  } else {
    push("patch_proj_w", &params.patch_proj_w);
    push("patch_proj_b", &params.patch_proj_b);
    push("cls_token", &params.cls_token);
  }
  for (size_t i = 0; i < params.blocks.size(); ++i) {
    for (auto& [name, t] : block_named_params(params.blocks[i])) {
      push("blocks." + std::to_string(i) + "." + name, t);
    }
  }
  push("final_norm_w", &params.final_norm_w);
  if (cfg.kind == ModelKind::kVision) {
    push("head_w", &params.head_w);
    push("head_b", &params.head_b);
  }
  return out;
}

int64_t total_param_elements(const ModelConfig& cfg, ModelParams& params) {
  int64_t total = 0;
  for (const NamedParam& p : named_parameters(cfg, params)) {
    total += p.tensor->numel();
  }
  return total;
}

namespace {

void fill_normal(Tensor& t, Rng& rng, float stddev) {
  float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.normal_trunc(stddev);
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams params;
  if (cfg.kind == ModelKind::kLm) {
    params.tok_embed =
        Tensor::zeros({cfg.vocab_size, cfg.d_model}, /*requires_grad=*/true);
    fill_normal(params.tok_embed, rng, 0.02f);
  } else {
    const int64_t psq = cfg.patch_size * cfg.patch_size * cfg.channels;
    params.patch_proj_w = Tensor::zeros({cfg.d_model, psq}, true);
    fill_normal(params.patch_proj_w, rng, 0.02f);
    params.patch_proj_b = Tensor::zeros({cfg.d_model}, true);
    params.cls_token = Tensor::zeros({cfg.d_model}, true);
    fill_normal(params.cls_token, rng, 0.02f);
  }
  params.blocks.reserve(static_cast<size_t>(cfg.n_layers));
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    params.blocks.push_back(
        init_block(cfg.block(), cfg.layer_dims[static_cast<size_t>(i)], rng));
  }
  params.final_norm_w = Tensor::full({cfg.d_model}, 1.0f);
  params.final_norm_w.set_requires_grad(true);
  if (cfg.kind == ModelKind::kVision) {
    params.head_w = Tensor::zeros({cfg.num_classes, cfg.d_model}, true);
    fill_normal(params.head_w, rng, 0.02f);
    params.head_b = Tensor::zeros({cfg.num_classes}, true);
  }
  return params;
}

void check_granularity_config(const ModelConfig& cfg,
                              const GranularityConfig& gc) {
  if (static_cast<int64_t>(gc.size()) != cfg.n_layers) {
    std::ostringstream os;
    os << "granularity config has " << gc.size() << " entries, model has "
       << cfg.n_layers << " layers";
    throw GranularityError(os.str());
  }
  for (size_t i = 0; i < gc.size(); ++i) {
    resolve_slice(cfg.block(), gc[i]);
    if (gc[i] > cfg.layer_dims[i]) {
      std::ostringstream os;
      os << "layer " << i << ": granularity " << gc[i]
         << " exceeds materialized width " << cfg.layer_dims[i];
      throw GranularityError(os.str());
    }
  }
}

namespace {

Tensor run_stack(const ModelConfig& cfg, const ModelParams& params, Tensor h,
                 const GranularityConfig& gc) {
  const BlockConfig bc = cfg.block();
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    const BlockParams& bp = params.blocks[static_cast<size_t>(i)];
    Tensor normed = rmsnorm(h, bp.pre_norm_w);
    h = add(h, block_forward(bc, bp, normed, gc[static_cast<size_t>(i)],
                             cfg.chunk));
  }
  return h;
}

}  // namespace

Tensor lm_forward(const ModelConfig& cfg, const ModelParams& params,
                  const std::vector<int32_t>& tokens, int64_t b, int64_t l,
                  const GranularityConfig& gc) {
  if (cfg.kind != ModelKind::kLm) throw StateError("lm_forward on a vision model");
  check_granularity_config(cfg, gc);
  if (static_cast<int64_t>(tokens.size()) != b * l) {
    throw DimensionError("lm_forward: tokens must hold b*l entries");
  }
  Tensor h = reshape(embedding(params.tok_embed, tokens), {b, l, cfg.d_model});
  h = run_stack(cfg, params, h, gc);
  Tensor hn = rmsnorm(h, params.final_norm_w);
  Tensor logits =
      matmul_nt(reshape(hn, {b * l, cfg.d_model}), params.tok_embed);
  return reshape(logits, {b, l, cfg.vocab_size});
}

Tensor patchify(const Tensor& images, int64_t patch_size) {
  if (images.ndim() != 4) {
    throw DimensionError("patchify: images must be [b, H, W, C]");
  }
  const int64_t b = images.dim(0), H = images.dim(1), W = images.dim(2),
                C = images.dim(3);
  if (H % patch_size != 0 || W % patch_size != 0) {
    throw DimensionError("patchify: H and W must divide by patch_size");
  }
  const int64_t gh = H / patch_size, gw = W / patch_size;
  const int64_t np = gh * gw;
  const int64_t psq = patch_size * patch_size * C;
  Tensor out = Tensor::zeros({b * np, psq});
  const float* src = images.data();
  float* dst = out.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t gy = 0; gy < gh; ++gy) {
      for (int64_t gx = 0; gx < gw; ++gx) {
        float* prow = dst + ((bi * np) + gy * gw + gx) * psq;
        for (int64_t py = 0; py < patch_size; ++py) {
          const int64_t y = gy * patch_size + py;
          const float* irow =
              src + ((bi * H + y) * W + gx * patch_size) * C;
          std::copy(irow, irow + patch_size * C,
                    prow + py * patch_size * C);
        }
      }
    }
  }
  return out;
}

VisionOutput vision_forward(const ModelConfig& cfg, const ModelParams& params,
                            const Tensor& images, const GranularityConfig& gc) {
  if (cfg.kind != ModelKind::kVision) {
    throw StateError("vision_forward on an lm model");
  }
  check_granularity_config(cfg, gc);
  const int64_t b = images.dim(0);
  const int64_t np = cfg.patches_per_image();
  if (images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.channels) {
    throw DimensionError("vision_forward: image shape mismatch");
  }
  Tensor patches = patchify(images, cfg.patch_size);  // [b*np, psq]
  Tensor emb = add(matmul_nt(patches, params.patch_proj_w),
                   params.patch_proj_b);  // [b*np, d]
  Tensor seq = reshape(emb, {b, np, cfg.d_model});
  Tensor cls = expand(reshape(params.cls_token, {1, 1, cfg.d_model}),
                      {b, 1, cfg.d_model});
  Tensor h = concat({seq, cls}, 1);  // [CLS] is the final position
  h = run_stack(cfg, params, h, gc);
  Tensor last = reshape(slice(h, 1, np, 1), {b, cfg.d_model});
  Tensor cls_embed = rmsnorm(last, params.final_norm_w);
  Tensor logits = add(matmul_nt(cls_embed, params.head_w), params.head_b);
  return {logits, cls_embed};
}

ParamCount model_param_count(const ModelConfig& cfg) {
  cfg.validate();
  ParamCount pc;
  const BlockConfig bc = cfg.block();
  if (cfg.kind == ModelKind::kLm) {
    pc.embed = cfg.vocab_size * cfg.d_model;
  } else {
    pc.embed = cfg.patch_size * cfg.patch_size * cfg.channels * cfg.d_model +
               cfg.d_model;
  }
  for (int64_t m : cfg.layer_dims) {
    pc.non_embed += block_param_count_physical(bc, m);
  }
  pc.non_embed += cfg.d_model;  // final norm
  if (cfg.kind == ModelKind::kVision) {
    pc.non_embed += cfg.d_model;                           // cls token
    pc.non_embed += cfg.num_classes * cfg.d_model + cfg.num_classes;  // head
  }
  return pc;
}

GranularityConfig uniform_gc(const ModelConfig& cfg, int64_t m) {
  return GranularityConfig(static_cast<size_t>(cfg.n_layers), m);
}

ModelConfig model_preset(const std::string& name) {
  ModelConfig cfg;
  if (name == "lm-130m") {
    cfg.kind = ModelKind::kLm;
    cfg.n_layers = 24;
    cfg.d_model = 768;
    cfg.vocab_size = 50280;
  } else if (name == "lm-370m") {
    cfg.kind = ModelKind::kLm;
    cfg.n_layers = 48;
    cfg.d_model = 1024;
    cfg.vocab_size = 50280;
  } else if (name == "lm-790m") {
    cfg.kind = ModelKind::kLm;
    cfg.n_layers = 48;
    cfg.d_model = 1536;
    cfg.vocab_size = 50280;
  } else if (name == "lm-1.4b") {
    cfg.kind = ModelKind::kLm;
    cfg.n_layers = 48;
    cfg.d_model = 2048;
    cfg.vocab_size = 50280;
  } else if (name == "vision-35m") {
    cfg.kind = ModelKind::kVision;
    cfg.n_layers = 20;
    cfg.d_model = 512;
  } else if (name == "vision-135m") {
    cfg.kind = ModelKind::kVision;
    cfg.n_layers = 20;
    cfg.d_model = 1024;
  } else {
    throw SchemaError("unknown preset: " + name);
  }
  cfg.finalize();
  return cfg;
}

}  // namespace matmamba
