#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "matmamba/block.hpp"

namespace matmamba {

enum class ModelKind { kLm, kVision };

using GranularityConfig = std::vector<int64_t>;

struct ModelConfig {
  ModelKind kind = ModelKind::kLm;
  int64_t n_layers = 0;
  int64_t d_model = 0;

  int64_t vocab_size = 256;  // lm (byte-level default)

  int64_t patch_size = 16;  // vision
  int64_t image_size = 224;
  int64_t channels = 3;
  int64_t num_classes = 1000;

  int64_t expand = 2;
  int64_t d_head = 64;
  int64_t d_state = 128;
  int64_t chunk = 16;

  // Trained granularities (strictly decreasing, first == d_model).
  std::vector<int64_t> granularities;
  // Materialized per-layer width; below d_model for extracted submodels.
  std::vector<int64_t> layer_dims;

  BlockConfig block() const {
    return BlockConfig{d_model, expand, d_head, d_state, 4};
  }
  int64_t patches_per_image() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  int64_t seq_positions() const { return patches_per_image() + 1; }

  // Fill granularities/layer_dims defaults, then validate everything.
  void finalize();
  void validate() const;
};

struct ModelParams {
  Tensor tok_embed;  // lm: [V, d], tied with the output head

  Tensor patch_proj_w;  // vision: [d, patch^2 * channels]
  Tensor patch_proj_b;  // [d]
  Tensor cls_token;     // [d], appended as the last sequence position
  Tensor head_w;        // [num_classes, d]
  Tensor head_b;        // [num_classes]

  Tensor final_norm_w;  // [d]
  std::vector<BlockParams> blocks;
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
  bool decay;  // weight decay applies (2-D projections only)
};

std::vector<NamedParam> named_parameters(const ModelConfig& cfg,
                                         ModelParams& params);
int64_t total_param_elements(const ModelConfig& cfg, ModelParams& params);

ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

void check_granularity_config(const ModelConfig& cfg,
                              const GranularityConfig& gc);

// Embed -> L pre-norm residual blocks at per-layer granularity -> final
// RMSNorm -> tied projection. Strictly causal. tokens has b*l entries.
Tensor lm_forward(const ModelConfig& cfg, const ModelParams& params,
                  const std::vector<int32_t>& tokens, int64_t b, int64_t l,
                  const GranularityConfig& gc);

struct VisionOutput {
  Tensor logits;     // [b, num_classes]
  Tensor cls_embed;  // [b, d], post-final-norm, pre-head
};

// Patchify -> linear embed -> append [CLS] last -> blocks -> readout at the
// final position.
VisionOutput vision_forward(const ModelConfig& cfg, const ModelParams& params,
                            const Tensor& images, const GranularityConfig& gc);

// Raster-order patch extraction: [b, H, W, C] -> [b * patches, patch^2 * C].
Tensor patchify(const Tensor& images, int64_t patch_size);

struct ParamCount {
  int64_t embed = 0;
  int64_t non_embed = 0;
};

ParamCount model_param_count(const ModelConfig& cfg);

GranularityConfig uniform_gc(const ModelConfig& cfg, int64_t m);

// Published base architectures: lm-130m, lm-370m, lm-790m, lm-1.4b,
// vision-35m, vision-135m.
ModelConfig model_preset(const std::string& name);

}  // namespace matmamba
