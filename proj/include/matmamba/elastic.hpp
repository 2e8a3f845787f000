#pragma once

#include <string>
#include <vector>

#include "matmamba/dataset.hpp"
#include "matmamba/model.hpp"

namespace matmamba {

struct SubmodelSpec {
  GranularityConfig gc;
  int64_t est_params = 0;       // embed + non-embed of the extracted model
  double est_flops_ratio = 0.0;  // mean over layers of d_i / d_inner
};

SubmodelSpec make_submodel_spec(const ModelConfig& cfg,
                                const GranularityConfig& gc);

// Per-layer validity report; empty means ok. Never throws on bad values.
std::vector<std::string> validate_gc(const ModelConfig& cfg,
                                     const GranularityConfig& gc);

// Valid per-layer widths (multiples that give whole heads) in [min_m, d_model].
std::vector<int64_t> granularity_lattice(const ModelConfig& cfg, int64_t min_m);

// Random valid per-layer dims with mean d_i/d_inner within 0.05 of
// target_ratio. min_m defaults to the smallest trained granularity.
GranularityConfig sample_gc(const ModelConfig& cfg, double target_ratio,
                            uint64_t seed, int64_t min_m = 0);

// Materializes prefix copies of every sliced parameter; the result loads and
// runs as an ordinary non-nested model whose layer_dims equal gc.
std::pair<ModelConfig, ModelParams> extract_submodel(const ModelConfig& cfg,
                                                     const ModelParams& params,
                                                     const GranularityConfig& gc);

// ---- elastic autoregressive generation ----

struct GenerateOptions {
  int64_t max_new = 0;
  bool greedy = true;
  double temperature = 1.0;
  uint64_t seed = 0;
};

// Graph-free single-sequence decoding session: prompt via full-sequence
// prefill, then constant-memory token stepping.
class LmSession {
 public:
  LmSession(const ModelConfig& cfg, const ModelParams& params,
            const GranularityConfig& gc);

  // Feeds tokens and returns the logits for the final position.
  std::vector<float> prefill(const std::vector<int32_t>& tokens);
  std::vector<float> step(int32_t token);

 private:
  std::vector<float> read_head(const float* h) const;

  const ModelConfig& cfg_;
  const ModelParams& params_;
  std::vector<BlockRt> rts_;
  std::vector<StepState> states_;
};

std::vector<int32_t> generate(const ModelConfig& cfg, const ModelParams& params,
                              const std::vector<int32_t>& prompt,
                              const GranularityConfig& gc,
                              const GenerateOptions& opts);

// ---- pareto sweep ----

struct SweepRow {
  GranularityConfig gc;
  double ratio = 0.0;
  int64_t params = 0;
  double loss = 0.0;
  std::string error;  // non-empty when evaluation failed for this spec
};

// Evaluates each spec on the fixed validation split; rows sorted by ratio.
std::vector<SweepRow> pareto_sweep(const ModelConfig& cfg,
                                   const ModelParams& params,
                                   const TextData& data,
                                   const std::vector<SubmodelSpec>& specs,
                                   int64_t batch_size, int64_t seq_len,
                                   int64_t max_batches);

// ---- adaptive 1-NN retrieval ----

struct RetrievalIndex {
  Tensor embeddings;  // [N, d], L2-normalized rows
  std::vector<int32_t> labels;
  GranularityConfig gc_db;
};

RetrievalIndex build_index(const ModelConfig& cfg, const ModelParams& params,
                           const ImageDataset& images,
                           const GranularityConfig& gc_db,
                           int64_t encode_batch = 16);

struct RetrievalResult {
  std::vector<int64_t> indices;     // nearest database row per query
  std::vector<int32_t> predicted;   // its label
  double agreement_with_full = 0.0;  // fraction matching full-width queries
};

RetrievalResult query_1nn(const RetrievalIndex& index, const ModelConfig& cfg,
                          const ModelParams& params, const ImageDataset& queries,
                          const GranularityConfig& gc_query,
                          int64_t encode_batch = 16);

// Cosine 1-NN with lowest-index tie break over normalized embeddings.
int64_t nearest_row(const Tensor& embeddings, const float* query, int64_t d);

}  // namespace matmamba
