#pragma once

#include <functional>
#include <string>
#include <vector>

#include "matmamba/dataset.hpp"
#include "matmamba/model.hpp"

namespace matmamba {

struct TrainConfig {
  int64_t g = 4;               // granularity count; uses the model's first g
  std::vector<double> lambdas;  // per-granularity loss weights, default 1/g
  double lr = 3e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  int64_t warmup_steps = 100;
  int64_t total_steps = 1000;
  double grad_clip = 1.0;
  int64_t batch_size = 16;
  int64_t seq_len = 256;
  double label_smoothing = 0.0;
  uint64_t seed = 0;
  int64_t val_every = 200;   // 0 disables periodic validation
  int64_t val_batches = 8;
  int64_t checkpoint_every = 0;  // 0 = only at the end

  void finalize();  // materialize lambda defaults, check invariants
};

struct OptimizerState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;

  static OptimizerState make(const std::vector<NamedParam>& params);
  int64_t buffer_count() const {
    return static_cast<int64_t>(m.size() + v.size());
  }
};

// Linear warmup from 0 to lr, then cosine decay to lr/10 at total_steps.
double lr_schedule(int64_t step, const TrainConfig& cfg);

// Global L2-norm clip across every gradient; returns the scale applied.
double clip_gradients(const std::vector<NamedParam>& params, double max_norm);

// Decoupled AdamW with bias correction; decay only where NamedParam::decay.
void adamw_update(const std::vector<NamedParam>& params, OptimizerState& opt,
                  double lr_t, const TrainConfig& cfg);

struct StepResult {
  std::vector<double> losses;  // one per trained granularity
  double joint = 0.0;
};

// g forward passes (uniform granularity each), backward of lambda_i * L_i
// accumulating into the shared gradient buffers, then one clipped optimizer
// update; gradients are zeroed afterwards.
StepResult joint_loss_step(const ModelConfig& cfg, ModelParams& params,
                           const std::function<Tensor(const GranularityConfig&)>& loss_fn,
                           const TrainConfig& tcfg, OptimizerState& opt);

struct StepRecord {
  int64_t step = 0;
  double lr = 0.0;
  std::vector<double> losses;
  double wall_ms = 0.0;
};

struct ValRecord {
  int64_t step = 0;
  std::vector<double> losses;  // one per trained granularity
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void on_step(const StepRecord&) {}
  virtual void on_val(const ValRecord&) {}
};

struct TrainReport {
  std::vector<double> initial_val;  // per granularity, before step 0
  std::vector<double> final_val;
  int64_t steps_run = 0;
};

// Deterministic training driver for the byte-level LM. Writes checkpoints
// through `save_ckpt` when provided (last good checkpoint is retained if a
// later step diverges: the exception propagates after sink flushing).
TrainReport train_lm(const ModelConfig& cfg, ModelParams& params,
                     const TextData& data, const TrainConfig& tcfg,
                     MetricsSink& sink,
                     const std::function<void(int64_t)>& save_ckpt = {});

// Image-classification variant of the same loop.
TrainReport train_vision(const ModelConfig& cfg, ModelParams& params,
                         const ImageDataset& data, const TrainConfig& tcfg,
                         MetricsSink& sink);

// Mean cross-entropy over the LM validation region at granularity gc.
double eval_lm_loss(const ModelConfig& cfg, const ModelParams& params,
                    const TextData& data, const GranularityConfig& gc,
                    int64_t batch_size, int64_t seq_len, int64_t max_batches,
                    double label_smoothing = 0.0);

}  // namespace matmamba
