#include "matmamba/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace matmamba {

void TrainConfig::finalize() {
  if (g <= 0) throw RangeError("train: g must be positive");
  if (lambdas.empty()) {
    lambdas.assign(static_cast<size_t>(g), 1.0 / static_cast<double>(g));
  }
  if (static_cast<int64_t>(lambdas.size()) != g) {
    throw RangeError("train: need one lambda per granularity");
  }
  for (double l : lambdas) {
    if (l < 0.0) throw RangeError("train: lambdas must be non-negative");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw RangeError("train: label_smoothing must lie in [0, 1)");
  }
  if (total_steps <= 0 || warmup_steps < 0 || warmup_steps > total_steps) {
    throw RangeError("train: bad step counts");
  }
}

OptimizerState OptimizerState::make(const std::vector<NamedParam>& params) {
  OptimizerState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const NamedParam& p : params) {
    // Moments always mirror the full universal buffers, never a slice.
    st.m.emplace_back(static_cast<size_t>(p.tensor->numel()), 0.0f);
    st.v.emplace_back(static_cast<size_t>(p.tensor->numel()), 0.0f);
  }
  return st;
}

double lr_schedule(int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw RangeError("lr_schedule: step outside [0, total_steps]");
  }
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  const double min_lr = cfg.lr / 10.0;
  const int64_t span = cfg.total_steps - cfg.warmup_steps;
  if (span == 0) return cfg.lr;
  const double t =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
  return min_lr + (cfg.lr - min_lr) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

double clip_gradients(const std::vector<NamedParam>& params, double max_norm) {
  if (max_norm <= 0.0) throw RangeError("clip_gradients: max_norm must be > 0");
  double sq = 0.0;
  for (const NamedParam& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (float g : p.tensor->grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scl = max_norm / norm;
  for (const NamedParam& p : params) {
    if (!p.tensor->has_grad()) continue;
    float* g = p.tensor->grad_data();
    const int64_t n = p.tensor->numel();
    for (int64_t i = 0; i < n; ++i) g[i] = static_cast<float>(g[i] * scl);
  }
  return scl;
}

void adamw_update(const std::vector<NamedParam>& params, OptimizerState& opt,
                  double lr_t, const TrainConfig& cfg) {
  if (opt.m.size() != params.size()) {
    throw StateError("optimizer state does not match parameter list");
  }
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].tensor;
    const int64_t n = t.numel();
    float* w = t.data();
    const bool has_grad = t.has_grad();
    const float* g = has_grad ? t.grad_data() : nullptr;
    float* m = opt.m[pi].data();
    float* v = opt.v[pi].data();
    const bool decay = params[pi].decay && cfg.weight_decay > 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      double wi = static_cast<double>(w[i]);
      wi -= lr_t * mhat / (std::sqrt(vhat) + cfg.eps);
      if (decay) wi -= lr_t * cfg.weight_decay * static_cast<double>(w[i]);
      w[i] = static_cast<float>(wi);
    }
  }
}

StepResult joint_loss_step(
    const ModelConfig& cfg, ModelParams& params,
    const std::function<Tensor(const GranularityConfig&)>& loss_fn,
    const TrainConfig& tcfg, OptimizerState& opt) {
  if (tcfg.g > static_cast<int64_t>(cfg.granularities.size())) {
    throw RangeError("train: g exceeds the model's granularity list");
  }
  StepResult res;
  res.losses.reserve(static_cast<size_t>(tcfg.g));
  for (int64_t i = 0; i < tcfg.g; ++i) {
    const int64_t m = cfg.granularities[static_cast<size_t>(i)];
    Tensor loss;
    try {
      loss = loss_fn(uniform_gc(cfg, m));
    } catch (const NumericError& e) {
      std::ostringstream os;
      os << e.what() << " (granularity m=" << m << ")";
      throw NumericError(os.str());
    }
    const double lv = loss.item();
    if (!std::isfinite(lv)) {
      std::ostringstream os;
      os << "non-finite loss at granularity m=" << m;
      throw NumericError(os.str());
    }
    backward(loss, static_cast<float>(tcfg.lambdas[static_cast<size_t>(i)]));
    res.losses.push_back(lv);
    res.joint += tcfg.lambdas[static_cast<size_t>(i)] * lv;
  }
  auto named = named_parameters(cfg, params);
  clip_gradients(named, tcfg.grad_clip);
  const double lr_t = lr_schedule(opt.step, tcfg);
  adamw_update(named, opt, lr_t, tcfg);
  for (const NamedParam& p : named) p.tensor->zero_grad();
  return res;
}

double eval_lm_loss(const ModelConfig& cfg, const ModelParams& params,
                    const TextData& data, const GranularityConfig& gc,
                    int64_t batch_size, int64_t seq_len, int64_t max_batches,
                    double label_smoothing) {
  NoGradGuard ng;
  double total = 0.0;
  int64_t n = 0;
  LmBatch batch;
  for (int64_t k = 0; k < max_batches; ++k) {
    if (!data.val_batch(k, batch_size, seq_len, &batch)) break;
    Tensor logits =
        lm_forward(cfg, params, batch.inputs, batch.b, batch.l, gc);
    Tensor loss = cross_entropy(reshape(logits, {batch.b * batch.l, cfg.vocab_size}),
                                batch.targets,
                                static_cast<float>(label_smoothing));
    total += loss.item();
    n += 1;
  }
  if (n == 0) throw StateError("eval_lm_loss: validation split has no batches");
  return total / static_cast<double>(n);
}

namespace {

std::vector<double> val_all_granularities(const ModelConfig& cfg,
                                          const ModelParams& params,
                                          const TextData& data,
                                          const TrainConfig& tcfg) {
  std::vector<double> out;
  for (int64_t i = 0; i < tcfg.g; ++i) {
    const int64_t m = cfg.granularities[static_cast<size_t>(i)];
    out.push_back(eval_lm_loss(cfg, params, data, uniform_gc(cfg, m),
                               tcfg.batch_size, tcfg.seq_len, tcfg.val_batches,
                               tcfg.label_smoothing));
  }
  return out;
}

}  // namespace

TrainReport train_lm(const ModelConfig& cfg, ModelParams& params,
                     const TextData& data, const TrainConfig& tcfg_in,
                     MetricsSink& sink,
                     const std::function<void(int64_t)>& save_ckpt) {
  TrainConfig tcfg = tcfg_in;
  tcfg.finalize();
  Rng rng(tcfg.seed);
  auto named = named_parameters(cfg, params);
  OptimizerState opt = OptimizerState::make(named);

  TrainReport report;
  report.initial_val = val_all_granularities(cfg, params, data, tcfg);
  sink.on_val({0, report.initial_val});

  for (int64_t step = 0; step < tcfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    LmBatch batch = data.sample_train(rng, tcfg.batch_size, tcfg.seq_len);
    const double lr_t = lr_schedule(opt.step, tcfg);
    StepResult res = joint_loss_step(
        cfg, params,
        [&](const GranularityConfig& gc) {
          Tensor logits =
              lm_forward(cfg, params, batch.inputs, batch.b, batch.l, gc);
          return cross_entropy(
              reshape(logits, {batch.b * batch.l, cfg.vocab_size}),
              batch.targets, static_cast<float>(tcfg.label_smoothing));
        },
        tcfg, opt);
    const auto t1 = std::chrono::steady_clock::now();
    const double wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    sink.on_step({step, lr_t, res.losses, wall_ms});
    report.steps_run = step + 1;

    const bool last = step + 1 == tcfg.total_steps;
    if (tcfg.val_every > 0 && ((step + 1) % tcfg.val_every == 0 || last)) {
      report.final_val = val_all_granularities(cfg, params, data, tcfg);
      sink.on_val({step + 1, report.final_val});
    }
    if (save_ckpt &&
        (last || (tcfg.checkpoint_every > 0 &&
                  (step + 1) % tcfg.checkpoint_every == 0))) {
      save_ckpt(step + 1);
    }
  }
  if (report.final_val.empty()) {
    report.final_val = val_all_granularities(cfg, params, data, tcfg);
    sink.on_val({tcfg.total_steps, report.final_val});
  }
  return report;
}

TrainReport train_vision(const ModelConfig& cfg, ModelParams& params,
                         const ImageDataset& data, const TrainConfig& tcfg_in,
                         MetricsSink& sink) {
  TrainConfig tcfg = tcfg_in;
  tcfg.finalize();
  Rng rng(tcfg.seed);
  auto named = named_parameters(cfg, params);
  OptimizerState opt = OptimizerState::make(named);

  TrainReport report;
  for (int64_t step = 0; step < tcfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int64_t> idx(static_cast<size_t>(tcfg.batch_size));
    std::vector<int32_t> labels(static_cast<size_t>(tcfg.batch_size));
    for (int64_t i = 0; i < tcfg.batch_size; ++i) {
      idx[static_cast<size_t>(i)] = rng.uniform_int(data.count());
      labels[static_cast<size_t>(i)] =
          data.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    }
    Tensor images = data.decode(idx, 0.5f, 0.5f);
    const double lr_t = lr_schedule(opt.step, tcfg);
    StepResult res = joint_loss_step(
        cfg, params,
        [&](const GranularityConfig& gc) {
          VisionOutput out = vision_forward(cfg, params, images, gc);
          return cross_entropy(out.logits, labels,
                               static_cast<float>(tcfg.label_smoothing));
        },
        tcfg, opt);
    const auto t1 = std::chrono::steady_clock::now();
    sink.on_step({step, lr_t, res.losses,
                  std::chrono::duration<double, std::milli>(t1 - t0).count()});
    report.steps_run = step + 1;
  }
  return report;
}

}  // namespace matmamba
