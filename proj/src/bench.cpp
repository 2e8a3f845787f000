#include "matmamba/bench.hpp"

#include <algorithm>
#include <chrono>

namespace matmamba {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> run_bench(const ModelConfig& cfg,
                                const ModelParams& params,
                                const std::vector<int64_t>& granularities,
                                const std::vector<int64_t>& seq_lens,
                                int64_t batch, int64_t runs, uint64_t seed) {
  if (runs < 1) throw RangeError("bench: need at least one timed run");
  NoGradGuard ng;
  Rng rng(seed);
  std::vector<BenchRow> rows;
  for (int64_t m : granularities) {
    const GranularityConfig gc = uniform_gc(cfg, m);
    check_granularity_config(cfg, gc);
    for (int64_t sl : seq_lens) {
      std::vector<int32_t> tokens(static_cast<size_t>(batch * sl));
      for (auto& t : tokens) {
        t = static_cast<int32_t>(rng.uniform_int(cfg.vocab_size));
      }
      auto forward = [&] {
        if (cfg.kind == ModelKind::kLm) {
          (void)lm_forward(cfg, params, tokens, batch, sl, gc);
        } else {
          Tensor imgs = Tensor::zeros(
              {batch, cfg.image_size, cfg.image_size, cfg.channels});
          (void)vision_forward(cfg, params, imgs, gc);
        }
      };
      forward();  // warmup, not timed
      Storage::reset_peak();
      std::vector<double> times;
      times.reserve(static_cast<size_t>(runs));
      for (int64_t r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        forward();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
      }
      BenchRow row;
      row.m = m;
      row.seq_len = sl;
      const double med = median(times);
      const double items = cfg.kind == ModelKind::kLm
                               ? static_cast<double>(batch * sl)
                               : static_cast<double>(batch);
      row.items_per_sec = med > 0.0 ? items / med : 0.0;
      row.peak_bytes = Storage::peak_bytes();
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace matmamba
